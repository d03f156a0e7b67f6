//! Transformed-scale Fay–Herriot model: GLS regression, profile restricted
//! likelihood, REML and adjusted-REML variance-component estimation, and the
//! EBLUP on the transformed scale.
//!
//! The working model is `z_i = x_i'β + u_i + e_i` with `u_i ~ N(0, A)` and
//! `e_i ~ N(0, D_i)`, `D_i` known.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::brent_min;

/// One area-level record.
#[derive(Debug, Clone)]
pub struct AreaObservation {
    pub area_id: String,
    /// Survey-weighted direct estimate on the original scale.
    pub y_direct: f64,
    /// Transformed direct estimate `g(y_direct)` (after any boundary clamp).
    pub z: f64,
    /// Known sampling variance on the transformed scale.
    pub d: f64,
    /// Covariate vector (including the intercept column if used).
    pub x: Vec<f64>,
    /// Sum of squared normalized unit weights.
    pub sum_w2: f64,
    /// Area sample size.
    pub n: usize,
    /// Median unit weight, used by the Yates interval correction.
    pub w_median: f64,
}

/// Maximum leverage multiple of `p/m` tolerated before a warning is issued.
pub const DEFAULT_LEVERAGE_RATIO: f64 = 4.0;

/// An immutable, validated collection of area observations.
#[derive(Debug, Clone)]
pub struct AreaDataset {
    observations: Vec<AreaObservation>,
    x: DMatrix<f64>,
    z: DVector<f64>,
    warnings: Vec<String>,
}

impl AreaDataset {
    pub fn new(observations: Vec<AreaObservation>) -> Result<Self> {
        Self::with_leverage_ratio(observations, DEFAULT_LEVERAGE_RATIO)
    }

    /// Build a dataset, checking invariants. Rank deficiency is an error;
    /// the leverage condition (`max_i x_i'(X'X)⁻¹x_i ≤ ρ·p/m`) only
    /// produces a warning since it is an asymptotic requirement.
    pub fn with_leverage_ratio(
        observations: Vec<AreaObservation>,
        leverage_ratio: f64,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::input("dataset has no observations"));
        }
        let m = observations.len();
        let p = observations[0].x.len();
        if p == 0 {
            return Err(Error::input("observations carry no covariates"));
        }

        let mut seen = std::collections::HashSet::new();
        for (i, obs) in observations.iter().enumerate() {
            if obs.x.len() != p {
                return Err(Error::input(format!(
                    "row {i} ({}): covariate length {} != {p}",
                    obs.area_id,
                    obs.x.len()
                )));
            }
            if !(obs.d > 0.0) || !obs.d.is_finite() {
                return Err(Error::domain(
                    format!("row {i} ({}): D", obs.area_id),
                    obs.d,
                    "(0, inf)",
                ));
            }
            if !(obs.sum_w2 > 0.0 && obs.sum_w2 <= 1.0) {
                return Err(Error::domain(
                    format!("row {i} ({}): sum_w2", obs.area_id),
                    obs.sum_w2,
                    "(0, 1]",
                ));
            }
            if obs.n == 0 {
                return Err(Error::input(format!(
                    "row {i} ({}): sample size must be >= 1",
                    obs.area_id
                )));
            }
            if !obs.z.is_finite() || !obs.y_direct.is_finite() {
                return Err(Error::input(format!(
                    "row {i} ({}): non-finite direct estimate",
                    obs.area_id
                )));
            }
            if !seen.insert(obs.area_id.clone()) {
                return Err(Error::input(format!(
                    "duplicate area_id '{}' at row {i}",
                    obs.area_id
                )));
            }
        }

        let x = DMatrix::from_fn(m, p, |i, j| observations[i].x[j]);
        let z = DVector::from_fn(m, |i, _| observations[i].z);

        let dependent = dependent_columns(&x);
        if !dependent.is_empty() {
            return Err(Error::RankDeficient { columns: dependent });
        }

        let mut warnings = Vec::new();
        // D_i is expected to scale like 1/n_i; a huge spread of D_i*n_i
        // suggests mis-scaled sampling variances. Asymptotic condition, so
        // only a warning.
        let dn: Vec<f64> = observations.iter().map(|o| o.d * o.n as f64).collect();
        let (dn_min, dn_max) = dn
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if dn_max > 100.0 * dn_min {
            warnings.push(format!(
                "sampling variances do not scale like 1/n: D*n ranges from {dn_min:.4} to {dn_max:.4}"
            ));
        }
        if m > p {
            let xtx = x.transpose() * &x;
            if let Some(chol) = xtx.clone().cholesky() {
                let max_leverage = (0..m)
                    .map(|i| {
                        let xi = x.row(i).transpose();
                        let sol = chol.solve(&xi);
                        xi.dot(&sol)
                    })
                    .fold(0.0f64, f64::max);
                let bound = leverage_ratio * p as f64 / m as f64;
                if max_leverage > bound {
                    warnings.push(format!(
                        "max leverage {max_leverage:.4} exceeds {leverage_ratio} * p/m = {bound:.4}"
                    ));
                }
            }
        }

        Ok(AreaDataset {
            observations,
            x,
            z,
            warnings,
        })
    }

    pub fn m(&self) -> usize {
        self.observations.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn observations(&self) -> &[AreaObservation] {
        &self.observations
    }

    pub fn obs(&self, i: usize) -> &AreaObservation {
        &self.observations[i]
    }

    pub fn design_matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z_vector(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// A copy of this dataset with the transformed responses replaced
    /// (used by the parametric bootstrap; X, D and metadata are shared).
    pub fn with_replaced_z(&self, new_z: &[f64]) -> AreaDataset {
        assert_eq!(new_z.len(), self.m());
        let mut observations = self.observations.clone();
        for (obs, &z) in observations.iter_mut().zip(new_z) {
            obs.z = z;
        }
        AreaDataset {
            observations,
            x: self.x.clone(),
            z: DVector::from_column_slice(new_z),
            warnings: Vec::new(),
        }
    }

    fn sample_variance_z(&self) -> f64 {
        let m = self.m();
        if m < 2 {
            return 0.0;
        }
        let mean = self.z.iter().sum::<f64>() / m as f64;
        self.z.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64
    }
}

/// Modified Gram–Schmidt scan for (near-)linearly dependent columns.
fn dependent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let (m, p) = (x.nrows(), x.ncols());
    let tol = 1e-10;
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut offending = Vec::new();
    for j in 0..p {
        let mut col = DVector::from_fn(m, |i, _| x[(i, j)]);
        let orig_norm = col.norm();
        if orig_norm == 0.0 {
            offending.push(j);
            continue;
        }
        for q in &basis {
            let proj = q.dot(&col);
            col -= q * proj;
        }
        let resid = col.norm();
        if resid <= tol * orig_norm {
            offending.push(j);
        } else {
            basis.push(col / resid);
        }
    }
    offending
}

/// Variance-component estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarianceMethod {
    /// Restricted maximum likelihood, truncated at zero.
    Reml,
    /// Yoshimori–Lahiri adjusted REML: multiplies the restricted likelihood
    /// by `h(A) = [arctan(Σ_i A/(A+D_i))]^(1/m)`; strictly positive.
    YoshimoriLahiri,
    /// Li–Lahiri adjusted REML: multiplies by `h(A) = A`; strictly positive.
    LiLahiri,
}

impl VarianceMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            VarianceMethod::Reml => "REML",
            VarianceMethod::YoshimoriLahiri => "YL",
            VarianceMethod::LiLahiri => "LL",
        }
    }
}

impl std::str::FromStr for VarianceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "REML" | "RE" => Ok(VarianceMethod::Reml),
            "YL" => Ok(VarianceMethod::YoshimoriLahiri),
            "LL" => Ok(VarianceMethod::LiLahiri),
            other => Err(Error::input(format!(
                "unknown variance method '{other}' (expected REML, YL or LL)"
            ))),
        }
    }
}

impl std::fmt::Display for VarianceMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// A fitted transformed-scale model.
#[derive(Debug, Clone, Serialize)]
pub struct ModelFit {
    pub beta_hat: Vec<f64>,
    pub a_hat: f64,
    pub method: VarianceMethod,
    /// Shrinkage factors `A/(A + D_i)`.
    pub gamma: Vec<f64>,
    /// EBLUPs on the transformed scale.
    pub theta_eb: Vec<f64>,
    /// Whether unadjusted REML hit the zero boundary.
    pub reml_was_zero: bool,
    /// Upper end of the search bracket used for `A`.
    pub a_search_max: f64,
}

/// `g1(A, D) = A·D/(A + D)`, the leading posterior-variance term.
pub fn g1(a: f64, d: f64) -> f64 {
    if a <= 0.0 {
        0.0
    } else {
        a * d / (a + d)
    }
}

/// GLS regression coefficients `β̂(A) = (X'V⁻¹X)⁻¹ X'V⁻¹ z`,
/// `V = diag(A + D_i)`.
pub fn fit_gls_beta(ds: &AreaDataset, a: f64) -> Result<DVector<f64>> {
    let (xtvx, xtvz) = weighted_normal_equations(ds, a)?;
    solve_spd(&xtvx, &xtvz, ds)
}

fn weighted_normal_equations(ds: &AreaDataset, a: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if a < 0.0 || !a.is_finite() {
        return Err(Error::domain("A", a, "[0, inf)"));
    }
    let p = ds.p();
    let mut xtvx = DMatrix::<f64>::zeros(p, p);
    let mut xtvz = DVector::<f64>::zeros(p);
    for (i, obs) in ds.observations().iter().enumerate() {
        let w = 1.0 / (a + obs.d);
        for r in 0..p {
            let xr = obs.x[r];
            xtvz[r] += w * xr * ds.z_vector()[i];
            for c in 0..p {
                xtvx[(r, c)] += w * xr * obs.x[c];
            }
        }
    }
    Ok((xtvx, xtvz))
}

fn solve_spd(xtvx: &DMatrix<f64>, xtvz: &DVector<f64>, ds: &AreaDataset) -> Result<DVector<f64>> {
    match xtvx.clone().cholesky() {
        Some(chol) => Ok(chol.solve(xtvz)),
        None => {
            let columns = dependent_columns(ds.design_matrix());
            Err(Error::RankDeficient {
                columns: if columns.is_empty() {
                    (0..ds.p()).collect()
                } else {
                    columns
                },
            })
        }
    }
}

/// Residual log-likelihood, up to an additive constant that does not
/// depend on `A`:
/// `-½ [ Σ log(A + D_i) + log det(X'V⁻¹X) + z'Pz ]`
/// with `z'Pz` the GLS weighted residual sum of squares. The dropped
/// constant is `-((m-p)/2)·log 2π`.
pub fn restricted_loglik(ds: &AreaDataset, a: f64) -> Result<f64> {
    let (xtvx, xtvz) = weighted_normal_equations(ds, a)?;
    let chol = xtvx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient {
            columns: dependent_columns(ds.design_matrix()),
        })?;
    let beta = chol.solve(&xtvz);
    let log_det: f64 = (0..ds.p()).map(|j| chol.l()[(j, j)].ln()).sum::<f64>() * 2.0;

    let mut log_v = 0.0;
    let mut rss_w = 0.0;
    for (i, obs) in ds.observations().iter().enumerate() {
        let v = a + obs.d;
        log_v += v.ln();
        let mut fitted = 0.0;
        for (j, &xj) in obs.x.iter().enumerate() {
            fitted += xj * beta[j];
        }
        let r = ds.z_vector()[i] - fitted;
        rss_w += r * r / v;
    }
    Ok(-0.5 * (log_v + log_det + rss_w))
}

/// Result of variance-component estimation.
#[derive(Debug, Clone, Copy)]
pub struct AEstimate {
    pub a_hat: f64,
    /// Whether the unadjusted REML maximizer was at the zero boundary.
    pub reml_was_zero: bool,
    /// Upper end of the search interval.
    pub a_search_max: f64,
}

const GRID_POINTS: usize = 80;
const BRENT_MAX_ITER: usize = 200;

/// Estimate the variance component `A`.
///
/// REML maximizes the restricted log-likelihood over `[0, A_max]` with
/// `A_max = max(10·var(z), 1)`, truncating at zero. The YL and LL variants
/// add `log h(A)` to the objective and are strictly positive. Whatever the
/// requested method, the unadjusted REML boundary event is recorded.
pub fn estimate_a(ds: &AreaDataset, method: VarianceMethod) -> Result<AEstimate> {
    if ds.m() <= ds.p() {
        return Err(Error::input(format!(
            "need m > p to estimate A (m = {}, p = {})",
            ds.m(),
            ds.p()
        )));
    }
    let a_max = (10.0 * ds.sample_variance_z()).max(1.0);

    let m = ds.m() as f64;
    let reml_objective = |a: f64| restricted_loglik(ds, a);
    let (a_reml, reml_was_zero) = maximize_with_zero_boundary(&reml_objective, a_max)?;

    let a_hat = match method {
        VarianceMethod::Reml => a_reml,
        VarianceMethod::YoshimoriLahiri => {
            let obj = |a: f64| -> Result<f64> {
                let gamma_sum: f64 = ds.observations().iter().map(|o| a / (a + o.d)).sum();
                Ok(restricted_loglik(ds, a)? + gamma_sum.atan().ln() / m)
            };
            maximize_interior(&obj, a_max)?
        }
        VarianceMethod::LiLahiri => {
            let obj = |a: f64| -> Result<f64> { Ok(restricted_loglik(ds, a)? + a.ln()) };
            maximize_interior(&obj, a_max)?
        }
    };

    if method != VarianceMethod::Reml && !(a_hat > 0.0) {
        return Err(Error::NonConvergence {
            routine: format!("estimate_a({})", method.tag()),
            detail: format!("adjusted estimate {a_hat} is not strictly positive"),
        });
    }

    Ok(AEstimate {
        a_hat,
        reml_was_zero,
        a_search_max: a_max,
    })
}

fn log_grid(a_max: f64) -> Vec<f64> {
    let lo = (a_max * 1e-8).ln();
    let hi = a_max.ln();
    (0..GRID_POINTS)
        .map(|i| (lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64).exp())
        .collect()
}

/// Maximize over `[0, a_max]`, allowing the zero boundary.
fn maximize_with_zero_boundary<F: Fn(f64) -> Result<f64>>(
    obj: &F,
    a_max: f64,
) -> Result<(f64, bool)> {
    let mut grid = vec![0.0];
    grid.extend(log_grid(a_max));
    let (a_star, f_star) = refine_on_grid(obj, &grid, a_max, true)?;
    let f0 = obj(0.0)?;
    let zero_tol = 1e-8 * a_max;
    if a_star <= zero_tol || f0 >= f_star {
        Ok((0.0, true))
    } else {
        Ok((a_star, false))
    }
}

/// Maximize an objective that diverges to `-inf` at zero over `(0, a_max]`.
fn maximize_interior<F: Fn(f64) -> Result<f64>>(obj: &F, a_max: f64) -> Result<f64> {
    let grid = log_grid(a_max);
    let (a_star, _) = refine_on_grid(obj, &grid, a_max, false)?;
    Ok(a_star)
}

fn refine_on_grid<F: Fn(f64) -> Result<f64>>(
    obj: &F,
    grid: &[f64],
    a_max: f64,
    zero_allowed: bool,
) -> Result<(f64, f64)> {
    let mut best_idx = 0;
    let mut best_val = f64::NEG_INFINITY;
    let mut values = Vec::with_capacity(grid.len());
    for &a in grid {
        let v = obj(a)?;
        values.push(v);
        if v > best_val {
            best_val = v;
            best_idx = values.len() - 1;
        }
    }

    let lo = if best_idx == 0 {
        if zero_allowed {
            0.0
        } else {
            grid[0] * 0.1
        }
    } else {
        grid[best_idx - 1]
    };
    let hi = if best_idx + 1 < grid.len() {
        grid[best_idx + 1]
    } else {
        a_max
    };

    let xatol = 1e-12 * a_max;
    let mut eval_err = None;
    let result = brent_min(
        |a| match obj(a) {
            Ok(v) => -v,
            Err(e) => {
                eval_err = Some(e);
                f64::INFINITY
            }
        },
        lo,
        hi,
        xatol,
        BRENT_MAX_ITER,
    )?;
    if let Some(e) = eval_err {
        return Err(e);
    }

    let (mut a_star, mut f_star) = (result.xmin, -result.fmin);
    if best_val > f_star {
        a_star = grid[best_idx];
        f_star = best_val;
    }

    if a_star >= a_max * (1.0 - 1e-9) {
        return Err(Error::NonConvergence {
            routine: "estimate_a".into(),
            detail: format!(
                "maximizer pinned at the search bound A_max = {a_max} \
                 (bracket [{lo}, {hi}], objective {f_star})"
            ),
        });
    }
    Ok((a_star, f_star))
}

/// EBLUP on the transformed scale:
/// `θ̂_i = x_i'β̂ + γ̂_i (z_i - x_i'β̂)`.
pub fn eblup_theta(ds: &AreaDataset, fit: &ModelFit) -> Vec<f64> {
    ds.observations()
        .iter()
        .enumerate()
        .map(|(i, obs)| {
            let fitted: f64 = obs
                .x
                .iter()
                .zip(&fit.beta_hat)
                .map(|(x, b)| x * b)
                .sum();
            fitted + fit.gamma[i] * (ds.z_vector()[i] - fitted)
        })
        .collect()
}

/// Estimate `A`, the regression, shrinkage factors and EBLUPs in one pass.
pub fn fit_model(ds: &AreaDataset, method: VarianceMethod) -> Result<ModelFit> {
    let est = estimate_a(ds, method)?;
    let beta = fit_gls_beta(ds, est.a_hat)?;
    let gamma: Vec<f64> = ds
        .observations()
        .iter()
        .map(|o| {
            if est.a_hat <= 0.0 {
                0.0
            } else {
                est.a_hat / (est.a_hat + o.d)
            }
        })
        .collect();
    let mut fit = ModelFit {
        beta_hat: beta.iter().copied().collect(),
        a_hat: est.a_hat,
        method,
        gamma,
        theta_eb: Vec::new(),
        reml_was_zero: est.reml_was_zero,
        a_search_max: est.a_search_max,
    };
    fit.theta_eb = eblup_theta(ds, &fit);
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn obs(id: &str, z: f64, d: f64, x: Vec<f64>) -> AreaObservation {
        AreaObservation {
            area_id: id.into(),
            y_direct: z,
            z,
            d,
            x,
            sum_w2: 0.1,
            n: 10,
            w_median: 0.1,
        }
    }

    fn intercept_only(z: &[f64], d: &[f64]) -> AreaDataset {
        let rows = z
            .iter()
            .zip(d)
            .enumerate()
            .map(|(i, (&z, &d))| obs(&format!("a{i}"), z, d, vec![1.0]))
            .collect();
        AreaDataset::new(rows).unwrap()
    }

    /// Deterministic synthetic fixture with two covariates plus intercept.
    fn fixture(m: usize) -> AreaDataset {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let rows = (0..m)
            .map(|i| {
                let x1 = (i as f64 / m as f64) - 0.5;
                let x2 = ((i * 7 % m) as f64 / m as f64).sin();
                let d = 0.05 + 0.1 * (i as f64 / m as f64);
                let z = 0.3 + 0.8 * x1 - 0.4 * x2 + rng.random::<f64>() * 0.2;
                obs(&format!("a{i}"), z, d, vec![1.0, x1, x2])
            })
            .collect();
        AreaDataset::new(rows).unwrap()
    }

    #[test]
    fn g1_helper_properties() {
        assert_eq!(g1(0.0, 0.3), 0.0);
        for &(a, d) in &[(0.006, 0.12), (1.0, 1.0), (2.5, 0.01)] {
            let v = g1(a, d);
            assert!(v >= 0.0 && v <= a.min(d));
            assert!(g1(a * 1.5, d) >= v);
            assert!(g1(a, d * 1.5) >= v);
            assert!(v < d);
        }
    }

    #[test]
    fn gls_equal_weights_is_plain_mean() {
        let ds = intercept_only(&[1.0, 2.0, 6.0], &[0.5, 0.5, 0.5]);
        let beta = fit_gls_beta(&ds, 0.0).unwrap();
        assert_abs_diff_eq!(beta[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn gls_two_area_symmetric() {
        let ds = intercept_only(&[1.0, 3.0], &[1.0, 1.0]);
        let beta = fit_gls_beta(&ds, 1.0).unwrap();
        assert_abs_diff_eq!(beta[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn gls_matches_dense_normal_equations() {
        // Independent oracle: accumulate X'V⁻¹X and X'V⁻¹z by hand and
        // solve the 3x3 system with Cramer's rule.
        let ds = fixture(15);
        let a = 0.04;
        let p = 3;
        let mut m = [[0.0f64; 3]; 3];
        let mut v = [0.0f64; 3];
        for (i, o) in ds.observations().iter().enumerate() {
            let w = 1.0 / (a + o.d);
            for r in 0..p {
                v[r] += w * o.x[r] * ds.z_vector()[i];
                for c in 0..p {
                    m[r][c] += w * o.x[r] * o.x[c];
                }
            }
        }
        let det3 = |m: &[[f64; 3]; 3]| -> f64 {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d0 = det3(&m);
        let mut expected = [0.0f64; 3];
        for j in 0..3 {
            let mut mj = m;
            for r in 0..3 {
                mj[r][j] = v[r];
            }
            expected[j] = det3(&mj) / d0;
        }
        let beta = fit_gls_beta(&ds, a).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(beta[j], expected[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let rows = (0..6)
            .map(|i| {
                let x1 = i as f64;
                obs(&format!("a{i}"), 0.1 * i as f64, 0.2, vec![1.0, x1, 2.0 * x1])
            })
            .collect::<Vec<_>>();
        match AreaDataset::new(rows) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec![2]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn restricted_loglik_invariant_to_fixed_effects() {
        let ds = fixture(12);
        let shift: Vec<f64> = ds
            .observations()
            .iter()
            .enumerate()
            .map(|(i, o)| ds.z_vector()[i] + 5.0 * o.x[1] - 2.0 * o.x[0])
            .collect();
        let shifted = ds.with_replaced_z(&shift);
        for a in [0.0, 0.01, 0.3] {
            assert_abs_diff_eq!(
                restricted_loglik(&ds, a).unwrap(),
                restricted_loglik(&shifted, a).unwrap(),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn restricted_loglik_grid_argmax_matches_optimizer() {
        let ds = fixture(15);
        let mut best = (0.0, f64::NEG_INFINITY);
        for i in 0..10_000 {
            let a = i as f64 / 10_000.0;
            let v = restricted_loglik(&ds, a).unwrap();
            if v > best.1 {
                best = (a, v);
            }
        }
        let est = estimate_a(&ds, VarianceMethod::Reml).unwrap();
        assert!(
            (est.a_hat - best.0).abs() <= 2e-4,
            "optimizer {} vs grid {}",
            est.a_hat,
            best.0
        );
    }

    #[test]
    fn restricted_loglik_decreases_in_tail() {
        let ds = fixture(15);
        let var_z = ds.sample_variance_z();
        let at_10var = restricted_loglik(&ds, 10.0 * var_z).unwrap();
        let at_2var = restricted_loglik(&ds, 2.0 * var_z).unwrap();
        assert!(at_10var < at_2var);
    }

    #[test]
    fn balanced_equal_d_closed_form() {
        // Balanced case: REML Â = max(0, RSS/(m-p) - D).
        let z = [0.2, 0.9, -0.4, 1.4, 0.6, -0.1, 0.8, 0.3];
        let d = 0.05;
        let ds = intercept_only(&z, &[d; 8]);
        let mean = z.iter().sum::<f64>() / 8.0;
        let rss: f64 = z.iter().map(|&v| (v - mean) * (v - mean)).sum();
        let closed = (rss / 7.0 - d).max(0.0);
        let est = estimate_a(&ds, VarianceMethod::Reml).unwrap();
        assert_abs_diff_eq!(est.a_hat, closed, epsilon = 1e-7);
    }

    #[test]
    fn reml_zero_on_flat_data_yl_positive() {
        // Data with no between-area variance beyond sampling noise.
        let z = [0.50, 0.49, 0.51, 0.50, 0.52, 0.48, 0.50, 0.51, 0.49, 0.50];
        let ds = intercept_only(&z, &[0.5; 10]);
        let re = estimate_a(&ds, VarianceMethod::Reml).unwrap();
        assert_eq!(re.a_hat, 0.0);
        assert!(re.reml_was_zero);
        let yl = estimate_a(&ds, VarianceMethod::YoshimoriLahiri).unwrap();
        assert!(yl.a_hat > 0.0);
        assert!(yl.reml_was_zero);
        let ll = estimate_a(&ds, VarianceMethod::LiLahiri).unwrap();
        assert!(ll.a_hat > 0.0);
    }

    #[test]
    fn estimate_a_scale_equivariant() {
        let ds = fixture(15);
        let c = 3.0;
        let scaled_rows: Vec<AreaObservation> = ds
            .observations()
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let mut o2 = o.clone();
                o2.z = ds.z_vector()[i] * c;
                o2.d = o.d * c * c;
                o2
            })
            .collect();
        let scaled = AreaDataset::new(scaled_rows).unwrap();
        let base = estimate_a(&ds, VarianceMethod::Reml).unwrap();
        let scl = estimate_a(&scaled, VarianceMethod::Reml).unwrap();
        assert_abs_diff_eq!(scl.a_hat, base.a_hat * c * c, epsilon = 1e-6 * c * c);
    }

    #[test]
    fn estimate_a_invariant_to_design_reparameterization() {
        let ds = fixture(15);
        // X -> X T for an invertible T.
        let t = [[2.0, 0.5, 0.0], [0.0, 1.0, -1.0], [1.0, 0.0, 3.0]];
        let rows: Vec<AreaObservation> = ds
            .observations()
            .iter()
            .map(|o| {
                let mut o2 = o.clone();
                o2.x = (0..3)
                    .map(|j| (0..3).map(|k| o.x[k] * t[k][j]).sum())
                    .collect();
                o2
            })
            .collect();
        let reparam = AreaDataset::new(rows).unwrap();
        for method in [
            VarianceMethod::Reml,
            VarianceMethod::YoshimoriLahiri,
            VarianceMethod::LiLahiri,
        ] {
            let base = estimate_a(&ds, method).unwrap();
            let rep = estimate_a(&reparam, method).unwrap();
            assert_abs_diff_eq!(base.a_hat, rep.a_hat, epsilon = 1e-7);
        }
    }

    #[test]
    fn eblup_limits() {
        let ds = fixture(10);
        let mut fit = fit_model(&ds, VarianceMethod::Reml).unwrap();

        // A = 0: EBLUP collapses to the synthetic regression estimate.
        fit.a_hat = 0.0;
        fit.gamma = vec![0.0; ds.m()];
        let beta = fit_gls_beta(&ds, 0.0).unwrap();
        fit.beta_hat = beta.iter().copied().collect();
        let theta = eblup_theta(&ds, &fit);
        for (i, o) in ds.observations().iter().enumerate() {
            let synth: f64 = o.x.iter().zip(&fit.beta_hat).map(|(x, b)| x * b).sum();
            assert_abs_diff_eq!(theta[i], synth, epsilon = 1e-12);
        }

        // Direct convex-combination recomputation.
        let fit = fit_model(&ds, VarianceMethod::YoshimoriLahiri).unwrap();
        for (i, o) in ds.observations().iter().enumerate() {
            let synth: f64 = o.x.iter().zip(&fit.beta_hat).map(|(x, b)| x * b).sum();
            let expect = fit.gamma[i] * ds.z_vector()[i] + (1.0 - fit.gamma[i]) * synth;
            assert_abs_diff_eq!(fit.theta_eb[i], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn eblup_tracks_direct_as_d_vanishes() {
        let mut rows = Vec::new();
        for i in 0..10 {
            let z = 0.1 * i as f64;
            rows.push(obs(&format!("a{i}"), z, 1e-9, vec![1.0]));
        }
        let ds = AreaDataset::new(rows).unwrap();
        let fit = fit_model(&ds, VarianceMethod::YoshimoriLahiri).unwrap();
        for (i, _) in ds.observations().iter().enumerate() {
            assert_abs_diff_eq!(fit.theta_eb[i], ds.z_vector()[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn g1_below_d_for_every_fit() {
        let ds = fixture(15);
        for method in [
            VarianceMethod::Reml,
            VarianceMethod::YoshimoriLahiri,
            VarianceMethod::LiLahiri,
        ] {
            let fit = fit_model(&ds, method).unwrap();
            for o in ds.observations() {
                assert!(g1(fit.a_hat, o.d) < o.d);
            }
        }
    }

    #[test]
    fn dataset_validation_errors() {
        assert!(AreaDataset::new(vec![]).is_err());
        let bad_d = vec![obs("a", 0.0, 0.0, vec![1.0])];
        assert!(AreaDataset::new(bad_d).is_err());
        let dup = vec![
            obs("a", 0.0, 0.1, vec![1.0]),
            obs("a", 0.1, 0.1, vec![1.0]),
        ];
        assert!(AreaDataset::new(dup).is_err());
        let ragged = vec![
            obs("a", 0.0, 0.1, vec![1.0, 2.0]),
            obs("b", 0.1, 0.1, vec![1.0]),
        ];
        assert!(AreaDataset::new(ragged).is_err());
    }

    #[test]
    fn estimate_a_requires_m_greater_than_p() {
        let ds = intercept_only(&[0.4], &[0.1]);
        assert!(estimate_a(&ds, VarianceMethod::Reml).is_err());
    }

    #[test]
    fn misscaled_sampling_variances_warn() {
        let mut rows: Vec<AreaObservation> = (0..6)
            .map(|i| obs(&format!("a{i}"), 0.1 * i as f64, 0.1, vec![1.0]))
            .collect();
        rows[0].d = 500.0; // D*n spread far beyond 1/n scaling
        let ds = AreaDataset::new(rows).unwrap();
        assert!(
            ds.warnings().iter().any(|w| w.contains("scale like 1/n")),
            "{:?}",
            ds.warnings()
        );
        let clean = fixture(10);
        assert!(clean.warnings().is_empty(), "{:?}", clean.warnings());
    }
}
