//! MSE estimation for the bias-corrected EB estimator: the leading term
//! `M1`, the parametric-bootstrap bias-corrected `Ms`, and the
//! no-multiplier comparator `pMs`.
//!
//! On the pre-multiplier scale, `M1*_i` is the posterior variance of
//! `g⁻¹(θ_i)` under `Normal(θ̂_i, g1(Â, D_i))`. The bootstrap correction is
//! additive:
//!
//! `Ms*_i = 2·M1*_i(λ̂) - mean_b M1*_i(λ̂*_b)
//!          + mean_b (μ̃EB_i(λ̂*_b; z*) - μ̃B_i(λ̂; z*))²`
//!
//! and the reported `ms_i = Ms*_i/(1 + a·D_i/2)²`, `pms_i = Ms*_i`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{posterior_moments, PosteriorSpec, DEFAULT_QUADRATURE_NODES};
use crate::model::{fit_gls_beta, fit_model, g1, AreaDataset, ModelFit, VarianceMethod};
use crate::streams::replicate_rng;
use crate::transforms::{LinearDeltaCoeffs, Transform};

/// Fraction of bootstrap refits allowed to fail before erroring out.
const FAILURE_BUDGET: f64 = 0.10;

/// Relative floor applied to a negative bias-corrected value.
const NEGATIVE_FLOOR: f64 = 1e-3;

/// Per-area MSE estimates on the original scale.
#[derive(Debug, Clone, Serialize)]
pub struct AreaMse {
    pub area_id: String,
    /// Leading-term estimate `M1*_i / (1 + a·D/2)²`.
    pub m1: f64,
    /// Bootstrap bias-corrected estimate with the multiplier.
    pub ms: f64,
    /// Bias-corrected estimate without the multiplier.
    pub pms: f64,
    /// `(1 + a·D/2)⁻²`.
    pub multiplier: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MseEstimate {
    pub areas: Vec<AreaMse>,
    pub bootstrap_b: usize,
    pub method: VarianceMethod,
    /// Replicates whose refit failed and were skipped.
    pub failed_replicates: usize,
    /// Areas whose corrected value was floored.
    pub floored: usize,
}

fn posterior_variance(center: f64, variance: f64, t: &Transform) -> Result<f64> {
    let spec = PosteriorSpec::new(center, variance, DEFAULT_QUADRATURE_NODES)?;
    posterior_moments(&spec, t).map(|(_, var, _)| var)
}

fn posterior_mean(center: f64, variance: f64, t: &Transform) -> Result<f64> {
    let spec = PosteriorSpec::new(center, variance, DEFAULT_QUADRATURE_NODES)?;
    posterior_moments(&spec, t).map(|(mean, _, _)| mean)
}

/// Leading-term MSE estimate per area (original scale).
pub fn m1_estimate(
    ds: &AreaDataset,
    fit: &ModelFit,
    t: &Transform,
    coeffs: &LinearDeltaCoeffs,
) -> Result<Vec<f64>> {
    ds.observations()
        .iter()
        .enumerate()
        .map(|(i, obs)| {
            let var = posterior_variance(fit.theta_eb[i], g1(fit.a_hat, obs.d), t)?;
            let mult = coeffs.multiplier(obs.d);
            Ok(var / (mult * mult))
        })
        .collect()
}

struct ReplicateMoments {
    /// `M1*_i(λ̂*_b)` per area.
    m1_star: Vec<f64>,
    /// Squared difference of the refit EB and base Bayes estimates per area.
    diff_sq: Vec<f64>,
}

/// Parametric-bootstrap bias-corrected MSE estimates.
///
/// Replicates draw from the fitted transformed model
/// (`θ* = x'β̂ + N(0, Â)`, `z* = θ* + N(0, D_i)`), refit with the same
/// variance method, and are combined by replicate index, so results are
/// deterministic given `(seed, b)` for any thread count.
pub fn ms_estimate(
    ds: &AreaDataset,
    fit: &ModelFit,
    t: &Transform,
    coeffs: &LinearDeltaCoeffs,
    b: usize,
    seed: u64,
) -> Result<MseEstimate> {
    if b < 50 {
        return Err(Error::input(format!(
            "bootstrap size b must be >= 50, got {b}"
        )));
    }
    let m = ds.m();
    if fit.theta_eb.len() != m {
        return Err(Error::input("fit does not match dataset"));
    }

    // Base quantities under the fitted parameters.
    let base_m1: Vec<f64> = (0..m)
        .map(|i| posterior_variance(fit.theta_eb[i], g1(fit.a_hat, ds.obs(i).d), t))
        .collect::<Result<_>>()?;
    let base_beta = &fit.beta_hat;
    let fitted_mean: Vec<f64> = ds
        .observations()
        .iter()
        .map(|o| o.x.iter().zip(base_beta).map(|(x, b)| x * b).sum())
        .collect();

    let replicates: Vec<Option<ReplicateMoments>> = (0..b)
        .into_par_iter()
        .map(|rep| bootstrap_replicate(ds, fit, t, &fitted_mean, seed, rep as u64).ok())
        .collect();

    let failed = replicates.iter().filter(|r| r.is_none()).count();
    if (failed as f64) > FAILURE_BUDGET * b as f64 {
        return Err(Error::BootstrapBudget { failed, total: b });
    }
    let successes = (b - failed) as f64;

    let mut mean_m1_star = vec![0.0; m];
    let mut mean_diff_sq = vec![0.0; m];
    for rep in replicates.iter().flatten() {
        for i in 0..m {
            mean_m1_star[i] += rep.m1_star[i];
            mean_diff_sq[i] += rep.diff_sq[i];
        }
    }
    for i in 0..m {
        mean_m1_star[i] /= successes;
        mean_diff_sq[i] /= successes;
    }

    let mut floored = 0usize;
    let areas = (0..m)
        .map(|i| {
            let obs = ds.obs(i);
            let mut ms_star = 2.0 * base_m1[i] - mean_m1_star[i] + mean_diff_sq[i];
            let floor = base_m1[i] * NEGATIVE_FLOOR;
            if ms_star < floor {
                ms_star = floor;
                floored += 1;
            }
            let mult = coeffs.multiplier(obs.d);
            AreaMse {
                area_id: obs.area_id.clone(),
                m1: base_m1[i] / (mult * mult),
                ms: ms_star / (mult * mult),
                pms: ms_star,
                multiplier: 1.0 / (mult * mult),
            }
        })
        .collect();

    Ok(MseEstimate {
        areas,
        bootstrap_b: b,
        method: fit.method,
        failed_replicates: failed,
        floored,
    })
}

fn bootstrap_replicate(
    ds: &AreaDataset,
    fit: &ModelFit,
    t: &Transform,
    fitted_mean: &[f64],
    seed: u64,
    rep: u64,
) -> Result<ReplicateMoments> {
    let m = ds.m();
    let mut rng = replicate_rng(seed, rep);
    let u_dist = if fit.a_hat > 0.0 {
        Some(Normal::new(0.0, fit.a_hat.sqrt()).map_err(|e| Error::NonConvergence {
            routine: "bootstrap_replicate".into(),
            detail: e.to_string(),
        })?)
    } else {
        None
    };

    let mut theta_star = vec![0.0; m];
    let mut z_star = vec![0.0; m];
    for i in 0..m {
        let u = u_dist.map_or(0.0, |d| d.sample(&mut rng));
        theta_star[i] = fitted_mean[i] + u;
        let e: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * ds.obs(i).d.sqrt();
        z_star[i] = theta_star[i] + e;
    }

    let ds_star = ds.with_replaced_z(&z_star);
    let refit = fit_model(&ds_star, fit.method)?;
    // Guard: GLS on the refit must be solvable (it ran inside fit_model).
    debug_assert_eq!(refit.theta_eb.len(), m);
    let _ = fit_gls_beta(&ds_star, refit.a_hat)?;

    let mut m1_star = vec![0.0; m];
    let mut diff_sq = vec![0.0; m];
    for i in 0..m {
        let d = ds.obs(i).d;
        let v_star = g1(refit.a_hat, d);
        m1_star[i] = posterior_variance(refit.theta_eb[i], v_star, t)?;
        let eb_star = posterior_mean(refit.theta_eb[i], v_star, t)?;
        // Bayes estimate on the bootstrap data under the base parameters.
        let center_b = fitted_mean[i] + fit.gamma[i] * (z_star[i] - fitted_mean[i]);
        let bayes = posterior_mean(center_b, g1(fit.a_hat, d), t)?;
        diff_sq[i] = (eb_star - bayes) * (eb_star - bayes);
    }
    Ok(ReplicateMoments { m1_star, diff_sq })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AreaObservation;
    use crate::transforms::catalog;
    use approx::assert_abs_diff_eq;

    fn dataset(z: &[f64], d: f64) -> AreaDataset {
        let rows = z
            .iter()
            .enumerate()
            .map(|(i, &z)| AreaObservation {
                area_id: format!("a{i}"),
                y_direct: z,
                z,
                d,
                x: vec![1.0],
                sum_w2: d.min(1.0),
                n: 10,
                w_median: 0.1,
            })
            .collect();
        AreaDataset::new(rows).unwrap()
    }

    #[test]
    fn identity_m1_equals_g1() {
        let (t, _, c) = catalog("normal-identity", &[]).unwrap();
        let ds = dataset(&[0.4, -0.2, 0.9, 0.1, 0.6, -0.5, 0.3, 0.7], 0.25);
        let fit = fit_model(&ds, VarianceMethod::YoshimoriLahiri).unwrap();
        let m1 = m1_estimate(&ds, &fit, &t, &c).unwrap();
        for (v, o) in m1.iter().zip(ds.observations()) {
            assert_abs_diff_eq!(*v, g1(fit.a_hat, o.d), epsilon = 1e-13);
        }
    }

    #[test]
    fn zero_a_gives_zero_m1() {
        let (t, _, c) = catalog("bernoulli-arcsin", &[]).unwrap();
        let ds = dataset(&[0.01, -0.01, 0.02, 0.0, 0.01, -0.02, 0.0, 0.01], 0.5);
        let fit = fit_model(&ds, VarianceMethod::Reml).unwrap();
        assert_eq!(fit.a_hat, 0.0);
        let m1 = m1_estimate(&ds, &fit, &t, &c).unwrap();
        assert!(m1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn arcsin_m1_closed_form_matches_quadrature() {
        let (t, _, _) = catalog("bernoulli-arcsin", &[]).unwrap();
        let (c, v) = (0.3, 0.04);
        let spec = PosteriorSpec::new(c, v, 64).unwrap();
        let closed = posterior_moments(&spec, &t).unwrap().1;
        let want =
            0.25 * ((1.0 - (2.0f64 * c).cos() * (-2.0 * v).exp()) / 2.0
                - c.sin().powi(2) * (-v).exp());
        assert_abs_diff_eq!(closed, want, epsilon = 1e-16);
        let quad = crate::estimators::posterior_moments_by_quadrature(&spec, &t)
            .unwrap()
            .1;
        assert_abs_diff_eq!(closed, quad, epsilon = 1e-12);
    }

    #[test]
    fn m1_approaches_delta_method_as_d_vanishes() {
        let (t, _, _) = catalog("bernoulli-arcsin", &[]).unwrap();
        let a_hat = 0.01;
        let theta = 0.4;
        let mut prev_gap = f64::INFINITY;
        for d in [1e-2, 1e-4, 1e-6] {
            let v = g1(a_hat, d);
            let pv = posterior_variance(theta, v, &t).unwrap();
            let delta = v * t.d1g_inv(theta).unwrap().powi(2);
            let gap = (pv / delta - 1.0).abs();
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-5);
    }

    #[test]
    fn pms_to_ms_ratio_is_exact_and_ordered() {
        let (t, _, c) = catalog("bernoulli-arcsin", &[]).unwrap();
        let ds = dataset(&[-0.3, 0.2, 0.6, -0.1, 0.4, 0.0, 0.5, -0.4, 0.25, -0.15], 0.12);
        let fit = fit_model(&ds, VarianceMethod::YoshimoriLahiri).unwrap();
        let est = ms_estimate(&ds, &fit, &t, &c, 64, 99).unwrap();
        for (area, obs) in est.areas.iter().zip(ds.observations()) {
            let mult = c.multiplier(obs.d);
            assert_abs_diff_eq!(area.pms, area.ms * mult * mult, epsilon = 1e-15);
            // a = 1 > 0 here, so the multiplier strictly shrinks ms.
            assert!(area.ms < area.pms);
            assert!(area.ms >= 0.0);
        }
    }

    #[test]
    fn identity_transform_has_equal_ms_and_pms() {
        let (t, _, c) = catalog("normal-identity", &[]).unwrap();
        let ds = dataset(&[0.4, -0.2, 0.9, 0.1, 0.6, -0.5, 0.3, 0.7], 0.3);
        let fit = fit_model(&ds, VarianceMethod::YoshimoriLahiri).unwrap();
        let est = ms_estimate(&ds, &fit, &t, &c, 64, 5).unwrap();
        for area in &est.areas {
            assert_abs_diff_eq!(area.ms, area.pms, epsilon = 1e-15);
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let (t, _, c) = catalog("bernoulli-arcsin", &[]).unwrap();
        let ds = dataset(&[-0.3, 0.2, 0.6, -0.1, 0.4, 0.0, 0.5, -0.4], 0.12);
        let fit = fit_model(&ds, VarianceMethod::YoshimoriLahiri).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| ms_estimate(&ds, &fit, &t, &c, 80, 12345).unwrap())
        };
        let one = run(1);
        let four = run(4);
        for (a, b) in one.areas.iter().zip(&four.areas) {
            assert_eq!(a.ms.to_bits(), b.ms.to_bits());
            assert_eq!(a.pms.to_bits(), b.pms.to_bits());
        }
    }

    #[test]
    fn rejects_small_bootstrap() {
        let (t, _, c) = catalog("bernoulli-arcsin", &[]).unwrap();
        let ds = dataset(&[-0.3, 0.2, 0.6, -0.1, 0.4, 0.0, 0.5, -0.4], 0.12);
        let fit = fit_model(&ds, VarianceMethod::YoshimoriLahiri).unwrap();
        assert!(ms_estimate(&ds, &fit, &t, &c, 10, 1).is_err());
    }
}
