//! Confidence intervals for the small-area means: the transformed direct
//! and EB intervals, the naive and bootstrap variants, the Yates
//! correction, and the leading term of the length comparison between the
//! transformed direct and transformed EB intervals.

use rand_distr::Distribution;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::estimators::point_estimates;
use crate::model::{g1, AreaDataset, ModelFit, VarianceMethod};
use crate::mse::m1_estimate;
use crate::streams::replicate_rng;
use crate::transforms::{
    back_transform_correct, InverseMoments, LinearDeltaCoeffs, Transform,
};

/// Interval construction methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CiMethod {
    /// Transformed direct interval: `g(y) ± z_{α/2}√D` mapped through the
    /// bias-corrected back transform.
    TDirect,
    /// Transformed EB interval with the YL variance estimate
    /// (`θ̂ ± z_{α/2}√g1(Â)` mapped through the back transform).
    TebYl,
    /// Normal-form interval on the original scale: `eb ± z_{α/2}√m1`.
    Boot,
    /// Bootstrap-calibrated transformed EB interval (with the multiplier);
    /// the variance component uses the LL adjustment.
    TebB,
    /// As `TebB` but mapped through the plain inverse (no multiplier/shift).
    PTebB,
    /// Naive original-scale interval `y ± z_{α/2}·σ̂_w`.
    Mpnaive,
}

impl CiMethod {
    pub const ALL: [CiMethod; 6] = [
        CiMethod::TDirect,
        CiMethod::TebYl,
        CiMethod::Boot,
        CiMethod::TebB,
        CiMethod::PTebB,
        CiMethod::Mpnaive,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            CiMethod::TDirect => "TDirect",
            CiMethod::TebYl => "TEB.YL",
            CiMethod::Boot => "Boot",
            CiMethod::TebB => "TEB.B",
            CiMethod::PTebB => "pTEB.B",
            CiMethod::Mpnaive => "Mpnaive",
        }
    }

    /// Variance method the underlying fit must have used, if constrained.
    pub fn required_method(&self) -> Option<VarianceMethod> {
        match self {
            CiMethod::TebYl | CiMethod::Boot => Some(VarianceMethod::YoshimoriLahiri),
            CiMethod::TebB | CiMethod::PTebB => Some(VarianceMethod::LiLahiri),
            CiMethod::TDirect | CiMethod::Mpnaive => None,
        }
    }

    pub fn needs_bootstrap(&self) -> bool {
        matches!(self, CiMethod::TebB | CiMethod::PTebB)
    }
}

impl std::str::FromStr for CiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', ".").as_str() {
            "tdirect" => Ok(CiMethod::TDirect),
            "teb.yl" | "tebyl" => Ok(CiMethod::TebYl),
            "boot" => Ok(CiMethod::Boot),
            "teb.b" | "tebb" => Ok(CiMethod::TebB),
            "pteb.b" | "ptebb" => Ok(CiMethod::PTebB),
            "mpnaive" => Ok(CiMethod::Mpnaive),
            other => Err(Error::input(format!("unknown interval method '{other}'"))),
        }
    }
}

/// A two-sided confidence interval (original scale unless stated).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub method: CiMethod,
    pub alpha: f64,
    pub yates_applied: bool,
}

impl ConfidenceInterval {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

fn check_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::domain("alpha", alpha, "(0, 0.5)"));
    }
    let normal = StdNormal::standard();
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

/// Map a transformed-scale interval to the original scale endpoint-wise via
/// the bias-corrected back transform. Endpoints are clamped into the closed
/// range first; ordering is preserved because the inverse is increasing and
/// the multiplier positive.
pub fn transform_interval(
    iv: &ConfidenceInterval,
    d: f64,
    coeffs: &LinearDeltaCoeffs,
    t: &Transform,
) -> Result<ConfidenceInterval> {
    let lower = back_transform_correct(iv.lower, d, coeffs, t)?;
    let upper = back_transform_correct(iv.upper, d, coeffs, t)?;
    if lower > upper {
        return Err(Error::NonConvergence {
            routine: "transform_interval".into(),
            detail: format!("mapped interval inverted: [{lower}, {upper}]"),
        });
    }
    Ok(ConfidenceInterval {
        lower,
        upper,
        ..*iv
    })
}

/// Add the Yates continuity correction `± w_median/2` to an original-scale
/// interval, clamping to the hard mean-scale bounds when the domain is
/// bounded.
pub fn yates_correct(
    iv: &ConfidenceInterval,
    w_median: f64,
    t: &Transform,
) -> Result<ConfidenceInterval> {
    if !(w_median >= 0.0) {
        return Err(Error::domain("w_median", w_median, "[0, inf)"));
    }
    let mut lower = iv.lower - w_median / 2.0;
    let mut upper = iv.upper + w_median / 2.0;
    if t.domain.is_bounded_below() {
        lower = lower.max(t.domain.lo);
    }
    if t.domain.is_bounded_above() {
        upper = upper.min(t.domain.hi);
    }
    Ok(ConfidenceInterval {
        lower,
        upper,
        yates_applied: true,
        ..*iv
    })
}

/// Nearest-order-statistic quantiles at ranks `⌈n·α/2⌉` and `⌈n·(1-α/2)⌉`
/// (1-based) of a sorted sample.
fn quantile_pair(sorted: &[f64], alpha: f64) -> (f64, f64) {
    let n = sorted.len();
    let rank = |p: f64| -> usize {
        let r = (n as f64 * p).ceil() as usize;
        r.clamp(1, n) - 1
    };
    (sorted[rank(alpha / 2.0)], sorted[rank(1.0 - alpha / 2.0)])
}

/// Build per-area confidence intervals with the requested method.
///
/// Bootstrap methods (`TebB`, `PTebB`) need `b >= 200`; other methods
/// ignore `b` and `seed`. Methods tied to a particular variance adjustment
/// reject fits produced with a different one.
#[allow(clippy::too_many_arguments)]
pub fn build_intervals(
    ds: &AreaDataset,
    fit: &ModelFit,
    t: &Transform,
    coeffs: &LinearDeltaCoeffs,
    method: CiMethod,
    alpha: f64,
    b: usize,
    seed: u64,
) -> Result<Vec<ConfidenceInterval>> {
    let q = check_alpha(alpha)?;
    if let Some(required) = method.required_method() {
        if fit.method != required {
            return Err(Error::input(format!(
                "{} requires a {} fit, got {}",
                method.tag(),
                required.tag(),
                fit.method.tag()
            )));
        }
    }
    if fit.theta_eb.len() != ds.m() {
        return Err(Error::input("fit does not match dataset"));
    }

    let blank = |lower: f64, upper: f64| ConfidenceInterval {
        lower,
        upper,
        method,
        alpha,
        yates_applied: false,
    };

    match method {
        CiMethod::TDirect => ds
            .observations()
            .iter()
            .enumerate()
            .map(|(i, obs)| {
                let half = q * obs.d.sqrt();
                let z = ds.z_vector()[i];
                transform_interval(&blank(z - half, z + half), obs.d, coeffs, t)
            })
            .collect(),
        CiMethod::TebYl => ds
            .observations()
            .iter()
            .enumerate()
            .map(|(i, obs)| {
                let half = q * g1(fit.a_hat, obs.d).sqrt();
                let c = fit.theta_eb[i];
                transform_interval(&blank(c - half, c + half), obs.d, coeffs, t)
            })
            .collect(),
        CiMethod::Boot => {
            let bundle = point_estimates(ds, fit, t, coeffs)?;
            let m1 = m1_estimate(ds, fit, t, coeffs)?;
            Ok(bundle
                .areas
                .iter()
                .zip(&m1)
                .map(|(a, &v)| {
                    let half = q * v.max(0.0).sqrt();
                    blank(a.eb - half, a.eb + half)
                })
                .collect())
        }
        CiMethod::Mpnaive => {
            let bundle = point_estimates(ds, fit, t, coeffs)?;
            ds.observations()
                .iter()
                .zip(&bundle.areas)
                .map(|(obs, est)| {
                    let var = naive_variance(obs.y_direct, obs.sum_w2, obs.n, est.eb, t)?;
                    let half = q * var.sqrt();
                    Ok(blank(obs.y_direct - half, obs.y_direct + half))
                })
                .collect()
        }
        CiMethod::TebB | CiMethod::PTebB => {
            let (with_mult, without_mult) =
                build_bootstrap_intervals(ds, fit, t, coeffs, alpha, b, seed)?;
            Ok(if method == CiMethod::TebB {
                with_mult
            } else {
                without_mult
            })
        }
    }
}

/// Build the calibrated bootstrap intervals in both variants — mapped
/// through the bias-corrected back transform (`TebB`) and through the
/// plain inverse (`PTebB`) — from a single root bootstrap.
pub fn build_bootstrap_intervals(
    ds: &AreaDataset,
    fit: &ModelFit,
    t: &Transform,
    coeffs: &LinearDeltaCoeffs,
    alpha: f64,
    b: usize,
    seed: u64,
) -> Result<(Vec<ConfidenceInterval>, Vec<ConfidenceInterval>)> {
    check_alpha(alpha)?;
    if fit.method != VarianceMethod::LiLahiri {
        return Err(Error::input(format!(
            "bootstrap intervals require an LL fit, got {}",
            fit.method.tag()
        )));
    }
    let roots = bootstrap_roots(ds, fit, b, seed)?;
    let mut with_mult = Vec::with_capacity(ds.m());
    let mut without_mult = Vec::with_capacity(ds.m());
    for (i, obs) in ds.observations().iter().enumerate() {
        let (q_lo, q_hi) = quantile_pair(&roots[i], alpha);
        let s = g1(fit.a_hat, obs.d).sqrt();
        let lo_t = fit.theta_eb[i] + q_lo * s;
        let hi_t = fit.theta_eb[i] + q_hi * s;
        let base = ConfidenceInterval {
            lower: lo_t,
            upper: hi_t,
            method: CiMethod::TebB,
            alpha,
            yates_applied: false,
        };
        with_mult.push(transform_interval(&base, obs.d, coeffs, t)?);
        let (lo_c, _) = t.clamp_to_range(lo_t);
        let (hi_c, _) = t.clamp_to_range(hi_t);
        without_mult.push(ConfidenceInterval {
            lower: t.g_inv_raw(lo_c),
            upper: t.g_inv_raw(hi_c),
            method: CiMethod::PTebB,
            alpha,
            yates_applied: false,
        });
    }
    Ok((with_mult, without_mult))
}

/// Plug-in original-scale variance for the naive interval. For the
/// arcsin/Bernoulli family this is the survey variance `y(1-y)·Σw²`
/// (floored at `Σw²/(4n)` for boundary data); other families use the
/// delta method `D/[g'(eb)]²`.
fn naive_variance(y: f64, sum_w2: f64, n: usize, eb: f64, t: &Transform) -> Result<f64> {
    if t.moments == InverseMoments::HalfSine {
        if y <= 0.0 || y >= 1.0 {
            Ok(sum_w2 / (4.0 * n as f64))
        } else {
            Ok(y * (1.0 - y) * sum_w2)
        }
    } else {
        let d1 = t.d1g(eb)?;
        // D = k·Σw² with k = 1 under the catalog convention.
        Ok(sum_w2 / (d1 * d1))
    }
}

/// Per-area sorted samples of the bootstrap root
/// `(θ* - θ̂*)/√g1(Â*, D_i)`.
fn bootstrap_roots(ds: &AreaDataset, fit: &ModelFit, b: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if b < 200 {
        return Err(Error::input(format!(
            "interval bootstrap needs b >= 200, got {b}"
        )));
    }
    let m = ds.m();
    let fitted_mean: Vec<f64> = ds
        .observations()
        .iter()
        .map(|o| o.x.iter().zip(&fit.beta_hat).map(|(x, b)| x * b).sum())
        .collect();

    let draws: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|rep| root_replicate(ds, fit, &fitted_mean, seed, rep as u64).ok())
        .collect();

    let failed = draws.iter().filter(|d| d.is_none()).count();
    if (failed as f64) > 0.10 * b as f64 {
        return Err(Error::BootstrapBudget { failed, total: b });
    }

    let mut roots = vec![Vec::with_capacity(b - failed); m];
    for draw in draws.into_iter().flatten() {
        for (i, r) in draw.into_iter().enumerate() {
            roots[i].push(r);
        }
    }
    for r in &mut roots {
        r.sort_by(f64::total_cmp);
    }
    Ok(roots)
}

fn root_replicate(
    ds: &AreaDataset,
    fit: &ModelFit,
    fitted_mean: &[f64],
    seed: u64,
    rep: u64,
) -> Result<Vec<f64>> {
    let m = ds.m();
    let mut rng = replicate_rng(seed, rep);
    let a_sd = fit.a_hat.max(0.0).sqrt();
    let mut theta_star = vec![0.0; m];
    let mut z_star = vec![0.0; m];
    for i in 0..m {
        let u: f64 = rand_distr::StandardNormal.sample(&mut rng);
        theta_star[i] = fitted_mean[i] + a_sd * u;
        let e: f64 = rand_distr::StandardNormal.sample(&mut rng);
        z_star[i] = theta_star[i] + ds.obs(i).d.sqrt() * e;
    }
    let ds_star = ds.with_replaced_z(&z_star);
    let refit = crate::model::fit_model(&ds_star, fit.method)?;
    (0..m)
        .map(|i| {
            let scale = g1(refit.a_hat, ds.obs(i).d).sqrt();
            if !(scale > 0.0) {
                return Err(Error::NonConvergence {
                    routine: "bootstrap root".into(),
                    detail: format!("degenerate g1 scale in replicate {rep}"),
                });
            }
            Ok((theta_star[i] - refit.theta_eb[i]) / scale)
        })
        .collect()
}

/// Leading term of the length difference between the transformed direct
/// and transformed EB intervals:
/// `2 z_{α/2} [ (√D - √g1(Â))·(g⁻¹)'(θ̂) + √D·(z - θ̂)·(g⁻¹)''(θ̂) ]`.
pub fn length_gap_leading_term(
    z: f64,
    d: f64,
    theta_eb: f64,
    a_hat: f64,
    t: &Transform,
    alpha: f64,
) -> Result<f64> {
    let q = check_alpha(alpha)?;
    let d1 = t.d1g_inv(theta_eb)?;
    let d2 = t.d2g_inv(theta_eb)?;
    let g1v = g1(a_hat, d);
    Ok(2.0 * q * ((d.sqrt() - g1v.sqrt()) * d1 + d.sqrt() * (z - theta_eb) * d2))
}

/// Whether the sufficient condition for a positive length gap holds:
/// the inverse is increasing and either convex at `θ̂` with `z > θ̂`
/// or concave at `θ̂` with `z < θ̂`.
pub fn length_gap_positive_predicate(z: f64, theta_eb: f64, t: &Transform) -> Result<bool> {
    let d2 = t.d2g_inv(theta_eb)?;
    Ok((d2 > 0.0 && z > theta_eb) || (d2 < 0.0 && z < theta_eb))
}
