//! Back-transformed point estimation: the posterior mean of the inverse
//! transform and the three estimator families built on it.
//!
//! For a fitted transformed-scale model the conditional law of `θ_i` given
//! the data is `Normal(θ̂_i, g1(Â, D_i))` with the parameter estimates
//! plugged in. The estimators produced per area are:
//!
//! * `direct` — the survey-weighted direct estimate,
//! * `nbt`    — naive back transformation `g⁻¹(θ̂_i)`,
//! * `peb`    — posterior mean `E[g⁻¹(θ_i) | data]`,
//! * `eb`     — the bias-corrected estimate `(peb - D·b/2)/(1 + a·D/2)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{g1, AreaDataset, ModelFit, VarianceMethod};
use crate::quadrature::GaussHermite;
use crate::transforms::{InverseMoments, LinearDeltaCoeffs, Transform};

/// Default Gauss–Hermite node count; saturates double precision for the
/// smooth, bounded inverse maps in the catalog.
pub const DEFAULT_QUADRATURE_NODES: usize = 40;

/// A normal posterior for a transformed-scale parameter.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorSpec {
    pub center: f64,
    pub variance: f64,
    pub quadrature_nodes: usize,
}

impl PosteriorSpec {
    pub fn new(center: f64, variance: f64, quadrature_nodes: usize) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::domain("posterior variance", variance, "[0, inf)"));
        }
        if quadrature_nodes < 8 {
            return Err(Error::input(format!(
                "quadrature_nodes must be >= 8, got {quadrature_nodes}"
            )));
        }
        Ok(PosteriorSpec {
            center,
            variance,
            quadrature_nodes,
        })
    }
}

/// Posterior mean and variance of `g⁻¹(θ)` under `θ ~ N(center, variance)`.
///
/// Closed forms are used where the catalog admits them; otherwise the
/// integral is evaluated by Gauss–Hermite quadrature. The inverse formula
/// is evaluated on the whole real line (catalog inverses are analytic
/// everywhere); nodes falling outside the nominal range are counted and a
/// node where the formula fails to produce a finite value is clamped to the
/// nearest range endpoint.
pub(crate) fn posterior_moments(spec: &PosteriorSpec, t: &Transform) -> Result<(f64, f64, usize)> {
    let c = spec.center;
    let v = spec.variance;
    match t.moments {
        InverseMoments::Identity => Ok((c, v, 0)),
        InverseMoments::HalfSine => {
            let mean = (1.0 + c.sin() * (-v / 2.0).exp()) / 2.0;
            // Var[sin θ]/4 written without cancellation:
            // (1 - cos(2c)e^{-2v})/2 - sin²(c)e^{-v}
            //   = (1 - e^{-v})(1 + e^{-v}cos 2c)/2.
            let ev = (-v).exp();
            let var = 0.25 * (-(-v).exp_m1()) * (1.0 + ev * (2.0 * c).cos()) / 2.0;
            Ok((mean, var.max(0.0), 0))
        }
        InverseMoments::ExpScaled { s } => {
            let mean = (s * c + s * s * v / 2.0).exp();
            let var = (2.0 * s * c + s * s * v).exp() * ((s * s * v).exp_m1());
            Ok((mean, var.max(0.0), 0))
        }
        InverseMoments::Numeric => {
            let rule = GaussHermite::cached(spec.quadrature_nodes)?;
            let mut outside = 0usize;
            let (mean, var) = rule.normal_mean_and_variance(c, v, |theta| {
                if !t.range.contains_closed(theta) {
                    outside += 1;
                }
                let val = t.g_inv_raw(theta);
                if val.is_finite() {
                    val
                } else {
                    t.g_inv_raw(t.range.clamp(theta))
                }
            });
            Ok((mean, var, outside))
        }
    }
}

/// `E[g⁻¹(θ)]` for `θ ~ Normal(center, variance)`.
pub fn posterior_mean_inverse(spec: &PosteriorSpec, t: &Transform) -> Result<f64> {
    posterior_moments(spec, t).map(|(mean, _, _)| mean)
}

/// Force the numerical quadrature path regardless of the closed form;
/// used to cross-check closed forms against an independent route.
pub fn posterior_moments_by_quadrature(spec: &PosteriorSpec, t: &Transform) -> Result<(f64, f64)> {
    let rule = GaussHermite::cached(spec.quadrature_nodes)?;
    let (mean, var) =
        rule.normal_mean_and_variance(spec.center, spec.variance, |theta| t.g_inv_raw(theta));
    Ok((mean, var))
}

/// Per-area point estimates on the original scale.
#[derive(Debug, Clone, Serialize)]
pub struct AreaEstimates {
    pub area_id: String,
    pub direct: f64,
    pub nbt: f64,
    pub peb: f64,
    pub eb: f64,
}

/// All point estimators for a fitted model.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateBundle {
    pub areas: Vec<AreaEstimates>,
    /// Variance-estimation method behind the fit.
    pub method: VarianceMethod,
    /// Number of original-scale values clamped to a hard bound.
    pub clamped: usize,
    /// Quadrature nodes that fell outside the transform range.
    pub nodes_outside_range: usize,
}

/// Compute direct, naive-back-transform, posterior-mean and bias-corrected
/// estimates for every area.
pub fn point_estimates(
    ds: &AreaDataset,
    fit: &ModelFit,
    t: &Transform,
    coeffs: &LinearDeltaCoeffs,
) -> Result<EstimateBundle> {
    point_estimates_with_nodes(ds, fit, t, coeffs, DEFAULT_QUADRATURE_NODES)
}

pub fn point_estimates_with_nodes(
    ds: &AreaDataset,
    fit: &ModelFit,
    t: &Transform,
    coeffs: &LinearDeltaCoeffs,
    quadrature_nodes: usize,
) -> Result<EstimateBundle> {
    if fit.theta_eb.len() != ds.m() {
        return Err(Error::input(
            "fit does not match dataset (theta_eb length differs from m)",
        ));
    }
    let mut areas = Vec::with_capacity(ds.m());
    let mut clamped = 0usize;
    let mut outside = 0usize;

    // Hard bounds exist only where the mean domain is finite on a side.
    let clamp_hard = |v: f64, clamped: &mut usize| -> f64 {
        if t.domain.contains_closed(v) {
            v
        } else {
            *clamped += 1;
            t.domain.clamp(v)
        }
    };

    for (i, obs) in ds.observations().iter().enumerate() {
        let theta = fit.theta_eb[i];
        let spec = PosteriorSpec::new(theta, g1(fit.a_hat, obs.d), quadrature_nodes)?;
        let (peb_raw, _, nodes_out) = posterior_moments(&spec, t)?;
        outside += nodes_out;
        let mult = coeffs.multiplier(obs.d);
        if mult <= 0.0 {
            return Err(Error::domain("1 + a*D/2", mult, "(0, inf)"));
        }
        let eb_raw = (peb_raw - obs.d * coeffs.b / 2.0) / mult;
        let nbt_raw = t.g_inv_raw(theta);

        areas.push(AreaEstimates {
            area_id: obs.area_id.clone(),
            direct: obs.y_direct,
            nbt: clamp_hard(nbt_raw, &mut clamped),
            peb: clamp_hard(peb_raw, &mut clamped),
            eb: clamp_hard(eb_raw, &mut clamped),
        });
    }

    Ok(EstimateBundle {
        areas,
        method: fit.method,
        clamped,
        nodes_outside_range: outside,
    })
}
