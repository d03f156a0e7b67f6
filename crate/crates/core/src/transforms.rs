//! Variance-stabilizing transformation calculus.
//!
//! A transform `g` stabilizes a mean–variance relationship `σ²(μ)` when
//! `[g'(μ)]² σ²(μ) = k` for a positive constant `k`. When `σ²` is at most
//! quadratic in `μ` (the NEF-QVF families plus a few extensions), the
//! curvature ratio `g''(μ)/[g'(μ)]³` is linear, `a·μ + b`, with
//! `a = -c₂/k` and `b = -c₁/(2k)`. That linearity is what makes the
//! asymptotic back-transform correction
//! `μ = (g⁻¹(θ) - D·b/2) / (1 + a·D/2)` tractable, and everything in this
//! module exists to support it.
//!
//! Every catalog transform is normalized to the `k = 1` convention so that
//! `(a, b)` is unambiguous.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// An interval of the real line with open-interval membership semantics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealInterval {
    pub lo: f64,
    pub hi: f64,
}

impl RealInterval {
    pub const REAL_LINE: RealInterval = RealInterval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo < hi, "degenerate interval [{lo}, {hi}]");
        RealInterval { lo, hi }
    }

    /// Strict interior membership.
    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    /// Membership in the closure.
    pub fn contains_closed(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Clamp into the closure.
    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn is_bounded_below(&self) -> bool {
        self.lo.is_finite()
    }

    pub fn is_bounded_above(&self) -> bool {
        self.hi.is_finite()
    }
}

impl fmt::Display for RealInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lo, self.hi)
    }
}

/// Coefficients of a quadratic variance function `σ² = c₀ + c₁μ + c₂μ²`
/// together with the stabilized-variance constant `k` in `[g']²σ² = k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticVarianceFunction {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub k: f64,
    pub mean_domain: RealInterval,
}

impl QuadraticVarianceFunction {
    pub fn new(c0: f64, c1: f64, c2: f64, k: f64, mean_domain: RealInterval) -> Result<Self> {
        if c0 == 0.0 && c1 == 0.0 && c2 == 0.0 {
            return Err(Error::input(
                "quadratic variance function: c0, c1, c2 must not all be zero",
            ));
        }
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::domain("k", k, "(0, inf)"));
        }
        let qvf = QuadraticVarianceFunction {
            c0,
            c1,
            c2,
            k,
            mean_domain,
        };
        qvf.check_positive_on_domain()?;
        Ok(qvf)
    }

    /// `σ²(μ)`.
    pub fn variance(&self, mu: f64) -> f64 {
        self.c0 + self.c1 * mu + self.c2 * mu * mu
    }

    /// `dσ²/dμ`.
    pub fn d_variance(&self, mu: f64) -> f64 {
        self.c1 + 2.0 * self.c2 * mu
    }

    /// The variance must be strictly positive on the open mean domain.
    /// A quadratic is positive on an interval iff it is positive at any
    /// interior vertex and nonnegative toward both ends.
    fn check_positive_on_domain(&self) -> Result<()> {
        let dom = self.mean_domain;
        let fail = |mu: f64| {
            Err(Error::domain(
                format!("variance at mu = {mu}"),
                self.variance(mu),
                "(0, inf) on the mean domain",
            ))
        };
        if self.c2 != 0.0 {
            let vertex = -self.c1 / (2.0 * self.c2);
            if dom.contains(vertex) && self.variance(vertex) <= 0.0 {
                return fail(vertex);
            }
        }
        for bound in [dom.lo, dom.hi] {
            if bound.is_finite() {
                // Open endpoint: zero variance in the limit is allowed.
                if self.variance(bound) < 0.0 {
                    return fail(bound);
                }
            } else {
                // Unbounded side: the leading coefficient decides the limit.
                let leading = if self.c2 != 0.0 {
                    self.c2
                } else if self.c1 != 0.0 {
                    self.c1 * bound.signum()
                } else {
                    self.c0
                };
                if leading < 0.0 {
                    return fail(bound.signum() * 1e12);
                }
            }
        }
        Ok(())
    }
}

/// Coefficients of the linear shift `δ = (D/2)(a·μ + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDeltaCoeffs {
    pub a: f64,
    pub b: f64,
}

impl LinearDeltaCoeffs {
    pub const IDENTITY: LinearDeltaCoeffs = LinearDeltaCoeffs { a: 0.0, b: 0.0 };

    /// The back-transform multiplier `1 + a·D/2`; must stay positive.
    pub fn multiplier(&self, d: f64) -> f64 {
        1.0 + self.a * d / 2.0
    }
}

/// `a = -c₂/k`, `b = -c₁/(2k)`.
pub fn linear_delta_coeffs(qvf: &QuadraticVarianceFunction) -> LinearDeltaCoeffs {
    // + 0.0 normalizes a negative zero.
    LinearDeltaCoeffs {
        a: -qvf.c2 / qvf.k + 0.0,
        b: -qvf.c1 / (2.0 * qvf.k) + 0.0,
    }
}

/// Closed-form posterior moments of `g⁻¹(T)` under `T ~ Normal`, where the
/// catalog inverse admits one. `Numeric` falls back to Gauss–Hermite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum InverseMoments {
    /// `g⁻¹(t) = t`.
    Identity,
    /// `g⁻¹(t) = (1 + sin t)/2`.
    HalfSine,
    /// `g⁻¹(t) = exp(s·t)`.
    ExpScaled { s: f64 },
    /// No closed form; integrate numerically.
    Numeric,
}

/// A variance-stabilizing transform: the map, its inverse, three
/// derivatives, and the intervals they act on.
///
/// The inverse is stored as a total formula: for every catalog family the
/// expression for `g⁻¹` is analytic on the whole real line (e.g.
/// `(1 + sin t)/2`), which is exactly what the posterior-mean integrals
/// and bootstrap interval maps evaluate. `range` records where it is the
/// genuine two-sided inverse.
#[derive(Clone)]
pub struct Transform {
    pub name: String,
    g: RealFn,
    g_inv: RealFn,
    d1g: RealFn,
    d2g: RealFn,
    d3g: RealFn,
    pub domain: RealInterval,
    pub range: RealInterval,
    pub(crate) moments: InverseMoments,
}

impl fmt::Debug for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Transform")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("range", &self.range)
            .finish()
    }
}

impl Transform {
    /// Assemble a transform from user-supplied pieces. Posterior moments of
    /// the inverse are integrated numerically for such transforms.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g_inv: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1g: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2g: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d3g: impl Fn(f64) -> f64 + Send + Sync + 'static,
        domain: RealInterval,
        range: RealInterval,
    ) -> Self {
        Transform {
            name: name.into(),
            g: Arc::new(g),
            g_inv: Arc::new(g_inv),
            d1g: Arc::new(d1g),
            d2g: Arc::new(d2g),
            d3g: Arc::new(d3g),
            domain,
            range,
            moments: InverseMoments::Numeric,
        }
    }

    fn check_domain(&self, mu: f64) -> Result<()> {
        if !self.domain.contains(mu) {
            return Err(Error::domain(
                format!("{}: mu", self.name),
                mu,
                self.domain.to_string(),
            ));
        }
        Ok(())
    }

    /// `g(μ)`; `μ` must lie in the open domain.
    pub fn g(&self, mu: f64) -> Result<f64> {
        self.check_domain(mu)?;
        Ok((self.g)(mu))
    }

    /// `g⁻¹(θ)` with the range check enforced.
    pub fn g_inv(&self, theta: f64) -> Result<f64> {
        if !self.range.contains_closed(theta) {
            return Err(Error::domain(
                format!("{}: theta", self.name),
                theta,
                self.range.to_string(),
            ));
        }
        Ok((self.g_inv)(theta))
    }

    /// The inverse formula evaluated without a range check. Catalog
    /// formulas are total on the real line.
    pub fn g_inv_raw(&self, theta: f64) -> f64 {
        (self.g_inv)(theta)
    }

    pub fn d1g(&self, mu: f64) -> Result<f64> {
        self.check_domain(mu)?;
        Ok((self.d1g)(mu))
    }

    pub fn d2g(&self, mu: f64) -> Result<f64> {
        self.check_domain(mu)?;
        Ok((self.d2g)(mu))
    }

    pub fn d3g(&self, mu: f64) -> Result<f64> {
        self.check_domain(mu)?;
        Ok((self.d3g)(mu))
    }

    /// `(g⁻¹)'(θ) = 1 / g'(g⁻¹(θ))`.
    pub fn d1g_inv(&self, theta: f64) -> Result<f64> {
        let mu = self.g_inv_raw(theta);
        Ok(1.0 / self.d1g(mu)?)
    }

    /// `(g⁻¹)''(θ) = -g''(μ)/[g'(μ)]³` at `μ = g⁻¹(θ)`.
    pub fn d2g_inv(&self, theta: f64) -> Result<f64> {
        let mu = self.g_inv_raw(theta);
        let d1 = self.d1g(mu)?;
        let d2 = self.d2g(mu)?;
        Ok(-d2 / (d1 * d1 * d1))
    }

    /// Clamp a transformed value into the closed range. Returns the value
    /// and whether clamping occurred.
    pub fn clamp_to_range(&self, theta: f64) -> (f64, bool) {
        if self.range.contains_closed(theta) {
            (theta, false)
        } else {
            (self.range.clamp(theta), true)
        }
    }

    /// Clamp a mean-scale value into the domain, shrinking finite endpoints
    /// inward by `1/(4·n_eff)` (the continuity correction applied before
    /// transforming boundary data such as a direct estimate of 0 or 1).
    pub fn clamp_to_domain(&self, y: f64, n_eff: f64) -> (f64, bool) {
        let pad = if n_eff.is_finite() && n_eff > 0.0 {
            1.0 / (4.0 * n_eff)
        } else {
            0.0
        };
        let lo = if self.domain.is_bounded_below() {
            self.domain.lo + pad
        } else {
            f64::NEG_INFINITY
        };
        let hi = if self.domain.is_bounded_above() {
            self.domain.hi - pad
        } else {
            f64::INFINITY
        };
        if y >= lo && y <= hi {
            (y, false)
        } else {
            (y.clamp(lo, hi), true)
        }
    }
}

/// How values outside a transform's range or domain are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryPolicy {
    /// Clamp to the boundary (with the inward shrink on the mean scale).
    #[default]
    Clamp,
    /// Reject with a domain error.
    Reject,
}

/// `g''(μ) / [g'(μ)]³` at an interior point of the domain.
pub fn curvature_ratio(t: &Transform, mu: f64) -> Result<f64> {
    let d1 = t.d1g(mu)?;
    let d2 = t.d2g(mu)?;
    Ok(d2 / (d1 * d1 * d1))
}

/// The bias-corrected back transform
/// `(g⁻¹(θ) - D·b/2) / (1 + a·D/2)`.
///
/// `θ` outside the closed range is clamped (the default policy) or
/// rejected. The multiplier `1 + a·D/2` must be positive.
pub fn back_transform_correct(
    theta: f64,
    d: f64,
    coeffs: &LinearDeltaCoeffs,
    t: &Transform,
) -> Result<f64> {
    back_transform_with_policy(theta, d, coeffs, t, BoundaryPolicy::Clamp).map(|(v, _)| v)
}

/// As [`back_transform_correct`], reporting whether `θ` was clamped.
pub fn back_transform_with_policy(
    theta: f64,
    d: f64,
    coeffs: &LinearDeltaCoeffs,
    t: &Transform,
    policy: BoundaryPolicy,
) -> Result<(f64, bool)> {
    let mult = coeffs.multiplier(d);
    if mult <= 0.0 {
        return Err(Error::domain("1 + a*D/2", mult, "(0, inf)"));
    }
    let (theta, clamped) = match policy {
        BoundaryPolicy::Clamp => t.clamp_to_range(theta),
        BoundaryPolicy::Reject => {
            if !t.range.contains_closed(theta) {
                return Err(Error::domain(
                    format!("{}: theta", t.name),
                    theta,
                    t.range.to_string(),
                ));
            }
            (theta, false)
        }
    };
    Ok(((t.g_inv_raw(theta) - d * coeffs.b / 2.0) / mult, clamped))
}

/// The exact inverse of [`back_transform_correct`]:
/// `θ = g(μ·(1 + a·D/2) + D·b/2)`.
pub fn forward_shift(mu: f64, d: f64, coeffs: &LinearDeltaCoeffs, t: &Transform) -> Result<f64> {
    let shifted = mu * coeffs.multiplier(d) + d * coeffs.b / 2.0;
    t.g(shifted)
}

/// Names accepted by [`catalog`].
pub const CATALOG_FAMILIES: [&str; 7] = [
    "bernoulli-arcsin",
    "poisson-sqrt",
    "negbinomial",
    "normal-identity",
    "gamma-log",
    "ghs-arcsinh",
    "lognormal",
];

fn require_shape(family: &str, shape: &[f64], what: &str) -> Result<f64> {
    match shape {
        [s] if *s > 0.0 && s.is_finite() => Ok(*s),
        [s] => Err(Error::domain(format!("{family}: {what}"), *s, "(0, inf)")),
        _ => Err(Error::input(format!(
            "{family} requires exactly one shape parameter ({what} > 0), got {}",
            shape.len()
        ))),
    }
}

fn reject_shape(family: &str, shape: &[f64]) -> Result<()> {
    if shape.is_empty() {
        Ok(())
    } else {
        Err(Error::input(format!(
            "{family} takes no shape parameters, got {}",
            shape.len()
        )))
    }
}

/// Derivatives of the stabilizing transform obtained directly from the
/// variance function: with `s(μ) = σ²(μ)` and `k = 1`,
/// `g' = s^(-1/2)`, `g'' = -s'/(2 s^(3/2))`,
/// `g''' = 3s'²/(4 s^(5/2)) - s''/(2 s^(3/2))`.
fn qvf_derivatives(qvf: QuadraticVarianceFunction) -> (RealFn, RealFn, RealFn) {
    let sqrt_k = qvf.k.sqrt();
    let q1 = qvf;
    let d1: RealFn = Arc::new(move |mu| sqrt_k / q1.variance(mu).sqrt());
    let q2 = qvf;
    let d2: RealFn = Arc::new(move |mu| {
        let s = q2.variance(mu);
        -sqrt_k * q2.d_variance(mu) / (2.0 * s.powf(1.5))
    });
    let q3 = qvf;
    let d3: RealFn = Arc::new(move |mu| {
        let s = q3.variance(mu);
        let sp = q3.d_variance(mu);
        let spp = 2.0 * q3.c2;
        sqrt_k * (0.75 * sp * sp / s.powf(2.5) - 0.5 * spp / s.powf(1.5))
    });
    (d1, d2, d3)
}

/// Build a catalog transform (normalized to `k = 1`), its quadratic
/// variance function, and the linear shift coefficients `(a, b)`.
pub fn catalog(
    family: &str,
    shape: &[f64],
) -> Result<(Transform, QuadraticVarianceFunction, LinearDeltaCoeffs)> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let positive = RealInterval::new(0.0, f64::INFINITY);
    let (qvf, g, g_inv, range, moments): (
        QuadraticVarianceFunction,
        RealFn,
        RealFn,
        RealInterval,
        InverseMoments,
    ) = match family {
        "bernoulli-arcsin" => {
            reject_shape(family, shape)?;
            (
                QuadraticVarianceFunction::new(0.0, 1.0, -1.0, 1.0, RealInterval::new(0.0, 1.0))?,
                Arc::new(|p: f64| (2.0 * p - 1.0).asin()),
                Arc::new(|t: f64| (1.0 + t.sin()) / 2.0),
                RealInterval::new(-half_pi, half_pi),
                InverseMoments::HalfSine,
            )
        }
        "poisson-sqrt" => {
            reject_shape(family, shape)?;
            (
                QuadraticVarianceFunction::new(0.0, 1.0, 0.0, 1.0, positive)?,
                Arc::new(|mu: f64| 2.0 * mu.sqrt()),
                Arc::new(|t: f64| t * t / 4.0),
                positive,
                InverseMoments::Numeric,
            )
        }
        "negbinomial" => {
            let r = require_shape(family, shape, "r")?;
            let sr = r.sqrt();
            (
                QuadraticVarianceFunction::new(0.0, 1.0, 1.0 / r, 1.0, positive)?,
                Arc::new(move |mu: f64| 2.0 * sr * (mu / r).sqrt().asinh()),
                Arc::new(move |t: f64| {
                    let s = (t / (2.0 * sr)).sinh();
                    r * s * s
                }),
                positive,
                InverseMoments::Numeric,
            )
        }
        "normal-identity" => {
            reject_shape(family, shape)?;
            (
                QuadraticVarianceFunction::new(1.0, 0.0, 0.0, 1.0, RealInterval::REAL_LINE)?,
                Arc::new(|mu: f64| mu),
                Arc::new(|t: f64| t),
                RealInterval::REAL_LINE,
                InverseMoments::Identity,
            )
        }
        "gamma-log" => {
            let r = require_shape(family, shape, "r")?;
            let sr = r.sqrt();
            (
                QuadraticVarianceFunction::new(0.0, 0.0, 1.0 / r, 1.0, positive)?,
                Arc::new(move |mu: f64| sr * mu.ln()),
                Arc::new(move |t: f64| (t / sr).exp()),
                RealInterval::REAL_LINE,
                InverseMoments::ExpScaled { s: 1.0 / sr },
            )
        }
        "ghs-arcsinh" => {
            reject_shape(family, shape)?;
            (
                QuadraticVarianceFunction::new(1.0, 0.0, 1.0, 1.0, RealInterval::REAL_LINE)?,
                Arc::new(|mu: f64| mu.asinh()),
                Arc::new(|t: f64| t.sinh()),
                RealInterval::REAL_LINE,
                InverseMoments::Numeric,
            )
        }
        "lognormal" => {
            let phi = require_shape(family, shape, "phi")?;
            let c2 = (phi * phi).exp() - 1.0;
            let sc = c2.sqrt();
            (
                QuadraticVarianceFunction::new(0.0, 0.0, c2, 1.0, positive)?,
                Arc::new(move |mu: f64| mu.ln() / sc),
                Arc::new(move |t: f64| (sc * t).exp()),
                RealInterval::REAL_LINE,
                InverseMoments::ExpScaled { s: sc },
            )
        }
        other => {
            return Err(Error::input(format!(
                "unknown transform family '{other}'; known families: {}",
                CATALOG_FAMILIES.join(", ")
            )));
        }
    };

    let (d1g, d2g, d3g) = qvf_derivatives(qvf);
    let transform = Transform {
        name: family.to_string(),
        g,
        g_inv,
        d1g,
        d2g,
        d3g,
        domain: qvf.mean_domain,
        range,
        moments,
    };
    let coeffs = linear_delta_coeffs(&qvf);
    Ok((transform, qvf, coeffs))
}
