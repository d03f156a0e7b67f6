//! One-dimensional bounded optimization (Brent's method).

use crate::error::{Error, Result};

/// Outcome of a bounded scalar minimization.
#[derive(Debug, Clone, Copy)]
pub struct BrentResult {
    pub xmin: f64,
    pub fmin: f64,
    pub iterations: usize,
}

const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Minimize `f` on the closed interval `[a, b]` with Brent's method
/// (golden-section steps with successive parabolic interpolation).
///
/// `xatol` is an absolute tolerance on the position of the minimum.
pub fn brent_min<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    xatol: f64,
    max_iter: usize,
) -> Result<BrentResult> {
    if !(a < b) {
        return Err(Error::input(format!(
            "brent_min: invalid bracket [{a}, {b}]"
        )));
    }
    let sqrt_eps = f64::EPSILON.sqrt();
    let (mut lo, mut hi) = (a, b);
    let mut x = lo + GOLDEN * (hi - lo);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    for iter in 0..max_iter {
        let m = 0.5 * (lo + hi);
        let tol1 = sqrt_eps * x.abs() + xatol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (hi - lo) {
            return Ok(BrentResult {
                xmin: x,
                fmin: fx,
                iterations: iter,
            });
        }

        let mut use_golden = true;
        if e.abs() > tol1 {
            // Parabolic fit through (v, fv), (w, fw), (x, fx).
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (lo - x) && p < q * (hi - x) {
                d = p / q;
                let u = x + d;
                if (u - lo) < tol2 || (hi - u) < tol2 {
                    d = if m > x { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < m { hi - x } else { lo - x };
            d = GOLDEN * e;
        }

        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);

        if fu <= fx {
            if u < x {
                hi = x;
            } else {
                lo = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }

    Err(Error::NonConvergence {
        routine: "brent_min".into(),
        detail: format!("no convergence in {max_iter} iterations on [{a}, {b}], last x = {x}"),
    })
}
