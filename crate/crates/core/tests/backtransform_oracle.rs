//! Oracle for the bias-corrected back transform: compute
//! `θ(p) = E[g(ȳ) | p]` exactly by summing over Binomial outcomes, then
//! verify that `(g⁻¹(θ) - D·b/2)/(1 + a·D/2)` recovers `p` at the
//! advertised rate while the naive inverse does not.

use vstsae::transforms::{back_transform_correct, catalog};

/// Exact `E[g(clamped ȳ)]` for `ȳ` the mean of `n` Bernoulli(p) draws with
/// equal weights `1/n` (so `Σw² = 1/n` and `n_eff = n`).
fn theta_of_p(p: f64, n: usize) -> f64 {
    let (t, _, _) = catalog("bernoulli-arcsin", &[]).unwrap();
    let mut pmf = (1.0 - p).powi(n as i32);
    let mut total = 0.0;
    for k in 0..=n {
        let y = k as f64 / n as f64;
        let (y_c, _) = t.clamp_to_domain(y, n as f64);
        total += pmf * t.g(y_c).unwrap();
        // Binomial recurrence: pmf(k+1) = pmf(k) * (n-k)/(k+1) * p/(1-p).
        pmf *= (n - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
    }
    total
}

#[test]
fn corrected_back_transform_recovers_binomial_mean() {
    let (t, _, coeffs) = catalog("bernoulli-arcsin", &[]).unwrap();
    for &p in &[0.3, 0.642077] {
        let mut previous_error: Option<f64> = None;
        for &n in &[25usize, 100, 400] {
            let d = 1.0 / n as f64;
            let theta = theta_of_p(p, n);
            let corrected = back_transform_correct(theta, d, &coeffs, &t).unwrap();
            let naive = t.g_inv(theta).unwrap();
            let err_corr = (corrected - p).abs();
            let err_naive = (naive - p).abs();

            // The correction must beat the naive inverse decisively.
            assert!(
                err_corr * 5.0 < err_naive,
                "p={p} n={n}: corrected {err_corr:.3e} vs naive {err_naive:.3e}"
            );
            // Error of order n^(-3/2): quadrupling n divides it by >= 6.
            if let Some(prev) = previous_error {
                assert!(
                    err_corr * 6.0 < prev,
                    "p={p} n={n}: error {err_corr:.3e} shrank too slowly from {prev:.3e}"
                );
            }
            previous_error = Some(err_corr);
        }
    }
}

#[test]
fn correction_is_within_n_to_three_halves() {
    let (t, _, coeffs) = catalog("bernoulli-arcsin", &[]).unwrap();
    for &p in &[0.2, 0.45, 0.7] {
        for &n in &[100usize, 400] {
            let d = 1.0 / n as f64;
            let theta = theta_of_p(p, n);
            let corrected = back_transform_correct(theta, d, &coeffs, &t).unwrap();
            let bound = 2.0 / (n as f64).powf(1.5);
            assert!(
                (corrected - p).abs() < bound,
                "p={p} n={n}: error {:.3e} above {bound:.3e}",
                (corrected - p).abs()
            );
        }
    }
}
