//! Monte Carlo cross-check of the bootstrap-corrected MSE estimator on the
//! identity transform, where the model reduces to the classical
//! Fay–Herriot setup: the average `ms` over repeated datasets must track
//! the simulated true MSE of the EBLUP.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use vstsae::model::{fit_model, AreaDataset, AreaObservation, VarianceMethod};
use vstsae::mse::ms_estimate;
use vstsae::transforms::catalog;

const M: usize = 30;
const A_TRUE: f64 = 0.05;
const BETA: f64 = 0.5;

fn d_of(i: usize) -> f64 {
    0.05 + 0.25 * (i % 5) as f64 / 4.0
}

fn simulate_dataset(rng: &mut rand_chacha::ChaCha12Rng) -> (AreaDataset, Vec<f64>) {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::with_capacity(M);
    let mut theta = Vec::with_capacity(M);
    for i in 0..M {
        let d = d_of(i);
        let th = BETA + A_TRUE.sqrt() * noise.sample(rng);
        let z = th + d.sqrt() * noise.sample(rng);
        theta.push(th);
        rows.push(AreaObservation {
            area_id: format!("a{i}"),
            y_direct: z,
            z,
            d,
            x: vec![1.0],
            sum_w2: d.min(1.0),
            n: 10,
            w_median: 0.1,
        });
    }
    (AreaDataset::new(rows).unwrap(), theta)
}

#[test]
fn bootstrap_corrected_mse_tracks_simulated_truth() {
    let (t, _, coeffs) = catalog("normal-identity", &[]).unwrap();

    // True MSE of the EBLUP (identity: eb == theta_eb) per area.
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2024);
    let truth_reps = 2000;
    let mut true_mse = vec![0.0; M];
    for _ in 0..truth_reps {
        let (ds, theta) = simulate_dataset(&mut rng);
        let fit = fit_model(&ds, VarianceMethod::YoshimoriLahiri).unwrap();
        for i in 0..M {
            let e = fit.theta_eb[i] - theta[i];
            true_mse[i] += e * e;
        }
    }
    for v in &mut true_mse {
        *v /= truth_reps as f64;
    }

    // Average the estimator over independent datasets.
    let datasets = 60;
    let mut mean_ms = vec![0.0; M];
    let mut mean_m1 = vec![0.0; M];
    for k in 0..datasets {
        let (ds, _) = simulate_dataset(&mut rng);
        let fit = fit_model(&ds, VarianceMethod::YoshimoriLahiri).unwrap();
        let est = ms_estimate(&ds, &fit, &t, &coeffs, 100, 7000 + k).unwrap();
        for i in 0..M {
            mean_ms[i] += est.areas[i].ms;
            mean_m1[i] += est.areas[i].m1;
        }
    }
    for i in 0..M {
        mean_ms[i] /= datasets as f64;
        mean_m1[i] /= datasets as f64;
    }

    let ratio_ms: f64 = (0..M).map(|i| mean_ms[i] / true_mse[i]).sum::<f64>() / M as f64;
    let ratio_m1: f64 = (0..M).map(|i| mean_m1[i] / true_mse[i]).sum::<f64>() / M as f64;

    // The corrected estimator must be close to unbiased at this scale; the
    // leading term alone sits below it because it ignores the
    // regression/variance-estimation terms.
    assert!(
        (0.85..=1.15).contains(&ratio_ms),
        "mean ms / true MSE = {ratio_ms:.3}"
    );
    assert!(
        ratio_m1 < ratio_ms,
        "m1 ratio {ratio_m1:.3} not below ms ratio {ratio_ms:.3}"
    );
    assert!(
        (0.75..=1.10).contains(&ratio_m1),
        "mean m1 / true MSE = {ratio_m1:.3}"
    );
}
