//! Monte Carlo study harness: arcsin-transformed Bernoulli data generation,
//! estimator/MSE/interval evaluation over replicates, and table emission
//! with Monte Carlo standard errors.
//!
//! Replicates are independent tasks with seed-derived RNG streams and are
//! aggregated in replicate-index order, so a report is a pure function of
//! `(config, seed)` regardless of the worker-thread count.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{point_estimates, EstimateBundle};
use crate::intervals::{
    build_bootstrap_intervals, build_intervals, CiMethod, ConfidenceInterval,
};
use crate::model::{fit_model, AreaDataset, AreaObservation, VarianceMethod};
use crate::mse::{m1_estimate, ms_estimate, MseEstimate};
use crate::streams::{derive_seed, replicate_rng};
use crate::transforms::{catalog, LinearDeltaCoeffs, Transform};

/// Base survey-weight pattern, repeated per five-unit group within an area.
pub const WEIGHT_PATTERN: [f64; 5] = [1.0, 1.0, 2.0, 3.0, 3.0];

/// One simulation scenario.
#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub m: usize,
    pub n_per_area: usize,
    pub a_true: f64,
    pub mu_true: f64,
    pub replications: usize,
    /// Bootstrap size for the bias-corrected MSE estimators.
    pub mse_bootstrap: usize,
    /// Bootstrap size for the calibrated intervals.
    pub interval_bootstrap: usize,
    pub master_seed: u64,
    pub alpha: f64,
    /// Literal reading of the PRRMSE display (1/R outside the root);
    /// `false` uses the conventional 1/sqrt(R) placement.
    pub prrmse_literal: bool,
}

impl SimConfig {
    pub fn new(m: usize, n_per_area: usize, replications: usize, master_seed: u64) -> Self {
        SimConfig {
            m,
            n_per_area,
            a_true: 0.006,
            mu_true: 0.0,
            replications,
            mse_bootstrap: 100,
            interval_bootstrap: 1000,
            master_seed,
            alpha: 0.05,
            prrmse_literal: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::input("need at least two areas"));
        }
        if self.n_per_area == 0 {
            return Err(Error::input("n_per_area must be positive"));
        }
        if self.replications == 0 {
            return Err(Error::input("need at least one replication"));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::domain("alpha", self.alpha, "(0, 0.5)"));
        }
        if !(self.a_true >= 0.0) {
            return Err(Error::domain("a_true", self.a_true, "[0, inf)"));
        }
        Ok(())
    }

    fn scenario_seed(&self) -> u64 {
        derive_seed(
            self.master_seed,
            ((self.m as u64) << 32) ^ self.n_per_area as u64,
        )
    }
}

/// Point estimators evaluated by the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PointEstimator {
    NbtRe,
    NbtYl,
    PebRe,
    PebYl,
    EbRe,
    EbYl,
    Direct,
}

impl PointEstimator {
    pub const ALL: [PointEstimator; 7] = [
        PointEstimator::NbtRe,
        PointEstimator::NbtYl,
        PointEstimator::PebRe,
        PointEstimator::PebYl,
        PointEstimator::EbRe,
        PointEstimator::EbYl,
        PointEstimator::Direct,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            PointEstimator::NbtRe => "NBT.RE",
            PointEstimator::NbtYl => "NBT.YL",
            PointEstimator::PebRe => "pEB.RE",
            PointEstimator::PebYl => "pEB.YL",
            PointEstimator::EbRe => "EB.RE",
            PointEstimator::EbYl => "EB.YL",
            PointEstimator::Direct => "Direct",
        }
    }

    fn method(&self) -> Option<VarianceMethod> {
        match self {
            PointEstimator::NbtRe | PointEstimator::PebRe | PointEstimator::EbRe => {
                Some(VarianceMethod::Reml)
            }
            PointEstimator::NbtYl | PointEstimator::PebYl | PointEstimator::EbYl => {
                Some(VarianceMethod::YoshimoriLahiri)
            }
            PointEstimator::Direct => None,
        }
    }
}

/// MSE estimators evaluated by the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum MseEstimator {
    M1Re,
    M1Yl,
    MsRe,
    MsYl,
    PMsYl,
}

impl MseEstimator {
    pub const ALL: [MseEstimator; 5] = [
        MseEstimator::M1Re,
        MseEstimator::M1Yl,
        MseEstimator::MsRe,
        MseEstimator::MsYl,
        MseEstimator::PMsYl,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            MseEstimator::M1Re => "M1.RE",
            MseEstimator::M1Yl => "M1.YL",
            MseEstimator::MsRe => "Ms.RE",
            MseEstimator::MsYl => "Ms.YL",
            MseEstimator::PMsYl => "pMs.YL",
        }
    }

    /// The point estimator whose simulated MSE scores this estimator.
    pub fn scored_against(&self) -> PointEstimator {
        match self {
            MseEstimator::M1Re | MseEstimator::MsRe => PointEstimator::EbRe,
            _ => PointEstimator::EbYl,
        }
    }
}

/// Which estimators, MSE estimators and intervals a study evaluates.
#[derive(Debug, Clone)]
pub struct Menus {
    pub estimators: Vec<PointEstimator>,
    pub mse: Vec<MseEstimator>,
    pub intervals: Vec<CiMethod>,
}

impl Menus {
    pub fn full() -> Self {
        Menus {
            estimators: PointEstimator::ALL.to_vec(),
            mse: MseEstimator::ALL.to_vec(),
            intervals: CiMethod::ALL.to_vec(),
        }
    }

    pub fn points_only() -> Self {
        Menus {
            estimators: PointEstimator::ALL.to_vec(),
            mse: Vec::new(),
            intervals: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        for kind in &self.mse {
            if !self.estimators.contains(&kind.scored_against()) {
                return Err(Error::input(format!(
                    "MSE estimator {} needs point estimator {} in the menu",
                    kind.tag(),
                    kind.scored_against().tag()
                )));
            }
        }
        if self
            .intervals
            .iter()
            .any(|c| *c != CiMethod::TDirect)
            && !self.intervals.contains(&CiMethod::TDirect)
        {
            return Err(Error::input(
                "length comparisons need TDirect in the interval menu",
            ));
        }
        Ok(())
    }
}

/// Stored truth for one generated replicate.
#[derive(Debug, Clone)]
pub struct TruthRecord {
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
    /// Direct estimates clamped away from {0, 1} before transforming.
    pub clamped: usize,
}

/// Survey weights for an area of size `n`: the base pattern is repeated
/// across five-unit groups (cycling through a partial trailing group when
/// `n` is not a multiple of five), normalized within each group and then
/// across the area.
pub fn survey_weights(n: usize) -> Vec<f64> {
    let mut group_normalized = Vec::with_capacity(n);
    let mut idx = 0;
    while idx < n {
        let take = (n - idx).min(WEIGHT_PATTERN.len());
        let group = &WEIGHT_PATTERN[..take];
        let sum: f64 = group.iter().sum();
        group_normalized.extend(group.iter().map(|w| w / sum));
        idx += take;
    }
    let total: f64 = group_normalized.iter().sum();
    group_normalized.iter().map(|w| w / total).collect()
}

/// `(Σ w², median weight)` of a weight vector.
pub fn weights_summary(w: &[f64]) -> (f64, f64) {
    let sum_w2 = w.iter().map(|v| v * v).sum();
    let mut sorted = w.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    (sum_w2, median)
}

/// Generate one replicate of the arcsin-transformed Bernoulli design:
/// `θ_i = μ + u_i`, `p_i = ½{1 + sin(θ_i)/(1 + D_i/2)}`,
/// `y_ij ~ Bernoulli(p_i)`, `y_i = Σ w_ij y_ij`, `D_i = Σ w_ij²`.
pub fn generate_replicate(cfg: &SimConfig, replicate: usize) -> Result<(AreaDataset, TruthRecord)> {
    cfg.validate()?;
    let (t, _, _) = catalog("bernoulli-arcsin", &[])?;
    let w = survey_weights(cfg.n_per_area);
    let (d, w_median) = weights_summary(&w);
    let n_eff = 1.0 / d;
    let mut rng = replicate_rng(cfg.scenario_seed(), replicate as u64);

    let m = cfg.m;
    let a_sd = cfg.a_true.sqrt();
    let mut theta = Vec::with_capacity(m);
    let mut p = Vec::with_capacity(m);
    let mut rows = Vec::with_capacity(m);
    let mut clamped = 0usize;

    for i in 0..m {
        let u: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        let th = cfg.mu_true + a_sd * u;
        let pi = 0.5 * (1.0 + th.sin() / (1.0 + d / 2.0));
        theta.push(th);
        p.push(pi);

        let mut y = 0.0;
        for &wj in &w {
            if rng.random::<f64>() < pi {
                y += wj;
            }
        }
        let (y_clamped, was_clamped) = t.clamp_to_domain(y, n_eff);
        if was_clamped {
            clamped += 1;
        }
        let z = t.g(y_clamped)?;
        rows.push(AreaObservation {
            area_id: format!("area{i:03}"),
            y_direct: y,
            z,
            d,
            x: vec![1.0],
            sum_w2: d,
            n: cfg.n_per_area,
            w_median,
        });
    }

    Ok((
        AreaDataset::new(rows)?,
        TruthRecord { theta, p, clamped },
    ))
}

/// `PRB = 100/(mR) Σ_i Σ_r (M̂_i^(r) - M_i)/M_i`.
pub fn percent_relative_bias(mhat_by_replicate: &[Vec<f64>], m_true: &[f64]) -> f64 {
    let r = mhat_by_replicate.len();
    let m = m_true.len();
    let mut total = 0.0;
    for rep in mhat_by_replicate {
        for (i, &mi) in m_true.iter().enumerate() {
            total += (rep[i] - mi) / mi;
        }
    }
    100.0 * total / (m as f64 * r as f64)
}

/// `PRRMSE = 100/m Σ_i f_i` where, under the literal reading,
/// `f_i = [Σ_r (M̂_i^(r) - M_i)²]^(1/2) / (R·M_i)`, and under the
/// conventional reading `f_i = [Σ_r (M̂_i^(r) - M_i)²/R]^(1/2) / M_i`.
pub fn percent_relative_rmse(
    mhat_by_replicate: &[Vec<f64>],
    m_true: &[f64],
    literal: bool,
) -> f64 {
    let r = mhat_by_replicate.len() as f64;
    let m = m_true.len();
    let mut total = 0.0;
    for (i, &mi) in m_true.iter().enumerate() {
        let ss: f64 = mhat_by_replicate
            .iter()
            .map(|rep| {
                let d = rep[i] - mi;
                d * d
            })
            .sum();
        total += if literal {
            ss.sqrt() / (r * mi)
        } else {
            (ss / r).sqrt() / mi
        };
    }
    100.0 * total / m as f64
}

/// A reported value with its Monte Carlo standard error.
#[derive(Debug, Clone, Serialize)]
pub struct NamedCell {
    pub name: String,
    pub value: f64,
    pub mcse: f64,
}

/// Aggregated results for one `(m, n)` scenario.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub m: usize,
    pub n: usize,
    /// Common sampling variance on the transformed scale.
    pub d: f64,
    pub replications_requested: usize,
    pub replications_used: usize,
    pub bias: Vec<NamedCell>,
    pub mse: Vec<NamedCell>,
    pub prb: Vec<NamedCell>,
    pub prrmse: Vec<NamedCell>,
    pub zero_reml_pct: NamedCell,
    pub coverage: Vec<NamedCell>,
    pub avg_length: Vec<NamedCell>,
    pub pct_longer_than_tdirect: Vec<NamedCell>,
    pub failed_replicates: usize,
    pub clamped_direct_estimates: usize,
    /// Set when `n` is not a multiple of the weight-pattern length.
    pub weight_pattern_cycled: bool,
}

/// A full study over several scenarios.
#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub alpha: f64,
    pub master_seed: u64,
    pub prrmse_literal: bool,
    pub scenarios: Vec<ScenarioReport>,
}

struct ReplicateOutcome {
    /// `[estimator][area]` signed errors against the stored truth.
    errors: Vec<Vec<f64>>,
    /// `[mse estimator][area]` estimates.
    mse_values: Vec<Vec<f64>>,
    /// `[interval][area]` coverage of the stored truth.
    covered: Vec<Vec<bool>>,
    /// `[interval][area]` lengths.
    lengths: Vec<Vec<f64>>,
    zero_reml: bool,
    clamped: usize,
}

struct NeedFlags {
    reml_bundle: bool,
    yl_fit: bool,
    yl_bundle: bool,
    ll_fit: bool,
    ms_re: bool,
    ms_yl: bool,
}

impl NeedFlags {
    fn from(menus: &Menus) -> Self {
        let est = |e: PointEstimator| menus.estimators.contains(&e);
        let mse = |k: MseEstimator| menus.mse.contains(&k);
        let ci = |c: CiMethod| menus.intervals.contains(&c);
        NeedFlags {
            reml_bundle: est(PointEstimator::NbtRe)
                || est(PointEstimator::PebRe)
                || est(PointEstimator::EbRe),
            yl_fit: menus
                .estimators
                .iter()
                .any(|e| e.method() == Some(VarianceMethod::YoshimoriLahiri))
                || mse(MseEstimator::M1Yl)
                || mse(MseEstimator::MsYl)
                || mse(MseEstimator::PMsYl)
                || ci(CiMethod::TebYl)
                || ci(CiMethod::Boot),
            yl_bundle: est(PointEstimator::NbtYl)
                || est(PointEstimator::PebYl)
                || est(PointEstimator::EbYl),
            ll_fit: ci(CiMethod::TebB) || ci(CiMethod::PTebB),
            ms_re: mse(MseEstimator::MsRe),
            ms_yl: mse(MseEstimator::MsYl) || mse(MseEstimator::PMsYl),
        }
    }
}

const SEED_MS_RE: u64 = 1 << 33;
const SEED_MS_YL: u64 = 2 << 33;
const SEED_CI_BOOT: u64 = 3 << 33;

fn replicate_outcome(
    cfg: &SimConfig,
    menus: &Menus,
    needs: &NeedFlags,
    t: &Transform,
    coeffs: &LinearDeltaCoeffs,
    r: usize,
) -> Result<ReplicateOutcome> {
    let scen_seed = cfg.scenario_seed();
    let (ds, truth) = generate_replicate(cfg, r)?;

    let fit_re = fit_model(&ds, VarianceMethod::Reml)?;
    let fit_yl = if needs.yl_fit {
        Some(fit_model(&ds, VarianceMethod::YoshimoriLahiri)?)
    } else {
        None
    };
    let fit_ll = if needs.ll_fit {
        Some(fit_model(&ds, VarianceMethod::LiLahiri)?)
    } else {
        None
    };

    let bundle_re: Option<EstimateBundle> = if needs.reml_bundle {
        Some(point_estimates(&ds, &fit_re, t, coeffs)?)
    } else {
        None
    };
    let bundle_yl: Option<EstimateBundle> = if needs.yl_bundle {
        Some(point_estimates(&ds, fit_yl.as_ref().unwrap(), t, coeffs)?)
    } else {
        None
    };

    let m = cfg.m;
    let pick = |bundle: &Option<EstimateBundle>,
                f: fn(&crate::estimators::AreaEstimates) -> f64|
     -> Vec<f64> {
        bundle
            .as_ref()
            .expect("bundle requested but not computed")
            .areas
            .iter()
            .map(f)
            .collect()
    };

    let mut errors = Vec::with_capacity(menus.estimators.len());
    for est in &menus.estimators {
        let values: Vec<f64> = match est {
            PointEstimator::NbtRe => pick(&bundle_re, |a| a.nbt),
            PointEstimator::PebRe => pick(&bundle_re, |a| a.peb),
            PointEstimator::EbRe => pick(&bundle_re, |a| a.eb),
            PointEstimator::NbtYl => pick(&bundle_yl, |a| a.nbt),
            PointEstimator::PebYl => pick(&bundle_yl, |a| a.peb),
            PointEstimator::EbYl => pick(&bundle_yl, |a| a.eb),
            PointEstimator::Direct => ds.observations().iter().map(|o| o.y_direct).collect(),
        };
        errors.push((0..m).map(|i| values[i] - truth.p[i]).collect());
    }

    let ms_re: Option<MseEstimate> = if needs.ms_re {
        Some(ms_estimate(
            &ds,
            &fit_re,
            t,
            coeffs,
            cfg.mse_bootstrap,
            derive_seed(scen_seed, SEED_MS_RE + r as u64),
        )?)
    } else {
        None
    };
    let ms_yl: Option<MseEstimate> = if needs.ms_yl {
        Some(ms_estimate(
            &ds,
            fit_yl.as_ref().unwrap(),
            t,
            coeffs,
            cfg.mse_bootstrap,
            derive_seed(scen_seed, SEED_MS_YL + r as u64),
        )?)
    } else {
        None
    };

    let mut mse_values = Vec::with_capacity(menus.mse.len());
    for kind in &menus.mse {
        let values: Vec<f64> = match kind {
            MseEstimator::M1Re => m1_estimate(&ds, &fit_re, t, coeffs)?,
            MseEstimator::M1Yl => m1_estimate(&ds, fit_yl.as_ref().unwrap(), t, coeffs)?,
            MseEstimator::MsRe => ms_re.as_ref().unwrap().areas.iter().map(|a| a.ms).collect(),
            MseEstimator::MsYl => ms_yl.as_ref().unwrap().areas.iter().map(|a| a.ms).collect(),
            MseEstimator::PMsYl => ms_yl.as_ref().unwrap().areas.iter().map(|a| a.pms).collect(),
        };
        mse_values.push(values);
    }

    // Paired bootstrap intervals share one root sample per replicate.
    let boot_pair = if needs.ll_fit {
        Some(build_bootstrap_intervals(
            &ds,
            fit_ll.as_ref().unwrap(),
            t,
            coeffs,
            cfg.alpha,
            cfg.interval_bootstrap,
            derive_seed(scen_seed, SEED_CI_BOOT + r as u64),
        )?)
    } else {
        None
    };

    let mut covered = Vec::with_capacity(menus.intervals.len());
    let mut lengths = Vec::with_capacity(menus.intervals.len());
    for method in &menus.intervals {
        let cis: Vec<ConfidenceInterval> = match method {
            CiMethod::TebB => boot_pair.as_ref().unwrap().0.clone(),
            CiMethod::PTebB => boot_pair.as_ref().unwrap().1.clone(),
            CiMethod::TebYl | CiMethod::Boot => build_intervals(
                &ds,
                fit_yl.as_ref().unwrap(),
                t,
                coeffs,
                *method,
                cfg.alpha,
                0,
                0,
            )?,
            CiMethod::TDirect | CiMethod::Mpnaive => {
                build_intervals(&ds, &fit_re, t, coeffs, *method, cfg.alpha, 0, 0)?
            }
        };
        covered.push((0..m).map(|i| cis[i].contains(truth.p[i])).collect());
        lengths.push(cis.iter().map(|c| c.length()).collect());
    }

    Ok(ReplicateOutcome {
        errors,
        mse_values,
        covered,
        lengths,
        zero_reml: fit_re.reml_was_zero,
        clamped: truth.clamped,
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard error of the mean of per-replicate statistics.
fn mcse_of_mean(per_replicate: &[f64]) -> f64 {
    let r = per_replicate.len();
    if r < 2 {
        return f64::NAN;
    }
    let m = mean(per_replicate);
    let var = per_replicate.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (r - 1) as f64;
    (var / r as f64).sqrt()
}

/// Run one scenario of the study.
pub fn run_scenario(cfg: &SimConfig, menus: &Menus) -> Result<ScenarioReport> {
    cfg.validate()?;
    menus.validate()?;
    let needs = NeedFlags::from(menus);
    let (t, _, coeffs) = catalog("bernoulli-arcsin", &[])?;

    let outcomes: Vec<Result<ReplicateOutcome>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| replicate_outcome(cfg, menus, &needs, &t, &coeffs, r))
        .collect();

    let failed = outcomes.iter().filter(|o| o.is_err()).count();
    if failed as f64 > 0.01 * cfg.replications as f64 {
        let first = outcomes.iter().find_map(|o| o.as_ref().err());
        return Err(Error::NonConvergence {
            routine: "run_scenario".into(),
            detail: format!(
                "{failed} of {} replicates failed (first: {})",
                cfg.replications,
                first.map_or_else(|| "unknown".into(), |e| e.to_string())
            ),
        });
    }
    let ok: Vec<ReplicateOutcome> = outcomes.into_iter().flatten().collect();
    let r_used = ok.len();
    let m = cfg.m;

    // ---- point estimators: bias and MSE ----
    let mut bias_cells = Vec::new();
    let mut mse_cells = Vec::new();
    let mut simulated_mse: Vec<Vec<f64>> = Vec::new(); // [estimator][area]
    for (e_idx, est) in menus.estimators.iter().enumerate() {
        let mut bias_i = vec![0.0; m];
        let mut mse_i = vec![0.0; m];
        for out in &ok {
            for i in 0..m {
                let e = out.errors[e_idx][i];
                bias_i[i] += e;
                mse_i[i] += e * e;
            }
        }
        for i in 0..m {
            bias_i[i] /= r_used as f64;
            mse_i[i] /= r_used as f64;
        }

        let signs: Vec<f64> = bias_i.iter().map(|b| if *b < 0.0 { -1.0 } else { 1.0 }).collect();
        let bias_stat: Vec<f64> = ok
            .iter()
            .map(|out| {
                (0..m).map(|i| signs[i] * out.errors[e_idx][i]).sum::<f64>() / m as f64
            })
            .collect();
        let mse_stat: Vec<f64> = ok
            .iter()
            .map(|out| {
                (0..m)
                    .map(|i| out.errors[e_idx][i] * out.errors[e_idx][i])
                    .sum::<f64>()
                    / m as f64
            })
            .collect();

        bias_cells.push(NamedCell {
            name: est.tag().into(),
            value: bias_i.iter().map(|b| b.abs()).sum::<f64>() / m as f64,
            mcse: mcse_of_mean(&bias_stat),
        });
        mse_cells.push(NamedCell {
            name: est.tag().into(),
            value: mean(&mse_i),
            mcse: mcse_of_mean(&mse_stat),
        });
        simulated_mse.push(mse_i);
    }

    // ---- MSE estimators: PRB and PRRMSE ----
    let mut prb_cells = Vec::new();
    let mut prrmse_cells = Vec::new();
    for (k_idx, kind) in menus.mse.iter().enumerate() {
        let target_idx = menus
            .estimators
            .iter()
            .position(|e| *e == kind.scored_against())
            .expect("validated above");
        let m_true = &simulated_mse[target_idx];

        let mhat: Vec<Vec<f64>> = ok.iter().map(|out| out.mse_values[k_idx].clone()).collect();
        let prb = percent_relative_bias(&mhat, m_true);
        let prb_stat: Vec<f64> = mhat
            .iter()
            .map(|rep| {
                (0..m)
                    .map(|i| 100.0 * (rep[i] - m_true[i]) / m_true[i])
                    .sum::<f64>()
                    / m as f64
            })
            .collect();
        prb_cells.push(NamedCell {
            name: kind.tag().into(),
            value: prb,
            mcse: mcse_of_mean(&prb_stat),
        });

        let prrmse = percent_relative_rmse(&mhat, m_true, cfg.prrmse_literal);
        prrmse_cells.push(NamedCell {
            name: kind.tag().into(),
            value: prrmse,
            mcse: prrmse_jackknife_mcse(&mhat, m_true, cfg.prrmse_literal),
        });
    }

    // ---- zero-REML percentage ----
    let zero_stat: Vec<f64> = ok
        .iter()
        .map(|o| if o.zero_reml { 100.0 } else { 0.0 })
        .collect();
    let zero_cell = NamedCell {
        name: "zero_reml".into(),
        value: mean(&zero_stat),
        mcse: mcse_of_mean(&zero_stat),
    };

    // ---- intervals ----
    let tdirect_idx = menus.intervals.iter().position(|c| *c == CiMethod::TDirect);
    let mut coverage_cells = Vec::new();
    let mut length_cells = Vec::new();
    let mut longer_cells = Vec::new();
    for (c_idx, method) in menus.intervals.iter().enumerate() {
        let cov_stat: Vec<f64> = ok
            .iter()
            .map(|out| {
                100.0 * out.covered[c_idx].iter().filter(|&&c| c).count() as f64 / m as f64
            })
            .collect();
        coverage_cells.push(NamedCell {
            name: method.tag().into(),
            value: mean(&cov_stat),
            mcse: mcse_of_mean(&cov_stat),
        });

        let len_stat: Vec<f64> = ok
            .iter()
            .map(|out| out.lengths[c_idx].iter().sum::<f64>() / m as f64)
            .collect();
        length_cells.push(NamedCell {
            name: method.tag().into(),
            value: mean(&len_stat),
            mcse: mcse_of_mean(&len_stat),
        });

        if let Some(td) = tdirect_idx {
            if c_idx != td {
                let longer_stat: Vec<f64> = ok
                    .iter()
                    .map(|out| {
                        let longer = (0..m)
                            .filter(|&i| out.lengths[c_idx][i] > out.lengths[td][i])
                            .count();
                        100.0 * longer as f64 / m as f64
                    })
                    .collect();
                longer_cells.push(NamedCell {
                    name: method.tag().into(),
                    value: mean(&longer_stat),
                    mcse: mcse_of_mean(&longer_stat),
                });
            }
        }
    }

    let w = survey_weights(cfg.n_per_area);
    let (d, _) = weights_summary(&w);

    Ok(ScenarioReport {
        m: cfg.m,
        n: cfg.n_per_area,
        d,
        replications_requested: cfg.replications,
        replications_used: r_used,
        bias: bias_cells,
        mse: mse_cells,
        prb: prb_cells,
        prrmse: prrmse_cells,
        zero_reml_pct: zero_cell,
        coverage: coverage_cells,
        avg_length: length_cells,
        pct_longer_than_tdirect: longer_cells,
        failed_replicates: failed,
        clamped_direct_estimates: ok.iter().map(|o| o.clamped).sum(),
        weight_pattern_cycled: !cfg.n_per_area.is_multiple_of(WEIGHT_PATTERN.len()),
    })
}

/// Leave-one-replicate-out jackknife standard error for PRRMSE.
fn prrmse_jackknife_mcse(mhat: &[Vec<f64>], m_true: &[f64], literal: bool) -> f64 {
    let r = mhat.len();
    if r < 2 {
        return f64::NAN;
    }
    let m = m_true.len();
    let totals: Vec<f64> = (0..m)
        .map(|i| mhat.iter().map(|rep| (rep[i] - m_true[i]).powi(2)).sum())
        .collect();
    let count = (r - 1) as f64;
    let loo: Vec<f64> = (0..r)
        .map(|drop| {
            let mut total = 0.0;
            for i in 0..m {
                let t = totals[i] - (mhat[drop][i] - m_true[i]).powi(2);
                let f = if literal {
                    t.max(0.0).sqrt() / count
                } else {
                    (t.max(0.0) / count).sqrt()
                };
                total += f / m_true[i];
            }
            100.0 * total / m as f64
        })
        .collect();
    let loo_mean = mean(&loo);
    let ss: f64 = loo.iter().map(|v| (v - loo_mean).powi(2)).sum();
    (ss * (r - 1) as f64 / r as f64).sqrt()
}

/// Run every scenario in order.
pub fn run_study(configs: &[SimConfig], menus: &Menus) -> Result<SimReport> {
    let scenarios = configs
        .iter()
        .map(|cfg| run_scenario(cfg, menus))
        .collect::<Result<Vec<_>>>()?;
    let first = configs.first();
    Ok(SimReport {
        alpha: first.map_or(0.05, |c| c.alpha),
        master_seed: first.map_or(0, |c| c.master_seed),
        prrmse_literal: first.is_none_or(|c| c.prrmse_literal),
        scenarios,
    })
}

/// Output format for [`emit_tables`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
    Both,
}

struct TableSpec<'a> {
    name: &'static str,
    rows: Vec<(&'a ScenarioReport, &'a [NamedCell])>,
}

fn table_specs(report: &SimReport) -> Vec<TableSpec<'_>> {
    let grab = |name: &'static str, f: fn(&ScenarioReport) -> &[NamedCell]| TableSpec {
        name,
        rows: report.scenarios.iter().map(|s| (s, f(s))).collect(),
    };
    vec![
        grab("bias", |s| &s.bias),
        grab("mse", |s| &s.mse),
        grab("prb", |s| &s.prb),
        grab("prrmse", |s| &s.prrmse),
        TableSpec {
            name: "zero_reml",
            rows: report
                .scenarios
                .iter()
                .map(|s| (s, std::slice::from_ref(&s.zero_reml_pct)))
                .collect(),
        },
        grab("coverage", |s| &s.coverage),
        grab("length", |s| &s.avg_length),
        grab("length_vs_tdirect", |s| &s.pct_longer_than_tdirect),
    ]
}

/// Write one CSV and/or JSON file per table analog. Values are written with
/// shortest round-trip float formatting, so re-parsing reproduces the exact
/// binary values. Returns the paths written.
pub fn emit_tables(report: &SimReport, dir: &Path, format: TableFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for spec in table_specs(report) {
        if matches!(format, TableFormat::Csv | TableFormat::Both) {
            let path = dir.join(format!("{}.csv", spec.name));
            let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
            let mut header = vec!["m".to_string(), "n".to_string()];
            if let Some((_, cells)) = spec.rows.first() {
                for cell in *cells {
                    header.push(cell.name.clone());
                    header.push(format!("{}_mcse", cell.name));
                }
            }
            writeln!(file, "{}", header.join(","))?;
            for (scenario, cells) in &spec.rows {
                let mut row = vec![scenario.m.to_string(), scenario.n.to_string()];
                for cell in *cells {
                    row.push(cell.value.to_string());
                    row.push(cell.mcse.to_string());
                }
                writeln!(file, "{}", row.join(","))?;
            }
            file.flush()?;
            written.push(path);
        }
        if matches!(format, TableFormat::Json | TableFormat::Both) {
            #[derive(Serialize)]
            struct JsonRow<'a> {
                m: usize,
                n: usize,
                cells: &'a [NamedCell],
            }
            #[derive(Serialize)]
            struct JsonTable<'a> {
                table: &'static str,
                alpha: f64,
                master_seed: u64,
                rows: Vec<JsonRow<'a>>,
            }
            let path = dir.join(format!("{}.json", spec.name));
            let table = JsonTable {
                table: spec.name,
                alpha: report.alpha,
                master_seed: report.master_seed,
                rows: spec
                    .rows
                    .iter()
                    .map(|(s, cells)| JsonRow {
                        m: s.m,
                        n: s.n,
                        cells,
                    })
                    .collect(),
            };
            std::fs::write(&path, serde_json::to_string_pretty(&table)?)?;
            written.push(path);
        }
    }
    Ok(written)
}
