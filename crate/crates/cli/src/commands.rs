//! Command implementations. Each command ingests/validates inputs, runs the
//! corresponding library operations, and writes its artifacts plus a
//! `run_meta.json` under the output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;
use vstsae::error::{Error, Result};
use vstsae::estimators::{point_estimates_with_nodes, DEFAULT_QUADRATURE_NODES};
use vstsae::intervals::{
    build_bootstrap_intervals, build_intervals, yates_correct, CiMethod, ConfidenceInterval,
};
use vstsae::model::{fit_model, AreaDataset, ModelFit, VarianceMethod};
use vstsae::mse::ms_estimate;
use vstsae::simulation::{
    emit_tables, run_study, Menus, MseEstimator, PointEstimator, SimConfig, TableFormat,
};
use vstsae::transforms::{catalog, BoundaryPolicy, LinearDeltaCoeffs, Transform};

use crate::ingest::{ingest_dataset, LoadReport};
use crate::output::{self, RunMeta};
use crate::plot::{whisker_plot_svg, PlotArea};

/// Fully resolved data-loading options.
#[derive(Debug, Clone)]
pub struct DataOptions {
    pub input: PathBuf,
    pub family: String,
    pub shape: Vec<f64>,
    pub method: VarianceMethod,
    pub boundary: BoundaryPolicy,
}

pub struct LoadedModel {
    pub dataset: AreaDataset,
    pub report: LoadReport,
    pub transform: Transform,
    pub coeffs: LinearDeltaCoeffs,
    pub k: f64,
}

pub fn load(data: &DataOptions) -> Result<LoadedModel> {
    let (transform, qvf, coeffs) = catalog(&data.family, &data.shape)?;
    let (dataset, report) = ingest_dataset(&data.input, &transform, qvf.k, data.boundary)?;
    Ok(LoadedModel {
        dataset,
        report,
        transform,
        coeffs,
        k: qvf.k,
    })
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn meta_base(
    command: &str,
    echo: &BTreeMap<String, String>,
    loaded: &LoadedModel,
    fit: Option<&ModelFit>,
) -> RunMeta {
    let mut meta = RunMeta::new(command, echo);
    meta.set(
        "dataset",
        json!({
            "m": loaded.report.m,
            "p": loaded.report.p,
            "clamped_inputs": loaded.report.clamped,
            "warnings": loaded.report.warnings,
        }),
    );
    meta.set(
        "transform",
        json!({
            "family": loaded.transform.name,
            "domain": [loaded.transform.domain.lo, loaded.transform.domain.hi],
            "a": loaded.coeffs.a,
            "b": loaded.coeffs.b,
            "k": loaded.k,
        }),
    );
    if let Some(fit) = fit {
        meta.set(
            "fit",
            json!({
                "method": fit.method.tag(),
                "a_hat": fit.a_hat,
                "reml_was_zero": fit.reml_was_zero,
                "a_search_max": fit.a_search_max,
            }),
        );
    }
    meta
}

pub fn cmd_fit(out_dir: &Path, echo: &BTreeMap<String, String>, data: &DataOptions) -> Result<()> {
    ensure_out_dir(out_dir)?;
    let loaded = load(data)?;
    let fit = fit_model(&loaded.dataset, data.method)?;
    output::fit_file(out_dir, &fit)?;
    meta_base("fit", echo, &loaded, Some(&fit)).write(out_dir)?;
    println!(
        "fit: m={} p={} method={} A_hat={} reml_was_zero={}",
        loaded.report.m,
        loaded.report.p,
        fit.method.tag(),
        fit.a_hat,
        fit.reml_was_zero
    );
    Ok(())
}

pub fn cmd_estimate(
    out_dir: &Path,
    echo: &BTreeMap<String, String>,
    data: &DataOptions,
    nodes: usize,
    plot: bool,
) -> Result<()> {
    ensure_out_dir(out_dir)?;
    let loaded = load(data)?;
    let fit = fit_model(&loaded.dataset, data.method)?;
    let bundle = point_estimates_with_nodes(
        &loaded.dataset,
        &fit,
        &loaded.transform,
        &loaded.coeffs,
        nodes,
    )?;
    output::estimates_files(out_dir, &bundle)?;
    let mut meta = meta_base("estimate", echo, &loaded, Some(&fit));
    meta.set(
        "estimates",
        json!({
            "clamped_outputs": bundle.clamped,
            "quadrature_nodes": nodes,
            "nodes_outside_range": bundle.nodes_outside_range,
        }),
    );
    meta.write(out_dir)?;

    if plot {
        let areas: Vec<PlotArea> = loaded
            .dataset
            .observations()
            .iter()
            .zip(&bundle.areas)
            .map(|(obs, est)| PlotArea {
                label: obs.area_id.clone(),
                n: obs.n,
                points: vec![("direct".into(), est.direct), ("eb".into(), est.eb)],
                whiskers: vec![],
            })
            .collect();
        std::fs::write(
            out_dir.join("estimates.svg"),
            whisker_plot_svg("point estimates by area", &areas),
        )?;
    }
    println!("estimate: wrote {} areas to {}", bundle.areas.len(), out_dir.display());
    Ok(())
}

pub fn cmd_mse(
    out_dir: &Path,
    echo: &BTreeMap<String, String>,
    data: &DataOptions,
    bootstrap: usize,
    seed: u64,
) -> Result<()> {
    ensure_out_dir(out_dir)?;
    let loaded = load(data)?;
    let fit = fit_model(&loaded.dataset, data.method)?;
    let est = ms_estimate(
        &loaded.dataset,
        &fit,
        &loaded.transform,
        &loaded.coeffs,
        bootstrap,
        seed,
    )?;
    output::mse_files(out_dir, &est)?;
    let mut meta = meta_base("mse", echo, &loaded, Some(&fit));
    meta.set("seed", json!(seed));
    meta.set(
        "bootstrap",
        json!({
            "b": bootstrap,
            "failed_replicates": est.failed_replicates,
            "floored": est.floored,
        }),
    );
    meta.write(out_dir)?;
    println!(
        "mse: wrote {} areas (B={bootstrap}, {} refits failed) to {}",
        est.areas.len(),
        est.failed_replicates,
        out_dir.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_intervals(
    out_dir: &Path,
    echo: &BTreeMap<String, String>,
    data: &DataOptions,
    methods: &[CiMethod],
    alpha: f64,
    bootstrap: usize,
    seed: u64,
    yates: bool,
    plot: bool,
) -> Result<()> {
    ensure_out_dir(out_dir)?;
    if methods.is_empty() {
        return Err(Error::input("no interval methods requested"));
    }
    let loaded = load(data)?;
    let ds = &loaded.dataset;
    let t = &loaded.transform;
    let coeffs = &loaded.coeffs;

    // Fits per requirement; the user-selected method drives the
    // unconstrained intervals.
    let fit_user = fit_model(ds, data.method)?;
    let fit_yl = if methods.contains(&CiMethod::TebYl) || methods.contains(&CiMethod::Boot) {
        if data.method == VarianceMethod::YoshimoriLahiri {
            Some(fit_user.clone())
        } else {
            Some(fit_model(ds, VarianceMethod::YoshimoriLahiri)?)
        }
    } else {
        None
    };
    let need_ll = methods.contains(&CiMethod::TebB) || methods.contains(&CiMethod::PTebB);
    let fit_ll = if need_ll {
        if data.method == VarianceMethod::LiLahiri {
            Some(fit_user.clone())
        } else {
            Some(fit_model(ds, VarianceMethod::LiLahiri)?)
        }
    } else {
        None
    };
    let boot_pair = if need_ll {
        Some(build_bootstrap_intervals(
            ds,
            fit_ll.as_ref().unwrap(),
            t,
            coeffs,
            alpha,
            bootstrap,
            seed,
        )?)
    } else {
        None
    };

    let mut sets: Vec<(String, Vec<ConfidenceInterval>)> = Vec::new();
    for method in methods {
        let cis = match method {
            CiMethod::TebB => boot_pair.as_ref().unwrap().0.clone(),
            CiMethod::PTebB => boot_pair.as_ref().unwrap().1.clone(),
            CiMethod::TebYl | CiMethod::Boot => build_intervals(
                ds,
                fit_yl.as_ref().unwrap(),
                t,
                coeffs,
                *method,
                alpha,
                0,
                0,
            )?,
            CiMethod::TDirect | CiMethod::Mpnaive => {
                build_intervals(ds, &fit_user, t, coeffs, *method, alpha, 0, 0)?
            }
        };
        let cis = if yates {
            cis.iter()
                .zip(ds.observations())
                .map(|(ci, obs)| yates_correct(ci, obs.w_median, t))
                .collect::<Result<Vec<_>>>()?
        } else {
            cis
        };
        sets.push((method.tag().to_string(), cis));
    }

    let ids: Vec<String> = ds.observations().iter().map(|o| o.area_id.clone()).collect();
    output::interval_files(out_dir, &ids, &sets)?;
    let mut meta = meta_base("intervals", echo, &loaded, Some(&fit_user));
    meta.set("seed", json!(seed));
    meta.set("alpha", json!(alpha));
    meta.set("yates", json!(yates));
    meta.set(
        "methods",
        json!(methods.iter().map(|m| m.tag()).collect::<Vec<_>>()),
    );
    if let Some(fit) = &fit_ll {
        meta.set(
            "fit_ll",
            json!({"a_hat": fit.a_hat, "bootstrap_b": bootstrap}),
        );
    }
    meta.write(out_dir)?;

    if plot {
        let bundle = point_estimates_with_nodes(
            ds,
            &fit_user,
            t,
            coeffs,
            DEFAULT_QUADRATURE_NODES,
        )?;
        let areas: Vec<PlotArea> = ds
            .observations()
            .iter()
            .enumerate()
            .map(|(i, obs)| PlotArea {
                label: obs.area_id.clone(),
                n: obs.n,
                points: vec![("eb".into(), bundle.areas[i].eb)],
                whiskers: sets
                    .iter()
                    .map(|(tag, cis)| (tag.clone(), cis[i].lower, cis[i].upper))
                    .collect(),
            })
            .collect();
        std::fs::write(
            out_dir.join("intervals.svg"),
            whisker_plot_svg("interval estimates by area", &areas),
        )?;
    }
    println!(
        "intervals: wrote {} methods x {} areas to {}",
        sets.len(),
        ids.len(),
        out_dir.display()
    );
    Ok(())
}

/// Resolved simulation options.
#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub m_list: Vec<usize>,
    pub n_list: Vec<usize>,
    pub replications: usize,
    pub mse_bootstrap: usize,
    pub interval_bootstrap: usize,
    pub seed: u64,
    pub alpha: f64,
    pub prrmse_literal: bool,
    pub format: TableFormat,
    pub menus: Menus,
}

pub fn cmd_simulate(
    out_dir: &Path,
    echo: &BTreeMap<String, String>,
    opts: &SimulateOptions,
) -> Result<()> {
    ensure_out_dir(out_dir)?;
    let mut configs = Vec::new();
    for &m in &opts.m_list {
        for &n in &opts.n_list {
            let mut cfg = SimConfig::new(m, n, opts.replications, opts.seed);
            cfg.mse_bootstrap = opts.mse_bootstrap;
            cfg.interval_bootstrap = opts.interval_bootstrap;
            cfg.alpha = opts.alpha;
            cfg.prrmse_literal = opts.prrmse_literal;
            configs.push(cfg);
        }
    }
    let report = run_study(&configs, &opts.menus)?;
    let paths = emit_tables(&report, out_dir, opts.format)?;

    let mut meta = RunMeta::new("simulate", echo);
    meta.set("seed", json!(opts.seed));
    meta.set("alpha", json!(opts.alpha));
    meta.set(
        "scenarios",
        json!(report
            .scenarios
            .iter()
            .map(|s| json!({
                "m": s.m,
                "n": s.n,
                "d": s.d,
                "replications_used": s.replications_used,
                "failed_replicates": s.failed_replicates,
                "zero_reml_pct": s.zero_reml_pct.value,
                "clamped_direct_estimates": s.clamped_direct_estimates,
                "weight_pattern_cycled": s.weight_pattern_cycled,
            }))
            .collect::<Vec<_>>()),
    );
    meta.set(
        "tables",
        json!(paths
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect::<Vec<_>>()),
    );
    meta.write(out_dir)?;
    println!(
        "simulate: {} scenarios, {} table files in {}",
        report.scenarios.len(),
        paths.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn cmd_transforms_list(shape: Option<f64>) -> Result<()> {
    let fnum = |v: f64| {
        let s = format!("{v}");
        if s.len() > 10 {
            format!("{v:.4}")
        } else {
            s
        }
    };
    println!(
        "{:<18} {:<14} {:>10} {:>6}  {:<28} shape",
        "family", "domain", "a", "b", "qvf (c0, c1, c2; k)"
    );
    for family in vstsae::CATALOG_FAMILIES {
        let needs_shape = matches!(family, "negbinomial" | "gamma-log" | "lognormal");
        let shape_vec: Vec<f64> = if needs_shape {
            vec![shape.unwrap_or(1.0)]
        } else {
            vec![]
        };
        let (t, qvf, coeffs) = catalog(family, &shape_vec)?;
        let shape_note = if needs_shape {
            fnum(shape_vec[0])
        } else {
            "-".to_string()
        };
        println!(
            "{:<18} {:<14} {:>10} {:>6}  {:<28} {}",
            family,
            t.domain.to_string(),
            fnum(coeffs.a),
            fnum(coeffs.b),
            format!(
                "({}, {}, {}; {})",
                fnum(qvf.c0),
                fnum(qvf.c1),
                fnum(qvf.c2),
                fnum(qvf.k)
            ),
            shape_note
        );
    }
    Ok(())
}

/// Parse a comma-separated interval method list.
pub fn parse_ci_methods(raw: &str) -> Result<Vec<CiMethod>> {
    raw.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

/// Parse a comma-separated point-estimator list by tag.
pub fn parse_point_estimators(raw: &str) -> Result<Vec<PointEstimator>> {
    raw.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            PointEstimator::ALL
                .iter()
                .copied()
                .find(|e| e.tag().eq_ignore_ascii_case(s))
                .ok_or_else(|| Error::input(format!("unknown point estimator '{s}'")))
        })
        .collect()
}

/// Parse a comma-separated MSE-estimator list by tag.
pub fn parse_mse_estimators(raw: &str) -> Result<Vec<MseEstimator>> {
    raw.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            MseEstimator::ALL
                .iter()
                .copied()
                .find(|e| e.tag().eq_ignore_ascii_case(s))
                .ok_or_else(|| Error::input(format!("unknown MSE estimator '{s}'")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_menu_lists() {
        let cis = parse_ci_methods("TDirect, teb.b ,mpnaive").unwrap();
        assert_eq!(cis, vec![CiMethod::TDirect, CiMethod::TebB, CiMethod::Mpnaive]);
        let est = parse_point_estimators("EB.RE,direct").unwrap();
        assert_eq!(est, vec![PointEstimator::EbRe, PointEstimator::Direct]);
        let mse = parse_mse_estimators("M1.YL,pMs.YL").unwrap();
        assert_eq!(mse, vec![MseEstimator::M1Yl, MseEstimator::PMsYl]);
        assert!(parse_ci_methods("bogus").is_err());
    }
}
