//! Result files: per-area CSV/JSON tables and the run-metadata document.
//!
//! Every number is written with shortest round-trip formatting so emitted
//! files are byte-stable and re-parse to the exact binary values the
//! library produced. Metadata carries no timestamps: outputs are a pure
//! function of (input bytes, configuration, seed).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use vstsae::error::Result;
use vstsae::estimators::EstimateBundle;
use vstsae::intervals::ConfidenceInterval;
use vstsae::model::ModelFit;
use vstsae::mse::MseEstimate;

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(io_like)?;
    w.write_record(header).map_err(io_like)?;
    for row in rows {
        w.write_record(row).map_err(io_like)?;
    }
    w.flush()?;
    Ok(())
}

fn io_like(e: csv::Error) -> vstsae::Error {
    vstsae::Error::Input(format!("csv write error: {e}"))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(serde_json::to_string_pretty(value)?.as_bytes())?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

pub fn estimates_files(dir: &Path, bundle: &EstimateBundle) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join("estimates.csv");
    let rows: Vec<Vec<String>> = bundle
        .areas
        .iter()
        .map(|a| {
            vec![
                a.area_id.clone(),
                a.direct.to_string(),
                a.nbt.to_string(),
                a.peb.to_string(),
                a.eb.to_string(),
            ]
        })
        .collect();
    write_csv(
        &csv_path,
        &["area_id", "direct", "nbt", "peb", "eb"],
        &rows,
    )?;
    let json_path = dir.join("estimates.json");
    write_json(&json_path, &serde_json::to_value(bundle)?)?;
    Ok(vec![csv_path, json_path])
}

pub fn mse_files(dir: &Path, est: &MseEstimate) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join("mse.csv");
    let method = est.method.tag();
    let rows: Vec<Vec<String>> = est
        .areas
        .iter()
        .map(|a| {
            vec![
                a.area_id.clone(),
                method.to_string(),
                a.m1.to_string(),
                a.ms.to_string(),
                a.pms.to_string(),
                a.multiplier.to_string(),
            ]
        })
        .collect();
    write_csv(
        &csv_path,
        &["area_id", "method", "m1", "ms", "pms", "multiplier"],
        &rows,
    )?;
    let json_path = dir.join("mse.json");
    write_json(&json_path, &serde_json::to_value(est)?)?;
    Ok(vec![csv_path, json_path])
}

pub fn interval_files(
    dir: &Path,
    ids: &[String],
    sets: &[(String, Vec<ConfidenceInterval>)],
) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join("intervals.csv");
    let mut rows = Vec::new();
    for (tag, cis) in sets {
        for (id, ci) in ids.iter().zip(cis) {
            rows.push(vec![
                id.clone(),
                tag.clone(),
                ci.lower.to_string(),
                ci.upper.to_string(),
                ci.alpha.to_string(),
                ci.yates_applied.to_string(),
            ]);
        }
    }
    write_csv(
        &csv_path,
        &["area_id", "method", "lower", "upper", "alpha", "yates_applied"],
        &rows,
    )?;
    let json_path = dir.join("intervals.json");
    let value = json!({
        "methods": sets
            .iter()
            .map(|(tag, cis)| {
                json!({
                    "method": tag,
                    "areas": ids
                        .iter()
                        .zip(cis)
                        .map(|(id, ci)| json!({
                            "area_id": id,
                            "lower": ci.lower,
                            "upper": ci.upper,
                            "alpha": ci.alpha,
                            "yates_applied": ci.yates_applied,
                        }))
                        .collect::<Vec<_>>(),
                })
            })
            .collect::<Vec<_>>(),
    });
    write_json(&json_path, &value)?;
    Ok(vec![csv_path, json_path])
}

pub fn fit_file(dir: &Path, fit: &ModelFit) -> Result<PathBuf> {
    let path = dir.join("fit.json");
    write_json(&path, &serde_json::to_value(fit)?)?;
    Ok(path)
}

/// Assemble and write `run_meta.json`.
pub struct RunMeta {
    fields: Map<String, Value>,
}

impl RunMeta {
    pub fn new(command: &str, config: &BTreeMap<String, String>) -> Self {
        let mut fields = Map::new();
        fields.insert("tool".into(), json!("vstsae"));
        fields.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        fields.insert("command".into(), json!(command));
        fields.insert("config".into(), json!(config));
        RunMeta { fields }
    }

    pub fn set(&mut self, key: &str, value: Value) -> &mut Self {
        self.fields.insert(key.into(), value);
        self
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("run_meta.json");
        write_json(&path, &Value::Object(self.fields.clone()))?;
        Ok(path)
    }
}
