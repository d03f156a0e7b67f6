//! CSV ingestion: area-level records with either precomputed `sum_w2` or
//! per-unit weight columns, optional covariates, and optional overrides for
//! the transformed-scale sampling variance and the median weight.
//!
//! Expected header: `area_id, y_direct, n` plus `sum_w2` or `w1..wK`,
//! covariates `x1..xp`, and optionally `d` and `w_median`. An intercept
//! column is prepended automatically.

use std::path::Path;

use vstsae::error::{Error, Result};
use vstsae::model::{AreaDataset, AreaObservation};
use vstsae::transforms::{BoundaryPolicy, Transform};

/// Diagnostics gathered while loading.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LoadReport {
    pub m: usize,
    pub p: usize,
    /// Direct estimates clamped away from a domain boundary before
    /// transforming.
    pub clamped: usize,
    pub warnings: Vec<String>,
}

struct Layout {
    area_id: usize,
    y_direct: usize,
    n: usize,
    sum_w2: Option<usize>,
    d: Option<usize>,
    w_median: Option<usize>,
    /// Column indices of w1..wK in weight order.
    weights: Vec<usize>,
    /// Column indices of x1..xp in covariate order.
    covariates: Vec<usize>,
}

fn numbered_columns(headers: &[String], prefix: char) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = Vec::new();
    for (idx, h) in headers.iter().enumerate() {
        if let Some(rest) = h.strip_prefix(prefix) {
            if let Ok(k) = rest.parse::<usize>() {
                if k == 0 {
                    return Err(Error::input(format!("column '{h}': indices start at 1")));
                }
                found.push((k, idx));
            }
        }
    }
    found.sort();
    for (pos, (k, _)) in found.iter().enumerate() {
        if *k != pos + 1 {
            return Err(Error::input(format!(
                "{prefix}-columns must be contiguous from {prefix}1; missing {prefix}{}",
                pos + 1
            )));
        }
    }
    Ok(found.into_iter().map(|(_, idx)| idx).collect())
}

fn layout(headers: &[String], warnings: &mut Vec<String>) -> Result<Layout> {
    let find = |name: &str| headers.iter().position(|h| h == name);
    let require = |name: &str| {
        find(name).ok_or_else(|| Error::input(format!("missing required column '{name}'")))
    };
    let weights = numbered_columns(headers, 'w')?;
    let covariates = numbered_columns(headers, 'x')?;
    let l = Layout {
        area_id: require("area_id")?,
        y_direct: require("y_direct")?,
        n: require("n")?,
        sum_w2: find("sum_w2"),
        d: find("d"),
        w_median: find("w_median"),
        weights,
        covariates,
    };
    if l.sum_w2.is_none() && l.weights.is_empty() {
        return Err(Error::input(
            "missing required column 'sum_w2' (or unit-weight columns w1..wK)",
        ));
    }
    let known: Vec<usize> = [
        Some(l.area_id),
        Some(l.y_direct),
        Some(l.n),
        l.sum_w2,
        l.d,
        l.w_median,
    ]
    .into_iter()
    .flatten()
    .chain(l.weights.iter().copied())
    .chain(l.covariates.iter().copied())
    .collect();
    for (idx, h) in headers.iter().enumerate() {
        if !known.contains(&idx) {
            warnings.push(format!("ignoring unrecognized column '{h}'"));
        }
    }
    Ok(l)
}

fn parse_cell(record: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("").trim();
    raw.parse::<f64>().map_err(|_| {
        Error::input(format!("row {row}, column '{name}': non-numeric value '{raw}'"))
    })
}

/// Load a dataset, transforming direct estimates with `t`. When `d` is not
/// supplied it defaults to `k·sum_w2` (the stabilized variance of the
/// transformed direct estimate).
pub fn ingest_dataset(
    path: &Path,
    t: &Transform,
    k: f64,
    policy: BoundaryPolicy,
) -> Result<(AreaDataset, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::input(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::input(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::input(
            "empty input: expected header with columns area_id, y_direct, n, sum_w2, ...",
        ));
    }
    let mut warnings = Vec::new();
    let l = layout(&headers, &mut warnings)?;

    let mut rows = Vec::new();
    let mut clamped = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 2; // 1-based with header
        let record = record.map_err(|e| Error::input(format!("row {row}: {e}")))?;
        let area_id = record.get(l.area_id).unwrap_or("").trim().to_string();
        if area_id.is_empty() {
            return Err(Error::input(format!("row {row}: empty area_id")));
        }
        let y = parse_cell(&record, l.y_direct, row, "y_direct")?;
        let n_val = parse_cell(&record, l.n, row, "n")?;
        if n_val.fract() != 0.0 || n_val < 1.0 {
            return Err(Error::input(format!(
                "row {row}, column 'n': expected a positive integer, got {n_val}"
            )));
        }
        let n = n_val as usize;

        let (sum_w2, w_median_from_weights) = if !l.weights.is_empty() {
            let mut w = Vec::new();
            for (j, &idx) in l.weights.iter().enumerate() {
                let raw = record.get(idx).unwrap_or("").trim();
                if raw.is_empty() {
                    continue;
                }
                let v = parse_cell(&record, idx, row, &format!("w{}", j + 1))?;
                if v < 0.0 {
                    return Err(Error::input(format!(
                        "row {row}, column 'w{}': negative weight {v}",
                        j + 1
                    )));
                }
                w.push(v);
            }
            if w.len() != n {
                return Err(Error::input(format!(
                    "row {row}: {} unit weights but n = {n}",
                    w.len()
                )));
            }
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(Error::input(format!("row {row}: weights sum to zero")));
            }
            for v in &mut w {
                *v /= total;
            }
            let (s, med) = vstsae::simulation::weights_summary(&w);
            (s, Some(med))
        } else {
            (parse_cell(&record, l.sum_w2.unwrap(), row, "sum_w2")?, None)
        };

        let d = match l.d {
            Some(idx) if !record.get(idx).unwrap_or("").trim().is_empty() => {
                let v = parse_cell(&record, idx, row, "d")?;
                if !(v > 0.0) {
                    return Err(Error::input(format!(
                        "row {row}, column 'd': sampling variance must be positive, got {v}"
                    )));
                }
                v
            }
            _ => k * sum_w2,
        };

        let w_median = match l.w_median {
            Some(idx) if !record.get(idx).unwrap_or("").trim().is_empty() => {
                parse_cell(&record, idx, row, "w_median")?
            }
            _ => w_median_from_weights.unwrap_or(0.0),
        };

        let mut x = vec![1.0];
        for (j, &idx) in l.covariates.iter().enumerate() {
            x.push(parse_cell(&record, idx, row, &format!("x{}", j + 1))?);
        }

        let n_eff = 1.0 / sum_w2;
        let (y_used, was_clamped) = t.clamp_to_domain(y, n_eff);
        if was_clamped {
            if policy == BoundaryPolicy::Reject {
                return Err(Error::domain(
                    format!("row {row}: y_direct", ),
                    y,
                    format!("interior of {} (boundary policy: reject)", t.domain),
                ));
            }
            clamped += 1;
        }
        let z = t.g(y_used)?;

        rows.push(AreaObservation {
            area_id,
            y_direct: y,
            z,
            d,
            x,
            sum_w2,
            n,
            w_median,
        });
    }

    let dataset = AreaDataset::new(rows)?;
    let mut report = LoadReport {
        m: dataset.m(),
        p: dataset.p(),
        clamped,
        warnings,
    };
    report
        .warnings
        .extend(dataset.warnings().iter().cloned());
    Ok((dataset, report))
}

/// Write a dataset in the ingestion schema (intercept column omitted).
/// Floats use shortest round-trip formatting, so a write/ingest cycle
/// reproduces the binary values exactly.
pub fn write_dataset_csv(ds: &AreaDataset, path: &Path) -> Result<()> {
    use std::io::Write;
    let p = ds.p();
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec![
        "area_id".to_string(),
        "y_direct".to_string(),
        "n".to_string(),
        "sum_w2".to_string(),
        "w_median".to_string(),
        "d".to_string(),
    ];
    for j in 1..p {
        header.push(format!("x{j}"));
    }
    writeln!(file, "{}", header.join(","))?;
    for obs in ds.observations() {
        let mut row = vec![
            obs.area_id.clone(),
            obs.y_direct.to_string(),
            obs.n.to_string(),
            obs.sum_w2.to_string(),
            obs.w_median.to_string(),
            obs.d.to_string(),
        ];
        for j in 1..p {
            row.push(obs.x[j].to_string());
        }
        writeln!(file, "{}", row.join(","))?;
    }
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use vstsae::transforms::catalog;

    fn write_tmp(body: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_47_area_fixture_with_two_covariates() {
        // Structure mirroring a prefecture-level run: 47 areas, two
        // auxiliary variables, intercept added on load (p = 3).
        let (t, qvf, _) = catalog("bernoulli-arcsin", &[]).unwrap();
        let mut body = String::from("area_id,y_direct,n,sum_w2,x1,x2\n");
        for i in 0..47 {
            let y = 0.08 + 0.003 * (i % 20) as f64;
            let n = 28 + 7 * (i % 40);
            body.push_str(&format!(
                "pref{i:02},{y},{n},{:.6},{:.3},{:.3}\n",
                1.2 / n as f64,
                0.3 + 0.01 * i as f64,
                (i as f64 * 0.7).sin()
            ));
        }
        let f = write_tmp(&body);
        let (ds, report) =
            ingest_dataset(f.path(), &t, qvf.k, BoundaryPolicy::Clamp).unwrap();
        assert_eq!((report.m, report.p), (47, 3));
        assert_eq!(ds.obs(0).x.len(), 3);
        assert_eq!(ds.obs(0).x[0], 1.0);
        // d defaults to k * sum_w2.
        assert_eq!(ds.obs(5).d, qvf.k * ds.obs(5).sum_w2);
        assert_eq!(report.clamped, 0);
    }

    #[test]
    fn unit_weight_columns_are_reduced() {
        let (t, qvf, _) = catalog("bernoulli-arcsin", &[]).unwrap();
        let f = write_tmp(
            "area_id,y_direct,n,w1,w2,w3,w4\n\
             a,0.5,4,1,1,2,2\n\
             b,0.25,3,1,2,1,\n",
        );
        let (ds, _) = ingest_dataset(f.path(), &t, qvf.k, BoundaryPolicy::Clamp).unwrap();
        // Row a: normalized weights (1,1,2,2)/6 -> sum_w2 = 10/36.
        assert!((ds.obs(0).sum_w2 - 10.0 / 36.0).abs() < 1e-15);
        assert!((ds.obs(0).w_median - 1.5 / 6.0).abs() < 1e-15);
        // Row b: three weights, n = 3.
        assert_eq!(ds.obs(1).n, 3);
    }

    #[test]
    fn named_errors() {
        let (t, qvf, _) = catalog("bernoulli-arcsin", &[]).unwrap();
        let missing = write_tmp("area_id,y_direct\na,0.5\n");
        let err = ingest_dataset(missing.path(), &t, qvf.k, BoundaryPolicy::Clamp)
            .unwrap_err()
            .to_string();
        assert!(err.contains("'n'"), "{err}");

        let bad_cell = write_tmp("area_id,y_direct,n,sum_w2\na,oops,10,0.1\n");
        let err = ingest_dataset(bad_cell.path(), &t, qvf.k, BoundaryPolicy::Clamp)
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 2") && err.contains("y_direct"), "{err}");

        let bad_d = write_tmp("area_id,y_direct,n,sum_w2,d\na,0.5,10,0.1,-0.5\n");
        let err = ingest_dataset(bad_d.path(), &t, qvf.k, BoundaryPolicy::Clamp)
            .unwrap_err()
            .to_string();
        assert!(err.contains("'d'"), "{err}");

        let dup = write_tmp("area_id,y_direct,n,sum_w2\na,0.5,10,0.1\na,0.6,10,0.1\n");
        let err = ingest_dataset(dup.path(), &t, qvf.k, BoundaryPolicy::Clamp)
            .unwrap_err()
            .to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn empty_file_names_missing_header() {
        let (t, qvf, _) = catalog("bernoulli-arcsin", &[]).unwrap();
        let f = write_tmp("");
        let err = ingest_dataset(f.path(), &t, qvf.k, BoundaryPolicy::Clamp)
            .unwrap_err()
            .to_string();
        assert!(err.contains("area_id"), "{err}");
    }

    #[test]
    fn boundary_policy_applies() {
        let (t, qvf, _) = catalog("bernoulli-arcsin", &[]).unwrap();
        let f = write_tmp("area_id,y_direct,n,sum_w2\na,0.0,10,0.1\nb,0.5,10,0.1\n");
        let (ds, report) =
            ingest_dataset(f.path(), &t, qvf.k, BoundaryPolicy::Clamp).unwrap();
        assert_eq!(report.clamped, 1);
        assert!(ds.obs(0).z.is_finite());
        let err = ingest_dataset(f.path(), &t, qvf.k, BoundaryPolicy::Reject);
        assert!(err.is_err());
    }
}
