//! End-to-end tests of the `vstsae` binary and the ingest round trip.

use std::path::Path;
use std::process::Command;

use vstsae::model::{fit_model, VarianceMethod};
use vstsae::simulation::{generate_replicate, SimConfig};
use vstsae::transforms::{catalog, BoundaryPolicy};
use vstsae_cli::ingest::{ingest_dataset, write_dataset_csv};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vstsae"))
}

fn write_identity_fixture(path: &Path) {
    let mut body = String::from("area_id,y_direct,n,sum_w2\n");
    for (i, z) in [0.2, -0.4, 0.9, 0.1, 0.5, -0.2, 0.7, 0.0, 0.35, -0.6]
        .iter()
        .enumerate()
    {
        body.push_str(&format!("a{i},{z},4,0.25\n"));
    }
    std::fs::write(path, body).unwrap();
}

#[test]
fn transforms_list_prints_catalog() {
    let out = bin().args(["transforms", "list"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for family in vstsae::CATALOG_FAMILIES {
        assert!(text.contains(family), "missing {family} in listing");
    }
    assert!(text.contains("-0.5"), "arcsin b coefficient missing");
}

#[test]
fn estimate_identity_reproduces_classical_eblup() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("data.csv");
    write_identity_fixture(&input);
    let out_dir = dir.path().join("out");
    let status = bin()
        .args([
            "estimate",
            "--input",
            input.to_str().unwrap(),
            "--family",
            "normal-identity",
            "--method",
            "YL",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());

    // Recompute through the library and compare bit-for-bit.
    let (t, qvf, _) = catalog("normal-identity", &[]).unwrap();
    let (ds, _) = ingest_dataset(&input, &t, qvf.k, BoundaryPolicy::Clamp).unwrap();
    let fit = fit_model(&ds, VarianceMethod::YoshimoriLahiri).unwrap();

    let body = std::fs::read_to_string(out_dir.join("estimates.csv")).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next().unwrap(), "area_id,direct,nbt,peb,eb");
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        let eb: f64 = cols[4].parse().unwrap();
        assert_eq!(eb.to_bits(), fit.theta_eb[i].to_bits(), "row {i}");
        assert_eq!(cols[2], cols[4], "nbt != eb at row {i}");
        assert_eq!(cols[3], cols[4], "peb != eb at row {i}");
    }

    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("run_meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["fit"]["method"], "YL");
    assert!(meta["fit"]["reml_was_zero"].is_boolean());
    assert_eq!(meta["dataset"]["m"], 10);
}

#[test]
fn dataset_round_trip_is_exact() {
    let cfg = SimConfig::new(15, 10, 1, 4242);
    let (ds, _) = generate_replicate(&cfg, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.csv");
    write_dataset_csv(&ds, &path).unwrap();

    let (t, qvf, _) = catalog("bernoulli-arcsin", &[]).unwrap();
    let (back, report) = ingest_dataset(&path, &t, qvf.k, BoundaryPolicy::Clamp).unwrap();
    assert_eq!(report.m, ds.m());
    for i in 0..ds.m() {
        let a = ds.obs(i);
        let b = back.obs(i);
        assert_eq!(a.area_id, b.area_id);
        assert_eq!(a.y_direct.to_bits(), b.y_direct.to_bits());
        assert_eq!(a.z.to_bits(), b.z.to_bits());
        assert_eq!(a.d.to_bits(), b.d.to_bits());
        assert_eq!(a.sum_w2.to_bits(), b.sum_w2.to_bits());
        assert_eq!(a.w_median.to_bits(), b.w_median.to_bits());
        assert_eq!(a.n, b.n);
    }
}

#[test]
fn simulate_outputs_are_thread_count_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let status = bin()
            .args([
                "simulate",
                "--m-list",
                "8",
                "--n-list",
                "10",
                "--replications",
                "6",
                "--seed",
                "7",
                "--format",
                "csv",
                "--estimators",
                "EB.RE,EB.YL,Direct",
                "--mse-estimators",
                "M1.RE",
                "--interval-methods",
                "TDirect,Mpnaive",
                "--threads",
                threads,
                "--out-dir",
                out_dir.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out_dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        outputs.push(files);
    }
    assert_eq!(outputs[0].len(), 8, "expected eight table files");
    assert_eq!(outputs[0], outputs[1], "CSV outputs differ across thread counts");
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("data.csv");
    write_identity_fixture(&input);
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        format!(
            "input = {}\nfamily = normal-identity\nmethod = REML\nseed = 11\nbootstrap = 64\n",
            input.display()
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let status = bin()
        .args([
            "mse",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--seed",
            "99",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("run_meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["seed"], 99, "flag must override config seed");
    assert_eq!(meta["config"]["bootstrap"], "64");
    assert_eq!(meta["fit"]["method"], "REML");
}

#[test]
fn exit_codes_classify_failures() {
    // Missing input file -> input error (2).
    let out = bin()
        .args([
            "fit",
            "--input",
            "/nonexistent/data.csv",
            "--family",
            "bernoulli-arcsin",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Boundary rejection -> numerical/domain error (3).
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("data.csv");
    std::fs::write(
        &input,
        "area_id,y_direct,n,sum_w2\na,0.0,10,0.1\nb,0.5,10,0.1\nc,0.4,10,0.1\n",
    )
    .unwrap();
    let out = bin()
        .args([
            "fit",
            "--input",
            input.to_str().unwrap(),
            "--family",
            "bernoulli-arcsin",
            "--boundary",
            "reject",
            "--out-dir",
            dir.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    // Bad schema -> 2.
    std::fs::write(&input, "area_id,y_direct\na,0.5\n").unwrap();
    let out = bin()
        .args([
            "fit",
            "--input",
            input.to_str().unwrap(),
            "--family",
            "bernoulli-arcsin",
            "--out-dir",
            dir.path().join("out2").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn intervals_command_writes_all_requested_methods_and_yates_widens() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("data.csv");
    let cfg = SimConfig::new(12, 10, 1, 99);
    let (ds, _) = generate_replicate(&cfg, 0).unwrap();
    write_dataset_csv(&ds, &input).unwrap();

    let run = |yates: bool, out: &Path| {
        let mut args = vec![
            "intervals".to_string(),
            "--input".into(),
            input.display().to_string(),
            "--family".into(),
            "bernoulli-arcsin".into(),
            "--methods".into(),
            "TDirect,TEB.YL,Boot,TEB.B,pTEB.B,Mpnaive".into(),
            "--bootstrap".into(),
            "250".into(),
            "--seed".into(),
            "3".into(),
            "--plot".into(),
            "--out-dir".into(),
            out.display().to_string(),
        ];
        if yates {
            args.push("--yates".into());
        }
        let status = bin().args(&args).status().unwrap();
        assert!(status.success());
        std::fs::read_to_string(out.join("intervals.csv")).unwrap()
    };

    let plain = run(false, &dir.path().join("plain"));
    let yates = run(true, &dir.path().join("yates"));
    // Six methods x twelve areas plus header.
    assert_eq!(plain.lines().count(), 1 + 6 * 12);
    assert!(plain.contains("TEB.B") && plain.contains("Mpnaive"));
    assert!(dir.path().join("plain/intervals.svg").exists());

    // Yates rows are flagged and at least as wide.
    let parse = |body: &str| -> Vec<(f64, f64)> {
        body.lines()
            .skip(1)
            .map(|l| {
                let c: Vec<&str> = l.split(',').collect();
                (c[2].parse().unwrap(), c[3].parse().unwrap())
            })
            .collect()
    };
    let a = parse(&plain);
    let b = parse(&yates);
    for ((pl, pu), (yl, yu)) in a.iter().zip(&b) {
        // Widens each side, except where the hard [0, 1] bounds bite.
        assert!(*yl <= pl.max(0.0) + 1e-15 && *yu >= pu.min(1.0) - 1e-15);
        assert!((0.0..=1.0).contains(yl) && (0.0..=1.0).contains(yu));
    }
    assert!(yates.contains("true"));
}
