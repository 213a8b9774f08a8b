//! End-to-end checks of the command-line surface: ingestion contracts and
//! error reporting, sweep artifacts, parameter round trips, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_curveclust"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(path: &Path, body: &str) {
    fs::write(path, body).unwrap();
}

#[test]
fn ingest_drops_short_subjects_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("series.csv");
    let mut body = String::from("subject_id,idx,value\n");
    for j in 0..3 {
        body.push_str(&format!("tiny,{j},{}\n", j as f64));
    }
    for j in 0..8 {
        body.push_str(&format!("full,{j},{}\n", j as f64 * 0.5));
    }
    write(&series, &body);

    let out = run(&[
        "ingest",
        "--series",
        series.to_str().unwrap(),
        "--no-covariates",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("too short"), "stderr: {stderr}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/ingest_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["total"], 2);
    assert_eq!(summary["dropped_short"], 1);
    assert_eq!(summary["retained"], 1);
}

#[test]
fn parse_error_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("series.csv");
    write(
        &series,
        "subject_id,idx,value\na,0,1.0\na,1,2.0\na,2,not-a-number\n",
    );
    let out = run(&[
        "ingest",
        "--series",
        series.to_str().unwrap(),
        "--no-covariates",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(":4:"), "expected line 4 in: {stderr}");
}

#[test]
fn duplicate_subject_block_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("series.csv");
    write(
        &series,
        "subject_id,idx,value\na,0,1.0\na,1,2.0\nb,0,3.0\na,2,4.0\n",
    );
    let out = run(&[
        "ingest",
        "--series",
        series.to_str().unwrap(),
        "--no-covariates",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("more than one block"), "stderr: {stderr}");
}

#[test]
fn noncontiguous_indices_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("series.csv");
    write(&series, "subject_id,idx,value\na,0,1.0\na,2,2.0\n");
    let out = run(&[
        "ingest",
        "--series",
        series.to_str().unwrap(),
        "--no-covariates",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("non-contiguous"), "stderr: {stderr}");
}

#[test]
fn empty_file_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("series.csv");
    write(&series, "subject_id,idx,value\n");
    let out = run(&[
        "ingest",
        "--series",
        series.to_str().unwrap(),
        "--no-covariates",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_selection_with_finite_scores() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    let out = run(&[
        "synth",
        "--out",
        gen.to_str().unwrap(),
        "--subjects",
        "30",
        "--seed",
        "5",
    ]);
    assert!(out.status.success());

    let sweep_dir = dir.path().join("sweep");
    let out = run(&[
        "sweep",
        "--series",
        gen.join("series.csv").to_str().unwrap(),
        "--prepared",
        "--no-covariates",
        "--clusters",
        "2,3",
        "--seed",
        "1",
        "--max-iters",
        "40",
        "--out",
        sweep_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let selection = fs::read_to_string(sweep_dir.join("selection.csv")).unwrap();
    let rows: Vec<&str> = selection.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        let aic: f64 = cells[3].parse().unwrap();
        let bic: f64 = cells[4].parse().unwrap();
        assert!(aic.is_finite() && bic.is_finite());
    }
}

#[test]
fn partial_sweep_failure_exits_one_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    assert!(run(&[
        "synth",
        "--out",
        gen.to_str().unwrap(),
        "--subjects",
        "30",
        "--seed",
        "2",
    ])
    .status
    .success());

    let sweep_dir = dir.path().join("sweep");
    let out = run(&[
        "sweep",
        "--series",
        gen.join("series.csv").to_str().unwrap(),
        "--prepared",
        "--no-covariates",
        "--clusters",
        "2,50",
        "--seed",
        "1",
        "--max-iters",
        "30",
        "--out",
        sweep_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sweep_dir.join("manifest.json")).unwrap())
            .unwrap();
    let failures = manifest["failures"].as_array().unwrap();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0]["g"], 50);
    // The healthy entry still produced artifacts.
    assert!(sweep_dir.join("params_G2.json").exists());
}

#[test]
fn saved_params_reproduce_final_loglik() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    assert!(run(&[
        "synth",
        "--out",
        gen.to_str().unwrap(),
        "--subjects",
        "40",
        "--seed",
        "9",
        "--covariates",
    ])
    .status
    .success());

    let fit_dir = dir.path().join("fit");
    assert!(run(&[
        "fit",
        "--series",
        gen.join("series.csv").to_str().unwrap(),
        "--covariates-file",
        gen.join("covariates.csv").to_str().unwrap(),
        "--prepared",
        "--clusters",
        "3",
        "--seed",
        "4",
        "--max-iters",
        "60",
        "--out",
        fit_dir.to_str().unwrap(),
    ])
    .status
    .success());

    // Reload artifacts through the library and recompute the likelihood.
    let params: curveclust::ModelParams = serde_json::from_str(
        &fs::read_to_string(fit_dir.join("params_G3.json")).unwrap(),
    )
    .unwrap();
    let trace = fs::read_to_string(fit_dir.join("loglik_trace_G3.csv")).unwrap();
    let recorded: f64 = trace
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();

    let series = fs::read_to_string(gen.join("series.csv")).unwrap();
    let covs = fs::read_to_string(gen.join("covariates.csv")).unwrap();
    let observations = parse_prepared(&series, &covs);
    let basis = curveclust::BasisSpec::cubic(6).unwrap();
    let prepared = curveclust::mixmodel::prepare(&observations, &basis, false).unwrap();
    let loglik = curveclust::mixmodel::observed_loglik(&prepared, &params).unwrap();
    assert!(
        (loglik - recorded).abs() < 1e-8,
        "reloaded {loglik} vs recorded {recorded}"
    );
}

fn parse_prepared(series: &str, covariates: &str) -> Vec<curveclust::CurveObservation> {
    use std::collections::BTreeMap;
    let mut order = Vec::new();
    let mut grids: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for line in series.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let id = cells[0].to_string();
        if !grids.contains_key(&id) {
            order.push(id.clone());
        }
        let entry = grids.entry(id).or_default();
        entry.0.push(cells[1].parse().unwrap());
        entry.1.push(cells[2].parse().unwrap());
    }
    let mut covs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for line in covariates.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        covs.insert(
            cells[0].to_string(),
            cells[1..].iter().map(|c| c.parse().unwrap()).collect(),
        );
    }
    order
        .into_iter()
        .map(|id| {
            let (times, values) = grids.remove(&id).unwrap();
            curveclust::CurveObservation {
                subject_id: id.clone(),
                times,
                values: nalgebra::DVector::from_vec(values),
                covariates: Some(nalgebra::DVector::from_vec(covs[&id].clone())),
            }
        })
        .collect()
}

#[test]
fn report_emits_summary_and_requested_curves() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    assert!(run(&[
        "synth",
        "--out",
        gen.to_str().unwrap(),
        "--subjects",
        "30",
        "--seed",
        "12",
    ])
    .status
    .success());
    let fit_dir = dir.path().join("fit");
    assert!(run(&[
        "fit",
        "--series",
        gen.join("series.csv").to_str().unwrap(),
        "--prepared",
        "--no-covariates",
        "--clusters",
        "3",
        "--seed",
        "2",
        "--max-iters",
        "40",
        "--out",
        fit_dir.to_str().unwrap(),
    ])
    .status
    .success());

    let rep_dir = dir.path().join("rep");
    let out = run(&[
        "report",
        "--series",
        gen.join("series.csv").to_str().unwrap(),
        "--prepared",
        "--no-covariates",
        "--params",
        fit_dir.join("params_G3.json").to_str().unwrap(),
        "--subjects",
        "s01,s07",
        "--out",
        rep_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(rep_dir.join("posterior_summary.json")).unwrap())
            .unwrap();
    let median = summary["median_max_posterior"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&median));
    assert!(rep_dir.join("fitted_s01.csv").exists());
    assert!(rep_dir.join("fitted_s07.csv").exists());
    // 101-point grid plus header.
    let curve = fs::read_to_string(rep_dir.join("fitted_s01.csv")).unwrap();
    assert_eq!(curve.lines().count(), 102);
}

#[test]
fn raw_mode_seven_cluster_fit_emits_labelled_artifacts() {
    // Raw long-format input with landmarks and external covariates, fit at
    // G = 7: expect seven mean-curve columns and seven labelled covariance
    // matrices with the three covariate rows.
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("series.csv");
    let sidecar = dir.path().join("covs.csv");
    let mut rng_state = 88u64;
    let mut next = move || {
        // Small deterministic LCG keeps the fixture self-contained.
        rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (rng_state >> 33) as f64 / (1u64 << 31) as f64
    };
    let mut body = String::from("subject_id,idx,value\n");
    let mut covs = String::from("subject_id,min_ar,landmark\n");
    for s in 0..70 {
        let n = 10 + (s % 9);
        let peak = n / 4 + (s % 3);
        for j in 0..n {
            let bump = if j == peak { 40.0 } else { 0.0 };
            let v = 100.0 + 10.0 * next() + bump + 3.0 * (s % 7) as f64;
            body.push_str(&format!("y{s},{j},{v}\n"));
        }
        covs.push_str(&format!("y{s},{},0.{}\n", 2.0 + next(), 25 + (s % 50)));
    }
    write(&series, &body);
    write(&sidecar, &covs);

    let fit_dir = dir.path().join("fit");
    let out = run(&[
        "fit",
        "--series",
        series.to_str().unwrap(),
        "--covariates-file",
        sidecar.to_str().unwrap(),
        "--clusters",
        "7",
        "--seed",
        "3",
        "--max-iters",
        "40",
        "--out",
        fit_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let curves = fs::read_to_string(fit_dir.join("mean_curves_G7.csv")).unwrap();
    let header = curves.lines().next().unwrap();
    assert_eq!(
        header,
        "t,overall,cluster_1,cluster_2,cluster_3,cluster_4,cluster_5,cluster_6,cluster_7"
    );
    assert_eq!(curves.lines().count(), 102);

    for k in 1..=7 {
        let path = fit_dir.join(format!("covariance_G7_cluster_{k}.csv"));
        let cov = fs::read_to_string(&path).unwrap();
        let header = cov.lines().next().unwrap();
        assert!(
            header.ends_with("coef_8,mean_gray,width,min_ar"),
            "covariance header: {header}"
        );
        // 11 x 11 block: header plus eleven labelled rows.
        assert_eq!(cov.lines().count(), 12);
    }
}

#[test]
fn standardized_covariates_are_recorded_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    assert!(run(&[
        "synth",
        "--out",
        gen.to_str().unwrap(),
        "--subjects",
        "40",
        "--seed",
        "14",
        "--covariates",
    ])
    .status
    .success());
    let fit_dir = dir.path().join("fit");
    let out = run(&[
        "fit",
        "--series",
        gen.join("series.csv").to_str().unwrap(),
        "--covariates-file",
        gen.join("covariates.csv").to_str().unwrap(),
        "--prepared",
        "--standardize-covariates",
        "--clusters",
        "3",
        "--seed",
        "2",
        "--max-iters",
        "60",
        "--out",
        fit_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fit_dir.join("manifest.json")).unwrap()).unwrap();
    let scaling = manifest["covariate_scaling"].as_array().unwrap();
    assert_eq!(scaling.len(), 3);
    for pair in scaling {
        assert!(pair[1].as_f64().unwrap() > 0.0, "positive scale");
    }
}

#[test]
fn synth_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert!(run(&[
            "synth",
            "--out",
            out.to_str().unwrap(),
            "--subjects",
            "25",
            "--seed",
            "33",
            "--covariates",
        ])
        .status
        .success());
    }
    for name in ["series.csv", "covariates.csv", "labels.csv"] {
        let x = fs::read(a.join(name)).unwrap();
        let y = fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical synth runs");
    }
}
