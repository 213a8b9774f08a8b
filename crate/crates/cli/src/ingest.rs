//! CSV ingestion: the raw long-format series plus the covariate sidecar,
//! preprocessing orchestration, and the prepared-mode reader used for
//! synthetic or re-exported data.

use crate::{CliError, CliResult, InputArgs};
use curveclust::preprocess::{
    self, CurveObservation, Prepared, PreprocessOptions, RawSeries,
};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

/// Observations ready for fitting plus everything reporting needs to label
/// artifacts.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub observations: Vec<CurveObservation>,
    pub covariate_names: Vec<String>,
    pub counts: IngestCounts,
    /// Mean/SD per covariate when standardization was applied.
    pub covariate_scaling: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestCounts {
    pub total: usize,
    pub dropped_missing: usize,
    pub dropped_short: usize,
    pub dropped_no_landmark: usize,
    pub retained: usize,
}

fn parse_value(field: &str) -> CliResult<f64> {
    let trimmed = field.trim();
    if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("na") || trimmed.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    trimmed
        .parse::<f64>()
        .map_err(|_| CliError::Input(format!("unparseable number '{trimmed}'")))
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Read the raw long-format series: `subject_id,idx,value` with contiguous
/// indices from 0 and each subject in one contiguous block.
pub fn read_raw_series(path: &Path) -> CliResult<Vec<RawSeries>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    check_headers(&mut reader, path, &["subject_id", "idx", "value"])?;

    let mut series: Vec<RawSeries> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for result in reader.records() {
        let record = result.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let line = line_of(&record);
        if record.len() != 3 {
            return Err(CliError::Input(format!(
                "{}:{line}: expected 3 fields, got {}",
                path.display(),
                record.len()
            )));
        }
        let id = record[0].trim().to_string();
        let idx: usize = record[1].trim().parse().map_err(|_| {
            CliError::Input(format!(
                "{}:{line}: bad index '{}'",
                path.display(),
                &record[1]
            ))
        })?;
        let value = parse_value(&record[2])
            .map_err(|e| CliError::Input(format!("{}:{line}: {e}", path.display())))?;

        match seen.get(&id) {
            Some(&pos) => {
                if pos != series.len() - 1 {
                    return Err(CliError::Input(format!(
                        "{}:{line}: subject '{id}' appears in more than one block",
                        path.display()
                    )));
                }
                let entry = &mut series[pos];
                if idx != entry.pixel_values.len() {
                    return Err(CliError::Input(format!(
                        "{}:{line}: subject '{id}' has non-contiguous index {idx} (expected {})",
                        path.display(),
                        entry.pixel_values.len()
                    )));
                }
                entry.pixel_values.push(value);
            }
            None => {
                if idx != 0 {
                    return Err(CliError::Input(format!(
                        "{}:{line}: subject '{id}' must start at index 0, got {idx}",
                        path.display()
                    )));
                }
                seen.insert(id.clone(), series.len());
                series.push(RawSeries {
                    subject_id: id,
                    pixel_values: vec![value],
                    landmark: None,
                });
            }
        }
    }
    if series.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(series)
}

/// Raw-mode sidecar rows: per-subject external covariate and landmark.
#[derive(Debug, Clone, Default)]
pub struct SidecarRow {
    pub min_ar: Option<f64>,
    pub landmark: Option<f64>,
}

pub fn read_raw_sidecar(path: &Path) -> CliResult<BTreeMap<String, SidecarRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    check_headers(&mut reader, path, &["subject_id", "min_ar", "landmark"])?;

    let mut rows = BTreeMap::new();
    for result in reader.records() {
        let record = result.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let line = line_of(&record);
        let id = record[0].trim().to_string();
        if rows.contains_key(&id) {
            return Err(CliError::Input(format!(
                "{}:{line}: duplicate covariate row for subject '{id}'",
                path.display()
            )));
        }
        let min_ar = parse_value(&record[1])
            .map_err(|e| CliError::Input(format!("{}:{line}: {e}", path.display())))?;
        let landmark = parse_value(&record[2])
            .map_err(|e| CliError::Input(format!("{}:{line}: {e}", path.display())))?;
        rows.insert(
            id,
            SidecarRow {
                min_ar: min_ar.is_finite().then_some(min_ar),
                landmark: landmark.is_finite().then_some(landmark),
            },
        );
    }
    Ok(rows)
}

/// Run the preprocessing pipeline over a raw series file.
pub fn load_raw(input: &InputArgs) -> CliResult<DataBundle> {
    let mut series = read_raw_series(&input.series)?;
    let sidecar = match &input.covariates_file {
        Some(path) => read_raw_sidecar(path)?,
        None => BTreeMap::new(),
    };
    for s in &mut series {
        if let Some(row) = sidecar.get(&s.subject_id) {
            s.landmark = row.landmark;
        }
    }

    let with_covariates = input.with_covariates();
    let options = PreprocessOptions {
        warp_target: input.warp_target,
        min_length: input.min_length,
        landmark_policy: input.landmark_policy(),
        with_covariates,
    };

    let mut counts = IngestCounts {
        total: series.len(),
        ..Default::default()
    };
    let mut observations = Vec::new();
    for raw in &series {
        let extra: BTreeMap<String, f64> = sidecar
            .get(&raw.subject_id)
            .and_then(|row| row.min_ar)
            .map(|v| {
                let mut m = BTreeMap::new();
                m.insert("min_ar".to_string(), v);
                m
            })
            .unwrap_or_default();
        let prepared = preprocess::process_subject(raw, Some(&extra), &options)
            .map_err(CliError::from_core)?;
        match prepared {
            Prepared::Kept(obs, warnings) => {
                for w in warnings {
                    eprintln!("warning: {w}");
                }
                observations.push(*obs);
            }
            Prepared::Dropped(reason) => {
                use curveclust::preprocess::DropReason::*;
                match reason {
                    NonFiniteValues => counts.dropped_missing += 1,
                    TooShort { n } => {
                        counts.dropped_short += 1;
                        eprintln!(
                            "warning: subject '{}' too short (n = {n}); dropped",
                            raw.subject_id
                        );
                    }
                    MissingLandmark => counts.dropped_no_landmark += 1,
                }
            }
        }
    }
    counts.retained = observations.len();
    if observations.is_empty() {
        return Err(CliError::Input("no subjects survived preprocessing".into()));
    }

    let covariate_names = if with_covariates {
        vec![
            "mean_gray".to_string(),
            "width".to_string(),
            "min_ar".to_string(),
        ]
    } else {
        Vec::new()
    };
    let mut bundle = DataBundle {
        observations,
        covariate_names,
        counts,
        covariate_scaling: None,
    };
    if input.standardize_covariates {
        standardize(&mut bundle);
    }
    Ok(bundle)
}

/// Read prepared-mode data: `subject_id,t,value` plus an optional covariate
/// table whose columns are used verbatim.
pub fn load_prepared(input: &InputArgs) -> CliResult<DataBundle> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&input.series)
        .map_err(|e| CliError::Input(format!("{}: {e}", input.series.display())))?;
    check_headers(&mut reader, &input.series, &["subject_id", "t", "value"])?;

    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for result in reader.records() {
        let record =
            result.map_err(|e| CliError::Input(format!("{}: {e}", input.series.display())))?;
        let line = line_of(&record);
        let id = record[0].trim().to_string();
        let t = parse_value(&record[1])
            .map_err(|e| CliError::Input(format!("{}:{line}: {e}", input.series.display())))?;
        let v = parse_value(&record[2])
            .map_err(|e| CliError::Input(format!("{}:{line}: {e}", input.series.display())))?;
        if !t.is_finite() || !v.is_finite() {
            return Err(CliError::Input(format!(
                "{}:{line}: prepared data must be finite",
                input.series.display()
            )));
        }
        if !by_id.contains_key(&id) {
            order.push(id.clone());
        }
        let entry = by_id.entry(id).or_default();
        entry.0.push(t);
        entry.1.push(v);
    }
    if order.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no data rows",
            input.series.display()
        )));
    }

    let with_covariates = input.with_covariates();
    let (covariates, covariate_names) = match (&input.covariates_file, with_covariates) {
        (Some(path), true) => {
            let (map, names) = read_prepared_covariates(path)?;
            (map, names)
        }
        _ => (BTreeMap::new(), Vec::new()),
    };

    let mut observations = Vec::new();
    for id in &order {
        let (times, values) = by_id.remove(id).expect("collected above");
        for w in times.windows(2) {
            if w[1] <= w[0] {
                return Err(CliError::Input(format!(
                    "subject '{id}': times must be strictly increasing"
                )));
            }
        }
        let covs = if with_covariates {
            let x = covariates.get(id).ok_or_else(|| {
                CliError::Input(format!("subject '{id}' missing from covariate file"))
            })?;
            Some(nalgebra::DVector::from_vec(x.clone()))
        } else {
            None
        };
        observations.push(CurveObservation {
            subject_id: id.clone(),
            times,
            values: nalgebra::DVector::from_vec(values),
            covariates: covs,
        });
    }
    let counts = IngestCounts {
        total: observations.len(),
        retained: observations.len(),
        ..Default::default()
    };
    let mut bundle = DataBundle {
        observations,
        covariate_names,
        counts,
        covariate_scaling: None,
    };
    if input.standardize_covariates {
        standardize(&mut bundle);
    }
    Ok(bundle)
}

fn read_prepared_covariates(
    path: &Path,
) -> CliResult<(BTreeMap<String, Vec<f64>>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 2 || headers.get(0).map(str::trim) != Some("subject_id") {
        return Err(CliError::Input(format!(
            "{}: expected header subject_id,<covariate>,...",
            path.display()
        )));
    }
    let names: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let mut map = BTreeMap::new();
    for result in reader.records() {
        let record = result.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let line = line_of(&record);
        let id = record[0].trim().to_string();
        if map.contains_key(&id) {
            return Err(CliError::Input(format!(
                "{}:{line}: duplicate covariate row for subject '{id}'",
                path.display()
            )));
        }
        let mut xs = Vec::with_capacity(names.len());
        for field in record.iter().skip(1) {
            let v = parse_value(field)
                .map_err(|e| CliError::Input(format!("{}:{line}: {e}", path.display())))?;
            if !v.is_finite() {
                return Err(CliError::Input(format!(
                    "{}:{line}: covariates must be finite",
                    path.display()
                )));
            }
            xs.push(v);
        }
        map.insert(id, xs);
    }
    Ok((map, names))
}

/// Load data in whichever mode the input arguments select.
pub fn load(input: &InputArgs) -> CliResult<DataBundle> {
    if input.prepared {
        load_prepared(input)
    } else {
        load_raw(input)
    }
}

fn standardize(bundle: &mut DataBundle) {
    let r = bundle
        .observations
        .first()
        .and_then(|o| o.covariates.as_ref())
        .map_or(0, |x| x.len());
    if r == 0 {
        return;
    }
    let n = bundle.observations.len() as f64;
    let mut scaling = Vec::with_capacity(r);
    for j in 0..r {
        let mean = bundle
            .observations
            .iter()
            .map(|o| o.covariates.as_ref().unwrap()[j])
            .sum::<f64>()
            / n;
        let var = bundle
            .observations
            .iter()
            .map(|o| (o.covariates.as_ref().unwrap()[j] - mean).powi(2))
            .sum::<f64>()
            / n;
        let sd = var.sqrt().max(1e-12);
        scaling.push((mean, sd));
    }
    for obs in &mut bundle.observations {
        let x = obs.covariates.as_mut().unwrap();
        for j in 0..r {
            x[j] = (x[j] - scaling[j].0) / scaling[j].1;
        }
    }
    bundle.covariate_scaling = Some(scaling);
}

fn check_headers(
    reader: &mut csv::Reader<fs::File>,
    path: &Path,
    expected: &[&str],
) -> CliResult<()> {
    let headers = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let got: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    if got != expected {
        return Err(CliError::Input(format!(
            "{}: expected header '{}', got '{}'",
            path.display(),
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

/// The `ingest` subcommand: run the pipeline and export prepared data.
pub fn run_ingest(input: &InputArgs, out: &Path) -> CliResult<()> {
    let bundle = load(input)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(e, out))?;

    let series_path = out.join("processed_series.csv");
    let mut w = fs::File::create(&series_path).map_err(|e| CliError::io(e, &series_path))?;
    writeln!(w, "subject_id,t,value").map_err(|e| CliError::io(e, &series_path))?;
    for obs in &bundle.observations {
        for (t, v) in obs.times.iter().zip(obs.values.iter()) {
            writeln!(w, "{},{},{}", obs.subject_id, t, v)
                .map_err(|e| CliError::io(e, &series_path))?;
        }
    }

    if !bundle.covariate_names.is_empty() {
        let cov_path = out.join("processed_covariates.csv");
        let mut w = fs::File::create(&cov_path).map_err(|e| CliError::io(e, &cov_path))?;
        writeln!(w, "subject_id,{}", bundle.covariate_names.join(","))
            .map_err(|e| CliError::io(e, &cov_path))?;
        for obs in &bundle.observations {
            let x = obs.covariates.as_ref().expect("covariates requested");
            let fields: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{}", obs.subject_id, fields.join(","))
                .map_err(|e| CliError::io(e, &cov_path))?;
        }
    }

    let summary_path = out.join("ingest_summary.json");
    let json = serde_json::to_string_pretty(&bundle.counts)
        .map_err(|e| CliError::Input(e.to_string()))?;
    fs::write(&summary_path, json).map_err(|e| CliError::io(e, &summary_path))?;

    eprintln!(
        "ingest: {} total, {} dropped (missing {}, short {}, no landmark {}), {} retained",
        bundle.counts.total,
        bundle.counts.total - bundle.counts.retained,
        bundle.counts.dropped_missing,
        bundle.counts.dropped_short,
        bundle.counts.dropped_no_landmark,
        bundle.counts.retained
    );
    Ok(())
}
