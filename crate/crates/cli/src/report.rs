//! The `report` subcommand: posterior summaries (median max-posterior,
//! low-confidence counts, cluster sizes) and plot-ready fitted-curve CSVs
//! from a saved parameter file.

use crate::artifacts::{read_params, write_string};
use crate::{ingest, CliError, CliResult, InputArgs};
use curveclust::mixmodel;
use curveclust::splinebasis::BasisSpec;
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

#[derive(Debug, Serialize)]
struct PosteriorSummary {
    n_subjects: usize,
    g: usize,
    median_max_posterior: f64,
    n_below_half: usize,
    cluster_sizes: Vec<usize>,
}

pub fn run_report(
    input: &InputArgs,
    params_path: &Path,
    out: &Path,
    subjects: Option<&str>,
) -> CliResult<()> {
    let bundle = ingest::load(input)?;
    let params = read_params(params_path)?;
    let basis = BasisSpec::cubic(input.knots).map_err(CliError::from_core)?;
    let prepared =
        mixmodel::prepare(&bundle.observations, &basis, false).map_err(CliError::from_core)?;
    let table = mixmodel::posterior_probs(&prepared, &params).map_err(CliError::from_core)?;

    fs::create_dir_all(out).map_err(|e| CliError::io(e, out))?;
    let g = params.num_clusters();

    let mut sorted: Vec<f64> = table.max_prob.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mut cluster_sizes = vec![0usize; g];
    for &z in &table.assignment {
        cluster_sizes[z] += 1;
    }
    let summary = PosteriorSummary {
        n_subjects: n,
        g,
        median_max_posterior: median,
        n_below_half: table.max_prob.iter().filter(|&&p| p < 0.5).count(),
        cluster_sizes,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Input(e.to_string()))?;
    write_string(&out.join("posterior_summary.json"), &json)?;

    // Full posterior table for downstream plotting.
    let mut body = String::from("subject_id,");
    for k in 1..=g {
        let _ = write!(body, "p{k},");
    }
    body.push_str("assignment,max_prob\n");
    for (i, obs) in bundle.observations.iter().enumerate() {
        let _ = write!(body, "{},", obs.subject_id);
        for k in 0..g {
            let _ = write!(body, "{},", table.probs[(i, k)]);
        }
        let _ = writeln!(body, "{},{}", table.assignment[i] + 1, table.max_prob[i]);
    }
    write_string(&out.join("posterior.csv"), &body)?;

    if let Some(list) = subjects {
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        for id in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let Some(idx) = prepared.iter().position(|s| s.id == id) else {
                return Err(CliError::Input(format!("unknown subject '{id}'")));
            };
            let row = table.probs.row(idx).transpose();
            let (cluster_means, subject_curve) =
                mixmodel::fitted_curves(&prepared[idx], &basis, &params, &row, &grid)
                    .map_err(CliError::from_core)?;
            let mut body = String::from("t,subject");
            for k in 1..=g {
                let _ = write!(body, ",cluster_{k}");
            }
            body.push('\n');
            for (j, &t) in grid.iter().enumerate() {
                let _ = write!(body, "{},{}", t, subject_curve[j]);
                for cm in cluster_means.iter() {
                    let _ = write!(body, ",{}", cm[j]);
                }
                body.push('\n');
            }
            write_string(&out.join(format!("fitted_{id}.csv")), &body)?;
        }
    }

    eprintln!(
        "report: median max-posterior {:.4}, {} of {} subjects below 0.5",
        summary.median_max_posterior, summary.n_below_half, summary.n_subjects
    );
    Ok(())
}
