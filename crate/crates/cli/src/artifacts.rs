//! Artifact writers: parameter JSON, posterior/curve/covariance/trace CSVs,
//! the selection table, and the run manifest. Numbers are written with
//! shortest-round-trip formatting so reloads are exact and reruns are
//! byte-identical.

use crate::ingest::{DataBundle, IngestCounts};
use crate::{CliError, CliResult};
use curveclust::emfit::{FitConfig, FitReport};
use curveclust::modelselect::SelectionSweep;
use curveclust::splinebasis::BasisSpec;
use curveclust::ModelParams;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub fn write_string(path: &Path, body: &str) -> CliResult<()> {
    fs::write(path, body).map_err(|e| CliError::io(e, path))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(e, path))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Serialized fit configuration, sweep layout and input digests; enough to
/// reproduce the run byte-for-byte.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: FitConfig,
    pub g_sweep: Vec<usize>,
    pub seed: u64,
    pub b: f64,
    pub distortion_restarts: usize,
    pub basis_knots: usize,
    pub inputs: Vec<InputDigest>,
    pub counts: IngestCounts,
    pub covariate_names: Vec<String>,
    pub covariate_scaling: Option<Vec<(f64, f64)>>,
    pub failures: Vec<SweepFailure>,
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepFailure {
    pub g: usize,
    pub error: String,
    /// Numerical breakdown (as opposed to an invalid request).
    pub numerical: bool,
}

pub fn input_digests(paths: &[&PathBuf]) -> CliResult<Vec<InputDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(InputDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

pub fn write_manifest(out: &Path, manifest: &RunManifest) -> CliResult<()> {
    let path = out.join("manifest.json");
    let json =
        serde_json::to_string_pretty(manifest).map_err(|e| CliError::Input(e.to_string()))?;
    write_string(&path, &json)
}

pub fn write_params(out: &Path, g: usize, params: &ModelParams) -> CliResult<()> {
    let path = out.join(format!("params_G{g}.json"));
    let json = serde_json::to_string_pretty(params).map_err(|e| CliError::Input(e.to_string()))?;
    write_string(&path, &json)
}

pub fn read_params(path: &Path) -> CliResult<ModelParams> {
    let body = fs::read_to_string(path).map_err(|e| CliError::io(e, path))?;
    serde_json::from_str(&body)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn write_posterior(
    out: &Path,
    g: usize,
    bundle: &DataBundle,
    report: &FitReport,
) -> CliResult<()> {
    let path = out.join(format!("posterior_G{g}.csv"));
    let mut w = fs::File::create(&path).map_err(|e| CliError::io(e, &path))?;
    let header: Vec<String> = (1..=g).map(|k| format!("p{k}")).collect();
    writeln!(w, "subject_id,{},assignment,max_prob", header.join(","))
        .map_err(|e| CliError::io(e, &path))?;
    for (i, obs) in bundle.observations.iter().enumerate() {
        let probs: Vec<String> = (0..g)
            .map(|k| report.posterior.probs[(i, k)].to_string())
            .collect();
        writeln!(
            w,
            "{},{},{},{}",
            obs.subject_id,
            probs.join(","),
            report.posterior.assignment[i] + 1,
            report.posterior.max_prob[i]
        )
        .map_err(|e| CliError::io(e, &path))?;
    }
    Ok(())
}

/// Cluster mean curves (and the overall mean) sampled on a 101-point grid.
pub fn write_mean_curves(
    out: &Path,
    g: usize,
    basis: &BasisSpec,
    params: &ModelParams,
) -> CliResult<()> {
    let path = out.join(format!("mean_curves_G{g}.csv"));
    let mut w = fs::File::create(&path).map_err(|e| CliError::io(e, &path))?;
    let header: Vec<String> = (1..=g).map(|k| format!("cluster_{k}")).collect();
    writeln!(w, "t,overall,{}", header.join(",")).map_err(|e| CliError::io(e, &path))?;
    let mus: Vec<_> = (0..g).map(|k| params.mean.mu(k)).collect();
    for i in 0..=100 {
        let t = i as f64 / 100.0;
        let phi = basis.eval_basis(t).map_err(CliError::from_core)?;
        let overall = phi.dot(&params.mean.lambda0);
        let cells: Vec<String> = mus.iter().map(|mu| phi.dot(mu).to_string()).collect();
        writeln!(w, "{},{},{}", t, overall, cells.join(","))
            .map_err(|e| CliError::io(e, &path))?;
    }
    Ok(())
}

/// One CSV per cluster with the labelled latent covariance matrix.
pub fn write_covariances(
    out: &Path,
    g: usize,
    params: &ModelParams,
    covariate_names: &[String],
) -> CliResult<()> {
    let p = params.p();
    let labels: Vec<String> = (1..=p)
        .map(|j| format!("coef_{j}"))
        .chain(covariate_names.iter().cloned())
        .collect();
    for k in 0..g {
        let path = out.join(format!("covariance_G{g}_cluster_{}.csv", k + 1));
        let mut w = fs::File::create(&path).map_err(|e| CliError::io(e, &path))?;
        writeln!(w, "row,{}", labels.join(",")).map_err(|e| CliError::io(e, &path))?;
        let cov = &params.latent_covs[k];
        for i in 0..cov.nrows() {
            let cells: Vec<String> = (0..cov.ncols()).map(|j| cov[(i, j)].to_string()).collect();
            writeln!(w, "{},{}", labels[i], cells.join(","))
                .map_err(|e| CliError::io(e, &path))?;
        }
    }
    Ok(())
}

pub fn write_trace(out: &Path, g: usize, report: &FitReport) -> CliResult<()> {
    let path = out.join(format!("loglik_trace_G{g}.csv"));
    let mut w = fs::File::create(&path).map_err(|e| CliError::io(e, &path))?;
    writeln!(w, "iter,loglik").map_err(|e| CliError::io(e, &path))?;
    for (i, ll) in report.loglik_trace.iter().enumerate() {
        writeln!(w, "{},{}", i, ll).map_err(|e| CliError::io(e, &path))?;
    }
    Ok(())
}

pub fn write_selection(out: &Path, sweep: &SelectionSweep) -> CliResult<()> {
    let path = out.join("selection.csv");
    let mut w = fs::File::create(&path).map_err(|e| CliError::io(e, &path))?;
    writeln!(
        w,
        "g,loglik,param_count,aic,bic,sigma_sum,distortion,rel_loglik_change,distortion_delta"
    )
    .map_err(|e| CliError::io(e, &path))?;
    let rel = sweep.relative_loglik_changes();
    for (&g, entry) in &sweep.per_g {
        let rel_cell = rel.get(&g).map_or(String::new(), |v| v.to_string());
        let delta_cell = sweep.deltas.get(&g).map_or(String::new(), |v| v.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            g,
            entry.loglik,
            entry.param_count,
            entry.aic,
            entry.bic,
            entry.sigma_sum,
            entry.distortion,
            rel_cell,
            delta_cell
        )
        .map_err(|e| CliError::io(e, &path))?;
    }
    Ok(())
}
