//! The `synth` subcommand: sample a dataset from the generative model and
//! write prepared-mode series, covariates, and truth labels.

use crate::artifacts::write_string;
use crate::{CliError, CliResult};
use curveclust::splinebasis::BasisSpec;
use curveclust::synth::{self, GeneratorSpec};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// JSON mirror of [`GeneratorSpec`] with plain nested arrays.
#[derive(Debug, Deserialize)]
struct GeneratorSpecFile {
    weights: Vec<f64>,
    cluster_coefficient_means: Vec<Vec<f64>>,
    latent_covs: Vec<Vec<Vec<f64>>>,
    sigma2: f64,
    #[serde(default)]
    sigma2_x: Option<f64>,
    #[serde(default)]
    covariate_means: Option<Vec<Vec<f64>>>,
    n_subjects: usize,
    n_obs_min: usize,
    n_obs_max: usize,
    #[serde(default = "default_knots")]
    knots: usize,
}

fn default_knots() -> usize {
    6
}

impl GeneratorSpecFile {
    fn into_spec(self) -> CliResult<GeneratorSpec> {
        let basis = BasisSpec::cubic(self.knots).map_err(CliError::from_core)?;
        let means = self
            .cluster_coefficient_means
            .into_iter()
            .map(DVector::from_vec)
            .collect();
        let covs = self
            .latent_covs
            .into_iter()
            .map(|rows| {
                let n = rows.len();
                let flat: Vec<f64> = rows.into_iter().flatten().collect();
                if flat.len() != n * n {
                    return Err(CliError::Input(
                        "latent covariance rows must be square".into(),
                    ));
                }
                Ok(DMatrix::from_row_slice(n, n, &flat))
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(GeneratorSpec {
            weights: self.weights,
            cluster_coefficient_means: means,
            latent_covs: covs,
            sigma2: self.sigma2,
            sigma2_x: self.sigma2_x,
            covariate_means: self
                .covariate_means
                .map(|u| u.into_iter().map(DVector::from_vec).collect()),
            n_subjects: self.n_subjects,
            n_obs_range: (self.n_obs_min, self.n_obs_max),
            basis,
        })
    }
}

pub fn run_synth(
    out: &Path,
    subjects: usize,
    seed: u64,
    covariates: bool,
    spec_path: Option<&Path>,
) -> CliResult<()> {
    let spec = match spec_path {
        Some(path) => {
            let body = fs::read_to_string(path).map_err(|e| CliError::io(e, path))?;
            let file: GeneratorSpecFile = serde_json::from_str(&body)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            file.into_spec()?
        }
        None => GeneratorSpec::separated_three_cluster(subjects, covariates),
    };
    let data = synth::generate(&spec, seed).map_err(CliError::from_core)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(e, out))?;

    let mut series = String::from("subject_id,t,value\n");
    for obs in &data.observations {
        for (t, v) in obs.times.iter().zip(obs.values.iter()) {
            let _ = writeln!(series, "{},{},{}", obs.subject_id, t, v);
        }
    }
    write_string(&out.join("series.csv"), &series)?;

    let r = spec.r();
    if r > 0 {
        let names: Vec<String> = (1..=r).map(|j| format!("x{j}")).collect();
        let mut table = format!("subject_id,{}\n", names.join(","));
        for obs in &data.observations {
            let x = obs.covariates.as_ref().expect("generator produced covariates");
            let cells: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(table, "{},{}", obs.subject_id, cells.join(","));
        }
        write_string(&out.join("covariates.csv"), &table)?;
    }

    let mut labels = String::from("subject_id,cluster\n");
    for (obs, z) in data.observations.iter().zip(data.labels.iter()) {
        let _ = writeln!(labels, "{},{}", obs.subject_id, z + 1);
    }
    write_string(&out.join("labels.csv"), &labels)?;

    eprintln!(
        "synth: wrote {} subjects ({} clusters, r = {r}) to {}",
        data.observations.len(),
        spec.num_clusters(),
        out.display()
    );
    Ok(())
}
