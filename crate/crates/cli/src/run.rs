//! Orchestration of preprocess -> fit -> select for `fit` and `sweep`.
//! Sweep entries run in parallel; a failed entry is recorded and the sweep
//! continues.

use crate::artifacts::{self, RunManifest, SweepFailure};
use crate::ingest;
use crate::{CliError, CliResult, FitArgs, InputArgs};
use curveclust::emfit::{self, FitReport};
use curveclust::mixmodel;
use curveclust::modelselect::{self, SelectionEntry, SelectionSweep};
use curveclust::splinebasis::BasisSpec;
use rayon::prelude::*;
use std::fs;
use std::path::Path;

fn is_numerical(err: &curveclust::Error) -> bool {
    use curveclust::Error as E;
    matches!(
        err,
        E::NumericalFailure { .. }
            | E::Factorization(_)
            | E::SingularSystem(_)
            | E::NonFiniteDensity { .. }
            | E::EmptyCluster { .. }
    )
}

pub fn run_fit(
    input: &InputArgs,
    fit_args: &FitArgs,
    g_list: &[usize],
    out: &Path,
) -> CliResult<()> {
    let bundle = ingest::load(input)?;
    let basis = BasisSpec::cubic(input.knots).map_err(CliError::from_core)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(e, out))?;

    let results: Vec<(usize, Result<FitReport, (String, bool)>)> = g_list
        .par_iter()
        .map(|&g| {
            let config = match fit_args.fit_config(g) {
                Ok(c) => c,
                Err(e) => return (g, Err((e.to_string(), false))),
            };
            match emfit::fit(&bundle.observations, &basis, &config) {
                Ok(report) => (g, Ok(report)),
                Err(e) => {
                    let numerical = is_numerical(&e);
                    (g, Err((e.to_string(), numerical)))
                }
            }
        })
        .collect();

    let mut sweep = SelectionSweep::new(fit_args.b);
    let mut failures: Vec<SweepFailure> = Vec::new();
    let prepared =
        mixmodel::prepare(&bundle.observations, &basis, false).map_err(CliError::from_core)?;

    for (g, result) in &results {
        match result {
            Ok(report) => {
                artifacts::write_params(out, *g, &report.params)?;
                artifacts::write_posterior(out, *g, &bundle, report)?;
                artifacts::write_mean_curves(out, *g, &basis, &report.params)?;
                artifacts::write_covariances(out, *g, &report.params, &bundle.covariate_names)?;
                artifacts::write_trace(out, *g, report)?;

                // Distortion from the posterior-weighted coefficient estimates.
                let eta_hats: Vec<nalgebra::DVector<f64>> = prepared
                    .iter()
                    .enumerate()
                    .map(|(i, subject)| {
                        let row = report.posterior.probs.row(i).transpose();
                        modelselect::eta_hat(subject, &report.params, &row)
                    })
                    .collect::<curveclust::Result<Vec<_>>>()
                    .map_err(CliError::from_core)?;
                let distortion = modelselect::distortion(
                    &eta_hats,
                    *g,
                    fit_args.distortion_restarts,
                    fit_args.seed,
                )
                .map_err(CliError::from_core)?;

                let p = basis.num_basis();
                let h = fit_args
                    .fit_config(*g)?
                    .effective_h(p);
                let m = modelselect::parameter_count(*g, p, h, report.params.r);
                let loglik = report.final_loglik();
                let (aic, bic) =
                    modelselect::information_criteria(loglik, m, bundle.observations.len());
                sweep.insert(
                    *g,
                    SelectionEntry {
                        loglik,
                        param_count: m,
                        aic,
                        bic,
                        sigma_sum: report.sigma_sum(),
                        distortion,
                    },
                );
                eprintln!(
                    "G = {g}: loglik {loglik:.4}, {} iterations, converged = {}",
                    report.iterations, report.converged
                );
            }
            Err((message, numerical)) => {
                eprintln!("G = {g}: fit failed: {message}");
                failures.push(SweepFailure {
                    g: *g,
                    error: message.clone(),
                    numerical: *numerical,
                });
            }
        }
    }

    if sweep.per_g.len() > 1 {
        if let Err(e) = sweep.compute_deltas() {
            eprintln!("note: distortion deltas unavailable: {e}");
        }
    }
    artifacts::write_selection(out, &sweep)?;

    let mut inputs = vec![&input.series];
    if let Some(cov) = &input.covariates_file {
        inputs.push(cov);
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: fit_args.fit_config(*g_list.first().expect("nonempty sweep"))?,
        g_sweep: g_list.to_vec(),
        seed: fit_args.seed,
        b: fit_args.b,
        distortion_restarts: fit_args.distortion_restarts,
        basis_knots: input.knots,
        inputs: artifacts::input_digests(&inputs)?,
        counts: bundle.counts.clone(),
        covariate_names: bundle.covariate_names.clone(),
        covariate_scaling: bundle.covariate_scaling.clone(),
        failures: failures.clone(),
    };
    artifacts::write_manifest(out, &manifest)?;

    if failures.len() == g_list.len() {
        let message = format!(
            "every sweep entry failed; first error: {}",
            failures[0].error
        );
        return Err(if failures.iter().any(|f| f.numerical) {
            CliError::Numerical(message)
        } else {
            CliError::Input(message)
        });
    }
    if !failures.is_empty() {
        return Err(CliError::PartialSweep(format!(
            "{} of {} sweep entries failed",
            failures.len(),
            g_list.len()
        )));
    }
    Ok(())
}
