//! EM fitting: initialization, E-step conditional moments, closed-form
//! M-step updates for both model variants, and the convergence-controlled
//! fit loop.
//!
//! Convergence follows the absolute relative change in `sigma2` (plus
//! `sigma2_x` when covariates are present) between successive iterations.

mod estep;
mod init;
mod mstep;

pub use estep::{conditional_moments, e_step, EStepCache};
pub use init::{init_params, InitDiagnostics};
pub use mstep::{m_step_cov, m_step_nocov, MStepOptions, MStepOutcome};

use crate::error::{Error, Result};
use crate::mixmodel::{self, ModelParams, PosteriorTable, PreparedSubject};
use crate::preprocess::CurveObservation;
use crate::splinebasis::BasisSpec;
use serde::{Deserialize, Serialize};

/// How initial cluster labels are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Best of `restarts` k-means runs on per-subject penalized spline
    /// coefficients.
    KMeans { restarts: usize },
    /// Uniform random labels.
    UniformRandom,
}

impl Default for InitMode {
    fn default() -> Self {
        InitMode::KMeans { restarts: 20 }
    }
}

/// Everything the fit loop needs to know.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of mixture components.
    pub g: usize,
    /// Rank of the cluster-offset decomposition; `None` picks
    /// `min(G - 1, p)` (zero when G = 1).
    pub h: Option<usize>,
    pub max_iters: usize,
    /// Convergence threshold on the relative change of the noise variances.
    pub tol: f64,
    pub init: InitMode,
    /// Second-derivative penalty weight for the initial spline fits.
    pub penalty_weight: f64,
    /// Relative ridge added to near-singular covariance updates.
    pub ridge_floor: f64,
    pub seed: u64,
    /// Coordinate sweeps over (lambda0, alphas, loading columns) per M-step.
    pub inner_sweeps: usize,
    /// Compute conditional moments through the per-subject SVD re-basis.
    pub use_rebasis: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            g: 1,
            h: None,
            max_iters: 500,
            tol: 0.001,
            init: InitMode::default(),
            penalty_weight: 0.00014625,
            ridge_floor: 1e-8,
            seed: 0,
            inner_sweeps: 3,
            use_rebasis: false,
        }
    }
}

impl FitConfig {
    pub fn with_clusters(g: usize) -> Self {
        Self {
            g,
            ..Self::default()
        }
    }

    /// Effective offset rank for basis dimension `p`.
    pub fn effective_h(&self, p: usize) -> usize {
        match self.h {
            Some(h) => h,
            None => {
                if self.g <= 1 {
                    0
                } else {
                    (self.g - 1).min(p)
                }
            }
        }
    }

    fn validate(&self, p: usize, n_subjects: usize) -> Result<()> {
        if self.g == 0 {
            return Err(Error::InvalidConfig("G must be at least 1".into()));
        }
        if n_subjects < self.g {
            return Err(Error::InvalidConfig(format!(
                "need at least G = {} subjects, got {n_subjects}",
                self.g
            )));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if self.penalty_weight < 0.0 || self.ridge_floor < 0.0 {
            return Err(Error::InvalidConfig(
                "penalty weight and ridge floor must be nonnegative".into(),
            ));
        }
        let h = self.effective_h(p);
        if self.g == 1 {
            if h != 0 {
                return Err(Error::InvalidConfig(
                    "G = 1 requires h = 0 (common mean)".into(),
                ));
            }
        } else if h < 1 || h > (self.g - 1).min(p) {
            return Err(Error::InvalidConfig(format!(
                "h = {h} must satisfy 1 <= h <= min(G - 1, p) = {}",
                (self.g - 1).min(p)
            )));
        }
        Ok(())
    }
}

/// Result of one EM run.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: ModelParams,
    /// Observed log-likelihood at the initial parameters and after every
    /// M-step (nondecreasing outside re-seed iterations).
    pub loglik_trace: Vec<f64>,
    /// Number of completed EM iterations.
    pub iterations: usize,
    pub converged: bool,
    pub posterior: PosteriorTable,
    /// Iterations (1-based) in which a starved cluster was re-seeded.
    pub reseed_iterations: Vec<usize>,
}

impl FitReport {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace never empty")
    }

    /// sigma2 + sigma2_x, the convergence statistic.
    pub fn sigma_sum(&self) -> f64 {
        self.params.sigma2 + self.params.sigma2_x.unwrap_or(0.0)
    }
}

/// Fit the mixture to raw observations, preparing basis matrices internally.
pub fn fit(
    data: &[CurveObservation],
    basis: &BasisSpec,
    config: &FitConfig,
) -> Result<FitReport> {
    let prepared = mixmodel::prepare(data, basis, config.use_rebasis)?;
    fit_prepared(&prepared, basis, config)
}

/// Fit the mixture to already-prepared subjects.
pub fn fit_prepared(
    data: &[PreparedSubject],
    basis: &BasisSpec,
    config: &FitConfig,
) -> Result<FitReport> {
    if data.is_empty() {
        return Err(Error::EmptyInput("observations"));
    }
    config.validate(basis.num_basis(), data.len())?;

    let (mut params, _diag) = init_params(data, basis, config)?;
    let opts = MStepOptions {
        inner_sweeps: config.inner_sweeps,
        ridge_rel: config.ridge_floor.max(f64::MIN_POSITIVE),
    };
    let covariate_variant = data[0].covariates.is_some();

    let mut trace = Vec::new();
    let mut reseed_iterations = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut sigma_prev = f64::INFINITY;

    for iter in 1..=config.max_iters {
        let cache = e_step(data, &params).map_err(|e| Error::NumericalFailure {
            iteration: iter,
            reason: e.to_string(),
        })?;
        trace.push(cache.loglik);

        let outcome = if covariate_variant {
            m_step_cov(data, &cache, &params, &opts)
        } else {
            m_step_nocov(data, &cache, &params, &opts)
        }
        .map_err(|e| Error::NumericalFailure {
            iteration: iter,
            reason: e.to_string(),
        })?;
        params = outcome.params;
        if !outcome.reseeded.is_empty() {
            reseed_iterations.push(iter);
        }
        iterations = iter;

        let sigma_now = params.sigma2 + params.sigma2_x.unwrap_or(0.0);
        if iter > 1 && (sigma_now - sigma_prev).abs() / sigma_prev.abs() < config.tol {
            converged = true;
            break;
        }
        sigma_prev = sigma_now;
    }

    let cache = e_step(data, &params).map_err(|e| Error::NumericalFailure {
        iteration: iterations,
        reason: e.to_string(),
    })?;
    trace.push(cache.loglik);
    let posterior = table_from_resp(&cache);

    Ok(FitReport {
        params,
        loglik_trace: trace,
        iterations,
        converged,
        posterior,
        reseed_iterations,
    })
}

fn table_from_resp(cache: &EStepCache) -> PosteriorTable {
    let (n, g) = cache.resp.shape();
    let mut assignment = vec![0usize; n];
    let mut max_prob = vec![0.0; n];
    for i in 0..n {
        let mut best = 0;
        for k in 1..g {
            if cache.resp[(i, k)] > cache.resp[(i, best)] {
                best = k;
            }
        }
        assignment[i] = best;
        max_prob[i] = cache.resp[(i, best)];
    }
    PosteriorTable {
        probs: cache.resp.clone(),
        assignment,
        max_prob,
    }
}
