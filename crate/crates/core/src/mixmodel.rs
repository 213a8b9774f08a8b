//! Model parameters and likelihood evaluation for the spline-coefficient
//! Gaussian mixture, in both variants: functional data alone and functional
//! data joint with per-subject covariates.
//!
//! Cluster k has mean coefficients `mu_k = lambda0 + Lambda alpha_k` with the
//! identifiability constraint `sum_k alpha_k = 0`, latent covariance `Gamma_k`
//! (or the partitioned `Delta_k` when covariates are present), shared noise
//! variance `sigma2` and, with covariates, covariate means `upsilon_k` and
//! noise `sigma2_x`.

use crate::error::{Error, Result};
use crate::gauss::{self, GaussianMoments};
use crate::preprocess::CurveObservation;
use crate::splinebasis::{self, BasisMatrix, BasisSpec, SvdRebasis};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Overall mean coefficients plus the rank-h cluster offsets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanStructure {
    /// Overall mean coefficient vector (length p).
    pub lambda0: DVector<f64>,
    /// p x h loading matrix whose columns are kept orthonormal.
    pub loading: DMatrix<f64>,
    /// Per-cluster offsets in loading space (G vectors of length h).
    pub alphas: Vec<DVector<f64>>,
}

impl MeanStructure {
    pub fn num_clusters(&self) -> usize {
        self.alphas.len()
    }

    pub fn h(&self) -> usize {
        self.loading.ncols()
    }

    /// Cluster mean coefficients `lambda0 + Lambda alpha_k`.
    pub fn mu(&self, k: usize) -> DVector<f64> {
        &self.lambda0 + &self.loading * &self.alphas[k]
    }

    /// Re-center the alphas to sum to zero (absorbing the shift into
    /// lambda0) and orthonormalize the loading columns (absorbing the scale
    /// into the alphas). Leaves every cluster mean unchanged.
    pub fn enforce_identifiability(&mut self) {
        let g = self.alphas.len();
        let h = self.h();
        if g == 0 || h == 0 {
            return;
        }
        let mut mean = DVector::zeros(h);
        for a in &self.alphas {
            mean += a;
        }
        mean /= g as f64;
        self.lambda0 += &self.loading * &mean;
        for a in &mut self.alphas {
            *a -= &mean;
        }

        let qr = self.loading.clone().qr();
        let mut q = qr.q();
        let mut r = qr.r();
        // Fix signs so the decomposition is unique.
        for j in 0..h {
            if r[(j, j)] < 0.0 {
                r.row_mut(j).neg_mut();
                q.column_mut(j).neg_mut();
            }
        }
        self.loading = q;
        for a in &mut self.alphas {
            *a = &r * &*a;
        }
    }
}

/// Full parameter vector of the mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    /// Mixing weights on the G-simplex.
    pub weights: DVector<f64>,
    pub mean: MeanStructure,
    /// Per-cluster latent covariances: p x p without covariates, otherwise
    /// (p + r) x (p + r) partitioned as [[Gamma, L], [L^T, D]].
    pub latent_covs: Vec<DMatrix<f64>>,
    /// Measurement noise variance on the curve values.
    pub sigma2: f64,
    /// Covariate noise variance (present iff r > 0).
    pub sigma2_x: Option<f64>,
    /// Per-cluster covariate means (present iff r > 0).
    pub covariate_means: Option<Vec<DVector<f64>>>,
    /// Number of covariates.
    pub r: usize,
}

impl ModelParams {
    pub fn num_clusters(&self) -> usize {
        self.weights.len()
    }

    pub fn p(&self) -> usize {
        self.mean.lambda0.len()
    }

    /// Latent dimension p + r.
    pub fn latent_dim(&self) -> usize {
        self.p() + self.r
    }

    /// Upper-left p x p block of the latent covariance (the coefficient
    /// covariance Gamma_k in both variants).
    pub fn gamma_block(&self, k: usize) -> DMatrix<f64> {
        let p = self.p();
        self.latent_covs[k].view((0, 0), (p, p)).clone_owned()
    }

    /// Joint mean (mu_k, upsilon_k) of length p + r.
    pub fn joint_mu(&self, k: usize) -> DVector<f64> {
        let mu = self.mean.mu(k);
        match (&self.covariate_means, self.r) {
            (Some(ups), r) if r > 0 => {
                let mut out = DVector::zeros(self.p() + r);
                out.rows_mut(0, self.p()).copy_from(&mu);
                out.rows_mut(self.p(), r).copy_from(&ups[k]);
                out
            }
            _ => mu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.num_clusters();
        if g == 0 {
            return Err(Error::InvalidConfig("no mixture components".into()));
        }
        if self.mean.alphas.len() != g || self.latent_covs.len() != g {
            return Err(Error::InvalidConfig(
                "weights, alphas and covariances disagree on G".into(),
            ));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-10 || self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weights must be a probability vector (sum = {sum})"
            )));
        }
        if self.sigma2 <= 0.0 {
            return Err(Error::InvalidConfig("sigma2 must be positive".into()));
        }
        let d = self.latent_dim();
        for cov in &self.latent_covs {
            if cov.nrows() != d || cov.ncols() != d {
                return Err(Error::DimensionMismatch {
                    what: "latent covariance",
                    expected: d,
                    got: cov.nrows(),
                });
            }
        }
        if self.r > 0 {
            if self.sigma2_x.is_none() || self.covariate_means.is_none() {
                return Err(Error::InvalidConfig(
                    "covariate model needs sigma2_x and covariate means".into(),
                ));
            }
        } else if self.sigma2_x.is_some() || self.covariate_means.is_some() {
            return Err(Error::InvalidConfig(
                "covariate parameters present but r = 0".into(),
            ));
        }
        let mut alpha_sum = DVector::zeros(self.mean.h());
        for a in &self.mean.alphas {
            alpha_sum += a;
        }
        if alpha_sum.amax() > 1e-8 {
            return Err(Error::InvalidConfig(
                "cluster offsets must sum to zero".into(),
            ));
        }
        Ok(())
    }
}

/// Per-subject, per-cluster posterior probabilities and hard assignments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorTable {
    /// N x G posterior membership probabilities.
    pub probs: DMatrix<f64>,
    /// Arg-max cluster per subject, ties broken toward the lowest index.
    pub assignment: Vec<usize>,
    pub max_prob: Vec<f64>,
}

impl PosteriorTable {
    /// Build from per-subject rows of `log pi_k + log f_k`.
    pub fn from_log_scores(scores: &DMatrix<f64>) -> PosteriorTable {
        let (n, g) = scores.shape();
        let mut probs = DMatrix::zeros(n, g);
        let mut assignment = vec![0usize; n];
        let mut max_prob = vec![0.0; n];
        for i in 0..n {
            let row: Vec<f64> = scores.row(i).iter().cloned().collect();
            let norm = gauss::logsumexp(&row);
            let mut best = 0usize;
            for k in 0..g {
                let p = (row[k] - norm).exp();
                probs[(i, k)] = p;
                if p > probs[(i, best)] {
                    best = k;
                }
            }
            assignment[i] = best;
            max_prob[i] = probs[(i, best)];
        }
        PosteriorTable {
            probs,
            assignment,
            max_prob,
        }
    }

    pub fn num_subjects(&self) -> usize {
        self.probs.nrows()
    }
}

/// One subject prepared for likelihood evaluation: values, covariates, basis
/// matrix and cached products.
#[derive(Debug, Clone)]
pub struct PreparedSubject {
    pub id: String,
    pub values: DVector<f64>,
    pub covariates: Option<DVector<f64>>,
    pub basis: BasisMatrix,
    /// phi^T phi.
    pub gram: DMatrix<f64>,
    /// phi^T y.
    pub phity: DVector<f64>,
    /// y^T y.
    pub yty: f64,
    /// SVD re-basis when requested and n_i >= p.
    pub rebasis: Option<SvdRebasis>,
}

impl PreparedSubject {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Observation vector for the joint model: (y, x).
    pub fn joint_observation(&self) -> DVector<f64> {
        match &self.covariates {
            Some(x) if !x.is_empty() => {
                let n = self.n();
                let mut u = DVector::zeros(n + x.len());
                u.rows_mut(0, n).copy_from(&self.values);
                u.rows_mut(n, x.len()).copy_from(x);
                u
            }
            _ => self.values.clone(),
        }
    }
}

/// Evaluate basis matrices (and optionally the SVD re-basis) for a set of
/// observations, checking covariate consistency across subjects.
pub fn prepare(
    data: &[CurveObservation],
    spec: &BasisSpec,
    with_rebasis: bool,
) -> Result<Vec<PreparedSubject>> {
    if data.is_empty() {
        return Err(Error::EmptyInput("observations"));
    }
    let r0 = data[0].covariates.as_ref().map_or(0, |x| x.len());
    data.par_iter()
        .map(|obs| {
            let r = obs.covariates.as_ref().map_or(0, |x| x.len());
            if r != r0 {
                return Err(Error::ModelMismatch(format!(
                    "subject '{}' has {r} covariates but the first subject has {r0}",
                    obs.subject_id
                )));
            }
            let basis = splinebasis::eval_basis_matrix(&obs.times, spec)?;
            let gram = basis.as_matrix().transpose() * basis.as_matrix();
            let phity = basis.as_matrix().transpose() * &obs.values;
            let yty = obs.values.norm_squared();
            let rebasis = if with_rebasis && obs.values.len() >= spec.num_basis() {
                Some(splinebasis::svd_rebasis(&basis, &obs.subject_id)?)
            } else {
                None
            };
            Ok(PreparedSubject {
                id: obs.subject_id.clone(),
                values: obs.values.clone(),
                covariates: obs.covariates.clone(),
                basis,
                gram,
                phity,
                yty,
                rebasis,
            })
        })
        .collect()
}

fn check_model_matches(subject: &PreparedSubject, params: &ModelParams) -> Result<()> {
    let r = subject.covariates.as_ref().map_or(0, |x| x.len());
    if r != params.r {
        return Err(Error::ModelMismatch(format!(
            "subject '{}' carries {r} covariates but the model expects {}",
            subject.id, params.r
        )));
    }
    Ok(())
}

/// Marginal moments of the observation vector given cluster k: without
/// covariates `N(phi mu_k, phi Gamma_k phi^T + sigma2 I)`, with covariates
/// the joint `N(S mu_k, S Delta_k S^T + R)`.
fn marginal_moments(subject: &PreparedSubject, params: &ModelParams, k: usize) -> GaussianMoments {
    let n = subject.n();
    let p = params.p();
    let phi = subject.basis.as_matrix();
    let mu = params.mean.mu(k);
    if params.r == 0 {
        let gamma = &params.latent_covs[k];
        let mut cov = phi * gamma * phi.transpose();
        for i in 0..n {
            cov[(i, i)] += params.sigma2;
        }
        GaussianMoments::new(phi * mu, cov)
    } else {
        let r = params.r;
        let delta = &params.latent_covs[k];
        let ups = &params.covariate_means.as_ref().expect("validated")[k];
        let sigma2_x = params.sigma2_x.expect("validated");

        let gamma = delta.view((0, 0), (p, p));
        let cross = delta.view((0, p), (p, r));
        let dblock = delta.view((p, p), (r, r));

        let mut cov = DMatrix::zeros(n + r, n + r);
        let top_left = phi * gamma * phi.transpose();
        let top_right = phi * cross;
        cov.view_mut((0, 0), (n, n)).copy_from(&top_left);
        cov.view_mut((0, n), (n, r)).copy_from(&top_right);
        cov.view_mut((n, 0), (r, n)).copy_from(&top_right.transpose());
        cov.view_mut((n, n), (r, r)).copy_from(&dblock.clone_owned());
        for i in 0..n {
            cov[(i, i)] += params.sigma2;
        }
        for j in 0..r {
            cov[(n + j, n + j)] += sigma2_x;
        }

        let mut mean = DVector::zeros(n + r);
        mean.rows_mut(0, n).copy_from(&(phi * mu));
        mean.rows_mut(n, r).copy_from(ups);
        GaussianMoments::new(mean, cov)
    }
}

/// Log marginal density of subject's observation under cluster `k`.
pub fn marginal_loglik_subject(
    subject: &PreparedSubject,
    params: &ModelParams,
    k: usize,
) -> Result<f64> {
    check_model_matches(subject, params)?;
    let moments = marginal_moments(subject, params, k);
    gauss::log_mvn_pdf(&subject.joint_observation(), &moments)
}

/// N x G matrix of per-subject, per-cluster log marginal densities.
pub fn component_logliks(
    data: &[PreparedSubject],
    params: &ModelParams,
) -> Result<DMatrix<f64>> {
    let g = params.num_clusters();
    let rows: Vec<Vec<f64>> = data
        .par_iter()
        .map(|subject| {
            let mut row = Vec::with_capacity(g);
            for k in 0..g {
                let ll = marginal_loglik_subject(subject, params, k)?;
                if !ll.is_finite() {
                    return Err(Error::NonFiniteDensity {
                        subject: subject.id.clone(),
                    });
                }
                row.push(ll);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(data.len(), g, |i, k| rows[i][k]))
}

fn log_scores(data: &[PreparedSubject], params: &ModelParams) -> Result<DMatrix<f64>> {
    let logliks = component_logliks(data, params)?;
    let log_weights: Vec<f64> = params.weights.iter().map(|w| w.ln()).collect();
    let mut scores = logliks;
    for i in 0..scores.nrows() {
        for k in 0..scores.ncols() {
            scores[(i, k)] += log_weights[k];
        }
    }
    Ok(scores)
}

/// Observed-data log-likelihood `sum_i log sum_k pi_k f_k(obs_i)`.
pub fn observed_loglik(data: &[PreparedSubject], params: &ModelParams) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("observations"));
    }
    let scores = log_scores(data, params)?;
    let mut total = 0.0;
    for i in 0..scores.nrows() {
        let row: Vec<f64> = scores.row(i).iter().cloned().collect();
        let term = gauss::logsumexp(&row);
        if !term.is_finite() {
            return Err(Error::NonFiniteDensity {
                subject: data[i].id.clone(),
            });
        }
        total += term;
    }
    Ok(total)
}

/// Posterior membership probabilities and hard assignments for every subject.
pub fn posterior_probs(data: &[PreparedSubject], params: &ModelParams) -> Result<PosteriorTable> {
    let scores = log_scores(data, params)?;
    for i in 0..scores.nrows() {
        if scores.row(i).iter().all(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDensity {
                subject: data[i].id.clone(),
            });
        }
    }
    Ok(PosteriorTable::from_log_scores(&scores))
}

/// Cluster mean curves and the subject's expected curve on `eval_grid`.
///
/// Cluster k evaluates `phi(t)^T (lambda0 + Lambda alpha_k)`; the subject
/// curve evaluates `phi(t)^T eta_hat` with the posterior-weighted coefficient
/// estimate from [`crate::modelselect::eta_hat`].
pub fn fitted_curves(
    subject: &PreparedSubject,
    spec: &BasisSpec,
    params: &ModelParams,
    posterior_row: &DVector<f64>,
    eval_grid: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    check_model_matches(subject, params)?;
    let g = params.num_clusters();
    let eta = crate::modelselect::eta_hat(subject, params, posterior_row)?;

    let mut cluster_means = vec![Vec::with_capacity(eval_grid.len()); g];
    let mut subject_curve = Vec::with_capacity(eval_grid.len());
    let mus: Vec<DVector<f64>> = (0..g).map(|k| params.mean.mu(k)).collect();
    for &t in eval_grid {
        let phi = spec.eval_basis(t)?;
        for (k, mu) in mus.iter().enumerate() {
            cluster_means[k].push(phi.dot(mu));
        }
        subject_curve.push(phi.dot(&eta));
    }
    Ok((cluster_means, subject_curve))
}
