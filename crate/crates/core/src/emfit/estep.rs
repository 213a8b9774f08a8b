//! E-step: responsibilities via Bayes' rule over the marginal component
//! densities, and conditional moments of the latent coefficient (and
//! covariate-deviation) vectors given the observations.

use crate::error::{Error, Result};
use crate::gauss::{self, GaussianMoments};
use crate::mixmodel::{self, ModelParams, PreparedSubject};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Per-subject, per-cluster responsibilities and conditional latent moments.
#[derive(Debug, Clone)]
pub struct EStepCache {
    /// N x G responsibilities; every row sums to one.
    pub resp: DMatrix<f64>,
    /// Conditional means of the latent vector, indexed `[subject][cluster]`
    /// (length p without covariates, p + r with).
    pub cond_mean: Vec<Vec<DVector<f64>>>,
    /// Conditional covariances, same indexing.
    pub cond_cov: Vec<Vec<DMatrix<f64>>>,
    /// Observed log-likelihood at the parameters used for this E-step.
    pub loglik: f64,
}

struct SubjectEStep {
    resp: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    loglik: f64,
}

/// Run the E-step for every subject (data-parallel, deterministic).
pub fn e_step(data: &[PreparedSubject], params: &ModelParams) -> Result<EStepCache> {
    if data.is_empty() {
        return Err(Error::EmptyInput("observations"));
    }
    params.validate()?;
    let g = params.num_clusters();
    let log_weights: Vec<f64> = params.weights.iter().map(|w| w.ln()).collect();
    let mus: Vec<DVector<f64>> = (0..g).map(|k| params.mean.mu(k)).collect();

    let rows: Vec<SubjectEStep> = data
        .par_iter()
        .map(|subject| subject_e_step(subject, params, &mus, &log_weights))
        .collect::<Result<Vec<_>>>()?;

    let n = data.len();
    let mut resp = DMatrix::zeros(n, g);
    let mut cond_mean = Vec::with_capacity(n);
    let mut cond_cov = Vec::with_capacity(n);
    let mut loglik = 0.0;
    for (i, row) in rows.into_iter().enumerate() {
        for k in 0..g {
            resp[(i, k)] = row.resp[k];
        }
        cond_mean.push(row.means);
        cond_cov.push(row.covs);
        loglik += row.loglik;
    }
    Ok(EStepCache {
        resp,
        cond_mean,
        cond_cov,
        loglik,
    })
}

fn subject_e_step(
    subject: &PreparedSubject,
    params: &ModelParams,
    mus: &[DVector<f64>],
    log_weights: &[f64],
) -> Result<SubjectEStep> {
    let g = params.num_clusters();
    let mut scores = Vec::with_capacity(g);
    let mut means = Vec::with_capacity(g);
    let mut covs = Vec::with_capacity(g);

    for k in 0..g {
        let logf = mixmodel::marginal_loglik_subject(subject, params, k)?;
        if !logf.is_finite() {
            return Err(Error::NonFiniteDensity {
                subject: subject.id.clone(),
            });
        }
        scores.push(log_weights[k] + logf);

        let moments = conditional_moments(subject, params, &mus[k], k)?;
        means.push(moments.mean);
        covs.push(moments.covariance);
    }

    let norm = gauss::logsumexp(&scores);
    if !norm.is_finite() {
        return Err(Error::NonFiniteDensity {
            subject: subject.id.clone(),
        });
    }
    let resp: Vec<f64> = scores.iter().map(|s| (s - norm).exp()).collect();
    Ok(SubjectEStep {
        resp,
        means,
        covs,
        loglik: norm,
    })
}

/// Conditional moments of the latent vector given the subject's observation
/// and cluster k: the information form `V = (Delta^-1 + S^T R^-1 S)^-1`,
/// or its Woodbury rearrangement when the subject has more observation rows
/// than latent dimensions.
pub fn conditional_moments(
    subject: &PreparedSubject,
    params: &ModelParams,
    mu_k: &DVector<f64>,
    k: usize,
) -> Result<GaussianMoments> {
    let n = subject.n();
    let p = params.p();
    let r = params.r;

    if r == 0 {
        let prior = GaussianMoments::centered(params.latent_covs[k].clone());
        let noise = DVector::from_element(n, params.sigma2);
        match &subject.rebasis {
            None => {
                let design = subject.basis.as_matrix();
                let offset = design * mu_k;
                condition_auto(&prior, design, &noise, &subject.values, &offset)
            }
            Some(re) => {
                // Work in the orthonormal U-basis: beta = T eta, then map back.
                let t = re.coeff_map();
                let t_inv = re.coeff_map_inverse();
                let prior_b =
                    GaussianMoments::centered(&t * &params.latent_covs[k] * t.transpose());
                let offset = re.left_factor() * (&t * mu_k);
                let post = condition_auto(
                    &prior_b,
                    re.left_factor(),
                    &noise,
                    &subject.values,
                    &offset,
                )?;
                Ok(GaussianMoments {
                    mean: &t_inv * post.mean,
                    covariance: &t_inv * post.covariance * t_inv.transpose(),
                })
            }
        }
    } else {
        let ups = &params.covariate_means.as_ref().expect("validated")[k];
        let sigma2_x = params.sigma2_x.expect("validated");
        let mut noise = DVector::from_element(n + r, params.sigma2);
        for j in 0..r {
            noise[n + j] = sigma2_x;
        }
        let observation = subject.joint_observation();

        match &subject.rebasis {
            None => {
                let mut design = DMatrix::zeros(n + r, p + r);
                design
                    .view_mut((0, 0), (n, p))
                    .copy_from(subject.basis.as_matrix());
                design
                    .view_mut((n, p), (r, r))
                    .copy_from(&DMatrix::identity(r, r));
                let mut offset = DVector::zeros(n + r);
                offset
                    .rows_mut(0, n)
                    .copy_from(&(subject.basis.as_matrix() * mu_k));
                offset.rows_mut(n, r).copy_from(ups);
                let prior = GaussianMoments::centered(params.latent_covs[k].clone());
                condition_auto(&prior, &design, &noise, &observation, &offset)
            }
            Some(re) => {
                // Block transform T~ = diag(T, I_r); design S~ = diag(U, I_r).
                let t = re.coeff_map();
                let t_inv = re.coeff_map_inverse();
                let mut t_full = DMatrix::identity(p + r, p + r);
                t_full.view_mut((0, 0), (p, p)).copy_from(&t);
                let mut t_inv_full = DMatrix::identity(p + r, p + r);
                t_inv_full.view_mut((0, 0), (p, p)).copy_from(&t_inv);

                let mut design = DMatrix::zeros(n + r, p + r);
                design
                    .view_mut((0, 0), (n, p))
                    .copy_from(re.left_factor());
                design
                    .view_mut((n, p), (r, r))
                    .copy_from(&DMatrix::identity(r, r));

                let mut offset = DVector::zeros(n + r);
                offset
                    .rows_mut(0, n)
                    .copy_from(&(re.left_factor() * (&t * mu_k)));
                offset.rows_mut(n, r).copy_from(ups);

                let prior_b = GaussianMoments::centered(
                    &t_full * &params.latent_covs[k] * t_full.transpose(),
                );
                let post = condition_auto(&prior_b, &design, &noise, &observation, &offset)?;
                Ok(GaussianMoments {
                    mean: &t_inv_full * post.mean,
                    covariance: &t_inv_full * post.covariance * t_inv_full.transpose(),
                })
            }
        }
    }
}

fn condition_auto(
    prior: &GaussianMoments,
    design: &DMatrix<f64>,
    noise: &DVector<f64>,
    observation: &DVector<f64>,
    offset: &DVector<f64>,
) -> Result<GaussianMoments> {
    if design.nrows() > prior.dim() {
        gauss::woodbury_condition(prior, design, noise, observation, offset)
    } else {
        gauss::condition_joint(prior, design, noise, observation, offset)
    }
}
