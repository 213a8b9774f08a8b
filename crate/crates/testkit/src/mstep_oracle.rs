//! Block-coordinate numerical maximization of the expected complete
//! log-likelihood, mirroring the update order of the production M-step but
//! finding every block's maximizer by generic search instead of the
//! closed-form expressions.

use crate::complete_loglik::expected_complete_loglik;
use crate::optimize::{maximize_cg, maximize_scalar};
use curveclust::emfit::EStepCache;
use curveclust::mixmodel::{ModelParams, PreparedSubject};
use nalgebra::{DMatrix, DVector};

/// Numerically maximized parameter blocks, reported through
/// identifiability-invariant quantities (cluster means rather than the
/// lambda0/loading/alpha split).
#[derive(Debug, Clone)]
pub struct OracleMStep {
    pub weights: Vec<f64>,
    pub latent_covs: Vec<DMatrix<f64>>,
    pub cluster_means: Vec<DVector<f64>>,
    pub sigma2: f64,
    pub sigma2_x: Option<f64>,
    pub covariate_means: Option<Vec<DVector<f64>>>,
}

/// Maximize Q block by block in the production update order
/// (weights; latent covariances; `inner_sweeps` passes over lambda0, each
/// alpha, each loading column; sigma2; upsilons; sigma2_x).
pub fn numerically_maximized_mstep(
    data: &[PreparedSubject],
    cache: &EStepCache,
    prev: &ModelParams,
    inner_sweeps: usize,
) -> OracleMStep {
    let g = prev.num_clusters();
    let h = prev.mean.h();
    let r = prev.r;
    let d = prev.latent_dim();
    let mut work = prev.clone();

    // Mixing weights through a softmax reparameterization.
    let q_weights = |s: &[f64]| {
        let mut candidate = work.clone();
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        candidate.weights = DVector::from_iterator(g, exp.iter().map(|e| e / total));
        expected_complete_loglik(data, cache, &candidate)
    };
    let s_hat = maximize_cg(q_weights, &vec![0.0; g], 300);
    let max = s_hat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = s_hat.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    let weights: Vec<f64> = exp.iter().map(|e| e / total).collect();
    work.weights = DVector::from_vec(weights.clone());

    // Latent covariances, one symmetric matrix at a time.
    let sym_len = d * (d + 1) / 2;
    for k in 0..g {
        let base = work.clone();
        let q_cov = |entries: &[f64]| {
            let mut candidate = base.clone();
            candidate.latent_covs[k] = sym_from_packed(entries, d);
            expected_complete_loglik(data, cache, &candidate)
        };
        let start = packed_from_sym(&work.latent_covs[k]);
        debug_assert_eq!(start.len(), sym_len);
        let solved = maximize_cg(q_cov, &start, 400);
        work.latent_covs[k] = sym_from_packed(&solved, d);
    }

    // Mean-structure sweep, mirroring the Gauss-Seidel pass ordering.
    for _ in 0..inner_sweeps {
        let base = work.clone();
        let q_lambda0 = |v: &[f64]| {
            let mut candidate = base.clone();
            candidate.mean.lambda0 = DVector::from_column_slice(v);
            expected_complete_loglik(data, cache, &candidate)
        };
        let lambda0 = maximize_cg(q_lambda0, work.mean.lambda0.as_slice(), 300);
        work.mean.lambda0 = DVector::from_vec(lambda0);

        if h > 0 {
            for k in 0..g {
                let base = work.clone();
                let q_alpha = |v: &[f64]| {
                    let mut candidate = base.clone();
                    candidate.mean.alphas[k] = DVector::from_column_slice(v);
                    expected_complete_loglik(data, cache, &candidate)
                };
                let alpha = maximize_cg(q_alpha, work.mean.alphas[k].as_slice(), 300);
                work.mean.alphas[k] = DVector::from_vec(alpha);
            }
            for m in 0..h {
                let base = work.clone();
                let q_col = |v: &[f64]| {
                    let mut candidate = base.clone();
                    candidate.mean.loading.set_column(m, &DVector::from_column_slice(v));
                    expected_complete_loglik(data, cache, &candidate)
                };
                let start: Vec<f64> = work.mean.loading.column(m).iter().cloned().collect();
                let column = maximize_cg(q_col, &start, 300);
                work.mean.loading.set_column(m, &DVector::from_vec(column));
            }
        }
    }

    // sigma2 on the log scale.
    let base = work.clone();
    let q_sigma = |s: f64| {
        let mut candidate = base.clone();
        candidate.sigma2 = s.exp();
        expected_complete_loglik(data, cache, &candidate)
    };
    work.sigma2 = maximize_scalar(q_sigma, work.sigma2.ln(), 1.0).exp();

    // Covariate means and noise.
    if r > 0 {
        for k in 0..g {
            let base = work.clone();
            let q_ups = |v: &[f64]| {
                let mut candidate = base.clone();
                candidate.covariate_means.as_mut().expect("covariate model")[k] =
                    DVector::from_column_slice(v);
                expected_complete_loglik(data, cache, &candidate)
            };
            let start: Vec<f64> = work.covariate_means.as_ref().unwrap()[k]
                .iter()
                .cloned()
                .collect();
            let ups = maximize_cg(q_ups, &start, 300);
            work.covariate_means.as_mut().unwrap()[k] = DVector::from_vec(ups);
        }
        let base = work.clone();
        let q_sx = |s: f64| {
            let mut candidate = base.clone();
            candidate.sigma2_x = Some(s.exp());
            expected_complete_loglik(data, cache, &candidate)
        };
        work.sigma2_x = Some(maximize_scalar(q_sx, work.sigma2_x.unwrap().ln(), 1.0).exp());
    }

    OracleMStep {
        weights,
        latent_covs: work.latent_covs.clone(),
        cluster_means: (0..g).map(|k| work.mean.mu(k)).collect(),
        sigma2: work.sigma2,
        sigma2_x: work.sigma2_x,
        covariate_means: work.covariate_means.clone(),
    }
}

fn packed_from_sym(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn sym_from_packed(entries: &[f64], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    let mut idx = 0;
    for i in 0..d {
        for j in i..d {
            m[(i, j)] = entries[idx];
            m[(j, i)] = entries[idx];
            idx += 1;
        }
    }
    m
}
