//! Closed-form M-step updates: mixing weights, per-cluster latent
//! covariances, the coordinate sweep over (lambda0, alphas, loading columns),
//! the noise variances, and the starved-cluster re-seeding policy.

use super::estep::EStepCache;
use crate::error::{Error, Result};
use crate::gauss::{cholesky_with_ridge, floor_covariance};
use crate::mixmodel::{MeanStructure, ModelParams, PreparedSubject};
use nalgebra::{DMatrix, DVector};

/// Weight below which a cluster counts as starved and is re-seeded.
const STARVED_WEIGHT: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct MStepOptions {
    /// Coordinate sweeps over the mean structure per M-step.
    pub inner_sweeps: usize,
    /// Relative ridge for covariance floors and singular-system repair.
    pub ridge_rel: f64,
}

impl Default for MStepOptions {
    fn default() -> Self {
        Self {
            inner_sweeps: 3,
            ridge_rel: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MStepOutcome {
    pub params: ModelParams,
    /// Clusters re-seeded this iteration (monotonicity does not apply there).
    pub reseeded: Vec<usize>,
}

/// tr(A B) for symmetric A, B of equal size.
fn tr_prod(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn solve_spd(
    lhs: &DMatrix<f64>,
    rhs: &DVector<f64>,
    rel: f64,
    context: &'static str,
) -> Result<DVector<f64>> {
    let chol = cholesky_with_ridge(lhs, rel.max(1e-12), context)
        .map_err(|_| Error::SingularSystem(context.to_string()))?;
    Ok(chol.solve(rhs))
}

/// M-step for the functional model without covariates (latent covariances
/// are the p x p coefficient covariances).
pub fn m_step_nocov(
    data: &[PreparedSubject],
    cache: &EStepCache,
    prev: &ModelParams,
    opts: &MStepOptions,
) -> Result<MStepOutcome> {
    if prev.r != 0 {
        return Err(Error::ModelMismatch(
            "m_step_nocov called with a covariate model".into(),
        ));
    }
    let gamma_hat = cache.cond_mean.clone();
    let v_gamma = cache.cond_cov.clone();
    m_step_shared(data, cache, prev, opts, gamma_hat, v_gamma, None)
}

/// M-step for the joint model: latent covariances are the partitioned
/// (p + r) x (p + r) matrices, and the covariate means and noise are updated
/// from the delta moments.
pub fn m_step_cov(
    data: &[PreparedSubject],
    cache: &EStepCache,
    prev: &ModelParams,
    opts: &MStepOptions,
) -> Result<MStepOutcome> {
    let p = prev.p();
    let r = prev.r;
    // Coefficient part of the conditional moments: first p rows of xi-hat
    // and the upper-left p x p block of the conditional covariance.
    let gamma_hat: Vec<Vec<DVector<f64>>> = cache
        .cond_mean
        .iter()
        .map(|per_k| per_k.iter().map(|m| m.rows(0, p).clone_owned()).collect())
        .collect();
    let v_gamma: Vec<Vec<DMatrix<f64>>> = cache
        .cond_cov
        .iter()
        .map(|per_k| {
            per_k
                .iter()
                .map(|v| v.view((0, 0), (p, p)).clone_owned())
                .collect()
        })
        .collect();
    let covariate_parts = (r > 0).then_some(r);
    m_step_shared(data, cache, prev, opts, gamma_hat, v_gamma, covariate_parts)
}

/// Shared update machinery. `covariate_r = Some(r)` adds the upsilon and
/// sigma2_x updates from the delta blocks of the cache.
#[allow(clippy::too_many_arguments)]
fn m_step_shared(
    data: &[PreparedSubject],
    cache: &EStepCache,
    prev: &ModelParams,
    opts: &MStepOptions,
    gamma_hat: Vec<Vec<DVector<f64>>>,
    v_gamma: Vec<Vec<DMatrix<f64>>>,
    covariate_r: Option<usize>,
) -> Result<MStepOutcome> {
    let n = data.len();
    let g = prev.num_clusters();
    let p = prev.p();
    let resp = &cache.resp;

    // pi-hat: responsibility column sums over N.
    let mut cluster_weight = vec![0.0; g];
    for i in 0..n {
        for k in 0..g {
            cluster_weight[k] += resp[(i, k)];
        }
    }
    let starved: Vec<usize> = (0..g)
        .filter(|&k| cluster_weight[k] < STARVED_WEIGHT)
        .collect();

    // Latent covariance updates: sum_i resp * (V + m m^T) / sum_i resp.
    let mut latent_covs = prev.latent_covs.clone();
    for k in 0..g {
        if starved.contains(&k) {
            continue;
        }
        let d = prev.latent_dim();
        let mut acc = DMatrix::zeros(d, d);
        for i in 0..n {
            let w = resp[(i, k)];
            if w == 0.0 {
                continue;
            }
            let m = &cache.cond_mean[i][k];
            acc += (&cache.cond_cov[i][k] + m * m.transpose()) * w;
        }
        latent_covs[k] = floor_covariance(&(acc / cluster_weight[k]), opts.ridge_rel);
    }

    // Coordinate sweep over lambda0, each alpha_k, each loading column.
    let mut mean = prev.mean.clone();
    let sum_gram = data
        .iter()
        .fold(DMatrix::zeros(p, p), |acc, s| acc + &s.gram);
    for _ in 0..opts.inner_sweeps {
        sweep_mean_structure(
            data,
            resp,
            &gamma_hat,
            &mut mean,
            &sum_gram,
            &starved,
            opts.ridge_rel,
        )?;
    }

    // sigma2: responsibility-weighted residual moments over all observations.
    let total_obs: usize = data.iter().map(|s| s.n()).sum();
    let mut sigma_acc = 0.0;
    let mus: Vec<DVector<f64>> = (0..g).map(|k| mean.mu(k)).collect();
    for (i, subject) in data.iter().enumerate() {
        for k in 0..g {
            let w = resp[(i, k)];
            if w == 0.0 {
                continue;
            }
            let a = &mus[k] + &gamma_hat[i][k];
            let rss = (subject.yty - 2.0 * a.dot(&subject.phity)
                + (a.transpose() * &subject.gram * &a)[(0, 0)])
                .max(0.0);
            sigma_acc += w * (rss + tr_prod(&subject.gram, &v_gamma[i][k]));
        }
    }
    let sigma2 = (sigma_acc / total_obs as f64).max(1e-300);

    // Covariate-side updates.
    let (mut covariate_means, sigma2_x) = match covariate_r {
        Some(r) => {
            let mut ups = Vec::with_capacity(g);
            for k in 0..g {
                if starved.contains(&k) {
                    ups.push(
                        prev.covariate_means.as_ref().expect("covariate model")[k].clone(),
                    );
                    continue;
                }
                let mut acc = DVector::zeros(r);
                for (i, subject) in data.iter().enumerate() {
                    let w = resp[(i, k)];
                    if w == 0.0 {
                        continue;
                    }
                    let x = subject.covariates.as_ref().expect("covariate model");
                    let delta = cache.cond_mean[i][k].rows(p, r);
                    acc += (x - delta) * w;
                }
                ups.push(acc / cluster_weight[k]);
            }
            let mut b_acc = 0.0;
            for (i, subject) in data.iter().enumerate() {
                let x = subject.covariates.as_ref().expect("covariate model");
                for k in 0..g {
                    let w = resp[(i, k)];
                    if w == 0.0 {
                        continue;
                    }
                    let delta = cache.cond_mean[i][k].rows(p, r);
                    let v_delta = cache.cond_cov[i][k].view((p, p), (r, r));
                    let resid = x - &ups[k] - delta;
                    b_acc += w * (resid.norm_squared() + v_delta.trace());
                }
            }
            let s2x = (b_acc / (n * r) as f64).max(1e-300);
            (Some(ups), Some(s2x))
        }
        None => (None, None),
    };

    // Mixing weights; starved clusters get one subject's worth of mass.
    let mut weights = DVector::from_iterator(g, cluster_weight.iter().map(|w| w / n as f64));

    // Re-seed starved clusters at the least-committed subjects.
    let mut reseeded = Vec::new();
    if !starved.is_empty() {
        if starved.len() == g {
            return Err(Error::EmptyCluster {
                cluster: starved[0],
                retries: 0,
            });
        }
        let healthy: Vec<usize> = (0..g).filter(|k| !starved.contains(k)).collect();
        let pooled = {
            let d = prev.latent_dim();
            let mut acc = DMatrix::zeros(d, d);
            for &k in &healthy {
                acc += &latent_covs[k];
            }
            acc / healthy.len() as f64
        };
        let mut used = Vec::new();
        for &k in &starved {
            let candidate = least_committed_subject(resp, &used);
            used.push(candidate);
            // Posterior-mixed coefficient estimate of the chosen subject.
            let mut eta = DVector::zeros(p);
            for k2 in 0..g {
                eta += (prev.mean.mu(k2) + &gamma_hat[candidate][k2]) * resp[(candidate, k2)];
            }
            if mean.h() > 0 {
                mean.alphas[k] = mean.loading.transpose() * (eta - &mean.lambda0);
            }
            latent_covs[k] = pooled.clone();
            if let (Some(ups), Some(r)) = (covariate_means.as_mut(), covariate_r) {
                if r > 0 {
                    ups[k] = data[candidate]
                        .covariates
                        .as_ref()
                        .expect("covariate model")
                        .clone();
                }
            }
            weights[k] = 1.0 / n as f64;
            reseeded.push(k);
        }
        let total: f64 = weights.iter().sum();
        weights /= total;
    }

    mean.enforce_identifiability();

    let params = ModelParams {
        weights,
        mean,
        latent_covs,
        sigma2,
        sigma2_x,
        covariate_means,
        r: covariate_r.unwrap_or(0),
    };
    params.validate()?;
    Ok(MStepOutcome { params, reseeded })
}

fn least_committed_subject(resp: &DMatrix<f64>, used: &[usize]) -> usize {
    let (n, g) = resp.shape();
    let mut best = 0;
    let mut best_max = f64::INFINITY;
    for i in 0..n {
        if used.contains(&i) {
            continue;
        }
        let row_max = (0..g).map(|k| resp[(i, k)]).fold(f64::NEG_INFINITY, f64::max);
        if row_max < best_max {
            best_max = row_max;
            best = i;
        }
    }
    best
}

/// One Gauss-Seidel pass: lambda0, then every alpha_k, then every loading
/// column, each solved exactly with the others held at their current values.
fn sweep_mean_structure(
    data: &[PreparedSubject],
    resp: &DMatrix<f64>,
    gamma_hat: &[Vec<DVector<f64>>],
    mean: &mut MeanStructure,
    sum_gram: &DMatrix<f64>,
    starved: &[usize],
    ridge_rel: f64,
) -> Result<()> {
    let g = mean.num_clusters();
    let h = mean.h();
    let p = mean.lambda0.len();

    // lambda0 update.
    let mut rhs = DVector::zeros(p);
    for (i, subject) in data.iter().enumerate() {
        let mut mixed = DVector::zeros(p);
        for k in 0..g {
            let w = resp[(i, k)];
            if w == 0.0 {
                continue;
            }
            mixed += (&mean.loading * &mean.alphas[k] + &gamma_hat[i][k]) * w;
        }
        rhs += &subject.phity - &subject.gram * mixed;
    }
    mean.lambda0 = solve_spd(sum_gram, &rhs, ridge_rel, "lambda0 normal equations")?;

    if h == 0 {
        return Ok(());
    }

    // alpha_k updates.
    for k in 0..g {
        if starved.contains(&k) {
            continue;
        }
        let mut weighted_gram = DMatrix::zeros(p, p);
        let mut rhs_p = DVector::zeros(p);
        for (i, subject) in data.iter().enumerate() {
            let w = resp[(i, k)];
            if w == 0.0 {
                continue;
            }
            weighted_gram += &subject.gram * w;
            rhs_p += (&subject.phity
                - &subject.gram * (&mean.lambda0 + &gamma_hat[i][k]))
                * w;
        }
        let lhs = mean.loading.transpose() * &weighted_gram * &mean.loading;
        let rhs_h = mean.loading.transpose() * rhs_p;
        mean.alphas[k] = solve_spd(&lhs, &rhs_h, ridge_rel, "alpha normal equations")?;
    }

    // Loading column updates.
    for m in 0..h {
        let mut lhs = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        let mut total_scale = 0.0;
        for (i, subject) in data.iter().enumerate() {
            let mut gram_scale = 0.0;
            let mut scalar = 0.0;
            let mut inner = DVector::zeros(p);
            for k in 0..g {
                let w = resp[(i, k)];
                if w == 0.0 {
                    continue;
                }
                let a_km = mean.alphas[k][m];
                gram_scale += w * a_km * a_km;
                scalar += w * a_km;
                // lambda0 + (Lambda alpha_k - a_km lambda_m) + gamma-hat.
                let rest = &mean.loading * &mean.alphas[k]
                    - mean.loading.column(m) * a_km;
                inner += (&mean.lambda0 + rest + &gamma_hat[i][k]) * (w * a_km);
            }
            lhs += &subject.gram * gram_scale;
            rhs += &subject.phity * scalar - &subject.gram * inner;
            total_scale += gram_scale;
        }
        if total_scale < 1e-12 {
            continue;
        }
        let column = solve_spd(&lhs, &rhs, ridge_rel, "loading-column normal equations")?;
        mean.loading.set_column(m, &column);
    }
    Ok(())
}
