//! Starting values: per-subject penalized spline fits, a clustering of the
//! coefficients (seeded k-means or uniform random labels), moment-based
//! parameter initialization, and the eigendecomposition of the cluster means
//! that seeds the loading matrix and offsets.

use super::{FitConfig, InitMode};
use crate::error::{Error, Result};
use crate::gauss::{cholesky_with_ridge, floor_covariance};
use crate::kmeans;
use crate::mixmodel::{MeanStructure, ModelParams, PreparedSubject};
use crate::splinebasis::BasisSpec;
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Side products of initialization, useful for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct InitDiagnostics {
    pub labels: Vec<usize>,
    /// Per-subject penalized spline coefficients.
    pub coefficients: Vec<DVector<f64>>,
}

/// Penalized spline coefficients for one subject:
/// `(phi^T phi + weight * P)^-1 phi^T y` with P the second-derivative
/// penalty Gram matrix.
pub fn penalized_coefficients(
    subject: &PreparedSubject,
    penalty: &DMatrix<f64>,
    weight: f64,
) -> Result<DVector<f64>> {
    let lhs = &subject.gram + penalty * weight;
    let chol = cholesky_with_ridge(&lhs, 1e-10, "penalized spline system")?;
    Ok(chol.solve(&subject.phity))
}

/// Compute starting parameters for the EM loop.
pub fn init_params(
    data: &[PreparedSubject],
    basis: &BasisSpec,
    config: &FitConfig,
) -> Result<(ModelParams, InitDiagnostics)> {
    let n = data.len();
    let g = config.g;
    if n < g {
        return Err(Error::InvalidConfig(format!(
            "need at least G = {g} subjects, got {n}"
        )));
    }
    let p = basis.num_basis();
    let h = config.effective_h(p);
    let r = data[0].covariates.as_ref().map_or(0, |x| x.len());

    let penalty = basis.second_derivative_penalty();
    let coefficients: Vec<DVector<f64>> = data
        .iter()
        .map(|s| penalized_coefficients(s, &penalty, config.penalty_weight))
        .collect::<Result<Vec<_>>>()?;

    let labels = initial_labels(&coefficients, g, config)?;
    let mut counts = vec![0usize; g];
    for &z in &labels {
        counts[z] += 1;
    }

    // Relative frequencies, grand mean and within-cluster means.
    let weights = DVector::from_iterator(g, counts.iter().map(|&c| c as f64 / n as f64));
    let mut lambda0 = DVector::zeros(p);
    for c in &coefficients {
        lambda0 += c;
    }
    lambda0 /= n as f64;

    let mut cluster_means = vec![DVector::zeros(p); g];
    for (c, &z) in coefficients.iter().zip(labels.iter()) {
        cluster_means[z] += c;
    }
    for (k, m) in cluster_means.iter_mut().enumerate() {
        *m /= counts[k] as f64;
    }

    // Loading and offsets from the eigendecomposition of the centered
    // cluster means.
    let (loading, alphas) = loading_from_cluster_means(&cluster_means, h);
    let mut mean = MeanStructure {
        lambda0,
        loading,
        alphas,
    };
    mean.enforce_identifiability();

    // Pooled coefficient covariance shared by every cluster.
    let grand = {
        let mut acc = DVector::zeros(p);
        for c in &coefficients {
            acc += c;
        }
        acc / n as f64
    };
    let mut pooled = DMatrix::zeros(p, p);
    for c in &coefficients {
        let d = c - &grand;
        pooled += &d * d.transpose();
    }
    pooled /= n as f64;
    let gamma0 = floor_covariance(&pooled, config.ridge_floor.max(1e-10));

    // sigma2 from residuals against the assigned cluster means.
    let mut sigma_acc = 0.0;
    for (i, subject) in data.iter().enumerate() {
        let mu = &cluster_means[labels[i]];
        let rss = (subject.yty - 2.0 * mu.dot(&subject.phity)
            + (mu.transpose() * &subject.gram * mu)[(0, 0)])
            .max(0.0);
        sigma_acc += rss;
    }
    let sigma2 = (sigma_acc / n as f64).max(1e-10);

    let (latent_covs, sigma2_x, covariate_means) = if r > 0 {
        let xs: Vec<&DVector<f64>> = data
            .iter()
            .map(|s| s.covariates.as_ref().expect("checked r > 0"))
            .collect();
        let mut ups = vec![DVector::zeros(r); g];
        for (i, &z) in labels.iter().enumerate() {
            ups[z] += xs[i];
        }
        for (k, u) in ups.iter_mut().enumerate() {
            *u /= counts[k] as f64;
        }
        let grand_x = {
            let mut acc = DVector::zeros(r);
            for x in &xs {
                acc += *x;
            }
            acc / n as f64
        };
        let mut pooled_x = DMatrix::zeros(r, r);
        for x in &xs {
            let d = *x - &grand_x;
            pooled_x += &d * d.transpose();
        }
        pooled_x /= n as f64;
        let d_block = floor_covariance(&pooled_x, config.ridge_floor.max(1e-10));

        let mut resid = 0.0;
        for (i, &z) in labels.iter().enumerate() {
            resid += (xs[i] - &ups[z]).norm_squared();
        }
        let sigma2_x = (resid / (n * r) as f64).max(1e-10);

        let mut delta = DMatrix::zeros(p + r, p + r);
        delta.view_mut((0, 0), (p, p)).copy_from(&gamma0);
        delta.view_mut((p, p), (r, r)).copy_from(&d_block);
        (vec![delta; g], Some(sigma2_x), Some(ups))
    } else {
        (vec![gamma0; g], None, None)
    };

    let params = ModelParams {
        weights,
        mean,
        latent_covs,
        sigma2,
        sigma2_x,
        covariate_means,
        r,
    };
    params.validate()?;
    Ok((
        params,
        InitDiagnostics {
            labels,
            coefficients,
        },
    ))
}

fn initial_labels(
    coefficients: &[DVector<f64>],
    g: usize,
    config: &FitConfig,
) -> Result<Vec<usize>> {
    let n = coefficients.len();
    match config.init {
        InitMode::KMeans { restarts } => {
            let result = kmeans::kmeans(coefficients, g, restarts, config.seed, 200)?;
            let mut labels = result.labels;
            repair_empty_clusters(coefficients, &mut labels, g)?;
            Ok(labels)
        }
        InitMode::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            for retry in 0..20 {
                let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..g)).collect();
                let mut counts = vec![0usize; g];
                for &z in &labels {
                    counts[z] += 1;
                }
                if counts.iter().all(|&c| c > 0) {
                    return Ok(labels);
                }
                if retry == 19 {
                    let empty = counts.iter().position(|&c| c == 0).unwrap();
                    return Err(Error::EmptyCluster {
                        cluster: empty,
                        retries: 20,
                    });
                }
            }
            unreachable!()
        }
    }
}

/// Move the farthest member of the largest cluster into each empty cluster.
fn repair_empty_clusters(
    coefficients: &[DVector<f64>],
    labels: &mut [usize],
    g: usize,
) -> Result<()> {
    for _ in 0..g {
        let mut counts = vec![0usize; g];
        for &z in labels.iter() {
            counts[z] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return Ok(());
        };
        let donor = counts
            .iter()
            .enumerate()
            .max_by_key(|(_, &c)| c)
            .map(|(k, _)| k)
            .unwrap();
        if counts[donor] < 2 {
            return Err(Error::EmptyCluster {
                cluster: empty,
                retries: 0,
            });
        }
        let centroid = {
            let mut acc = DVector::zeros(coefficients[0].len());
            for (c, &z) in coefficients.iter().zip(labels.iter()) {
                if z == donor {
                    acc += c;
                }
            }
            acc / counts[donor] as f64
        };
        let farthest = coefficients
            .iter()
            .enumerate()
            .filter(|(i, _)| labels[*i] == donor)
            .max_by(|(_, a), (_, b)| {
                (*a - &centroid)
                    .norm_squared()
                    .partial_cmp(&(*b - &centroid).norm_squared())
                    .unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();
        labels[farthest] = empty;
    }
    Ok(())
}

/// Top-h eigenvectors of the scatter of the centered cluster means become
/// the loading columns; the offsets are the projections.
fn loading_from_cluster_means(
    cluster_means: &[DVector<f64>],
    h: usize,
) -> (DMatrix<f64>, Vec<DVector<f64>>) {
    let g = cluster_means.len();
    let p = cluster_means[0].len();
    if h == 0 {
        return (DMatrix::zeros(p, 0), vec![DVector::zeros(0); g]);
    }
    let grand = cluster_means.iter().sum::<DVector<f64>>() / g as f64;
    let mut scatter = DMatrix::zeros(p, p);
    for m in cluster_means {
        let d = m - &grand;
        scatter += &d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut loading = DMatrix::zeros(p, h);
    for (col, &idx) in order.iter().take(h).enumerate() {
        let mut v = eig.eigenvectors.column(idx).clone_owned();
        // Deterministic sign: largest-magnitude entry positive.
        let lead = v
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if v[lead] < 0.0 {
            v.neg_mut();
        }
        loading.set_column(col, &v);
    }
    let alphas: Vec<DVector<f64>> = cluster_means
        .iter()
        .map(|m| loading.transpose() * (m - &grand))
        .collect();
    (loading, alphas)
}
