//! Multivariate Gaussian density evaluation and the conditional-moment
//! machinery shared by both E-steps, including the Woodbury-stabilized path.
//!
//! All densities are computed in log space; posterior weights go through
//! log-sum-exp.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

const LN_2PI: f64 = 1.8378770664093453;

/// Mean and covariance of a multivariate Gaussian.
#[derive(Debug, Clone)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        Self { mean, covariance }
    }

    /// Zero-mean prior with the given covariance.
    pub fn centered(covariance: DMatrix<f64>) -> Self {
        let d = covariance.nrows();
        Self {
            mean: DVector::zeros(d),
            covariance,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Cholesky factorization with ridge repair: on failure, add
/// `eps = rel * trace / d` to the diagonal, escalating a few times.
pub fn cholesky_with_ridge(
    matrix: &DMatrix<f64>,
    rel: f64,
    context: &str,
) -> Result<Cholesky<f64, Dyn>> {
    let d = matrix.nrows();
    if let Some(chol) = matrix.clone().cholesky() {
        return Ok(chol);
    }
    let scale = (matrix.trace().abs() / d as f64).max(f64::MIN_POSITIVE);
    let mut eps = rel * scale;
    for _ in 0..4 {
        let repaired = matrix + DMatrix::identity(d, d) * eps;
        if let Some(chol) = repaired.cholesky() {
            return Ok(chol);
        }
        eps *= 100.0;
    }
    Err(Error::Factorization(context.to_string()))
}

/// Symmetrize and, when the smallest eigenvalue falls below `rel * trace / d`,
/// lift the diagonal so the matrix is safely positive definite.
pub fn floor_covariance(matrix: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let d = matrix.nrows();
    let mut sym = (matrix + matrix.transpose()) * 0.5;
    let eps = rel * (sym.trace().abs() / d as f64).max(f64::MIN_POSITIVE);
    let min_eig = sym
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig < eps {
        for i in 0..d {
            sym[(i, i)] += eps - min_eig.min(0.0);
        }
    }
    sym
}

/// Log density of `N(mean, covariance)` at `x`, via Cholesky.
pub fn log_mvn_pdf(x: &DVector<f64>, moments: &GaussianMoments) -> Result<f64> {
    let d = moments.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            what: "log_mvn_pdf observation",
            expected: d,
            got: x.len(),
        });
    }
    let chol = cholesky_with_ridge(&moments.covariance, 1e-10, "log_mvn_pdf covariance")?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let centered = x - &moments.mean;
    let solved = chol.l().solve_lower_triangular(&centered).ok_or_else(|| {
        Error::Factorization("log_mvn_pdf triangular solve".to_string())
    })?;
    Ok(-0.5 * (d as f64 * LN_2PI + log_det + solved.norm_squared()))
}

fn check_condition_dims(
    prior: &GaussianMoments,
    design: &DMatrix<f64>,
    noise_diag: &DVector<f64>,
    observation: &DVector<f64>,
    offset: &DVector<f64>,
) -> Result<()> {
    let d = prior.dim();
    let n = design.nrows();
    if design.ncols() != d {
        return Err(Error::DimensionMismatch {
            what: "conditioning design columns",
            expected: d,
            got: design.ncols(),
        });
    }
    for (len, what) in [
        (noise_diag.len(), "conditioning noise diagonal"),
        (observation.len(), "conditioning observation"),
        (offset.len(), "conditioning offset"),
    ] {
        if len != n {
            return Err(Error::DimensionMismatch {
                what,
                expected: n,
                got: len,
            });
        }
    }
    if noise_diag.iter().any(|&r| r <= 0.0) {
        return Err(Error::Factorization(
            "conditioning noise variances must be positive".to_string(),
        ));
    }
    Ok(())
}

/// Posterior moments of a latent vector `xi ~ N(prior.mean, prior.covariance)`
/// observed through `u = offset + S xi + e`, `e ~ N(0, diag(noise_diag))`:
///
/// covariance `(Delta^-1 + S^T R^-1 S)^-1` and mean
/// `(S^T R^-1 S + Delta^-1)^-1 S^T R^-1 (u - offset)` for a centered prior.
pub fn condition_joint(
    prior: &GaussianMoments,
    design: &DMatrix<f64>,
    noise_diag: &DVector<f64>,
    observation: &DVector<f64>,
    offset: &DVector<f64>,
) -> Result<GaussianMoments> {
    check_condition_dims(prior, design, noise_diag, observation, offset)?;

    let prior_chol = cholesky_with_ridge(&prior.covariance, 1e-10, "conditioning prior")?;
    let prior_precision = prior_chol.inverse();

    // S^T R^-1 S and S^T R^-1 resid with diagonal R.
    let mut design_weighted = design.clone();
    for i in 0..design.nrows() {
        let w = 1.0 / noise_diag[i];
        design_weighted.row_mut(i).scale_mut(w);
    }
    let info = &prior_precision + design.transpose() * &design_weighted;
    let info_chol = cholesky_with_ridge(&info, 1e-12, "conditioning information matrix")?;
    let covariance = info_chol.inverse();

    let resid = observation - offset - design * &prior.mean;
    let mean = &prior.mean + info_chol.solve(&(design_weighted.transpose() * resid));

    let covariance = (&covariance + covariance.transpose()) * 0.5;
    Ok(GaussianMoments { mean, covariance })
}

/// Same posterior moments as [`condition_joint`] computed without inverting
/// the prior covariance: `V = Delta - Delta S^T (R + S Delta S^T)^-1 S Delta`.
pub fn woodbury_condition(
    prior: &GaussianMoments,
    design: &DMatrix<f64>,
    noise_diag: &DVector<f64>,
    observation: &DVector<f64>,
    offset: &DVector<f64>,
) -> Result<GaussianMoments> {
    check_condition_dims(prior, design, noise_diag, observation, offset)?;

    let cross = &prior.covariance * design.transpose(); // Delta S^T
    let mut marginal = design * &cross; // S Delta S^T
    for i in 0..marginal.nrows() {
        marginal[(i, i)] += noise_diag[i];
    }
    let marg_chol = cholesky_with_ridge(&marginal, 1e-12, "woodbury marginal covariance")?;

    let resid = observation - offset - design * &prior.mean;
    let mean = &prior.mean + &cross * marg_chol.solve(&resid);

    let covariance = &prior.covariance - &cross * marg_chol.solve(&cross.transpose());
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    Ok(GaussianMoments { mean, covariance })
}

/// `log(sum(exp(values)))`, safe for large magnitudes and all-(-inf) input.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}
