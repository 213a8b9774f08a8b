//! Dense Gaussian oracles: explicit determinant-and-inverse density
//! evaluation and partitioned-joint conditioning.

use nalgebra::{DMatrix, DVector};

const LN_2PI: f64 = 1.8378770664093453;

/// Log density of a 3-dimensional Gaussian from the explicit adjugate
/// inverse and cofactor-expansion determinant.
pub fn log_mvn_pdf_3x3_explicit(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    assert_eq!(cov.nrows(), 3);
    let c = |i: usize, j: usize| cov[(i, j)];
    let det = c(0, 0) * (c(1, 1) * c(2, 2) - c(1, 2) * c(2, 1))
        - c(0, 1) * (c(1, 0) * c(2, 2) - c(1, 2) * c(2, 0))
        + c(0, 2) * (c(1, 0) * c(2, 1) - c(1, 1) * c(2, 0));
    let adj = DMatrix::from_row_slice(
        3,
        3,
        &[
            c(1, 1) * c(2, 2) - c(1, 2) * c(2, 1),
            c(0, 2) * c(2, 1) - c(0, 1) * c(2, 2),
            c(0, 1) * c(1, 2) - c(0, 2) * c(1, 1),
            c(1, 2) * c(2, 0) - c(1, 0) * c(2, 2),
            c(0, 0) * c(2, 2) - c(0, 2) * c(2, 0),
            c(0, 2) * c(1, 0) - c(0, 0) * c(1, 2),
            c(1, 0) * c(2, 1) - c(1, 1) * c(2, 0),
            c(0, 1) * c(2, 0) - c(0, 0) * c(2, 1),
            c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0),
        ],
    );
    let inv = adj / det;
    let d = x - mean;
    -0.5 * (3.0 * LN_2PI + det.ln() + (d.transpose() * inv * &d)[(0, 0)])
}

/// Log density of an arbitrary-dimension Gaussian via `try_inverse` and
/// `determinant` (no Cholesky).
pub fn log_mvn_pdf_dense(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let det = cov.determinant();
    let inv = cov.clone().try_inverse().expect("oracle covariance invertible");
    let centered = x - mean;
    -0.5 * (d * LN_2PI + det.ln() + (centered.transpose() * inv * &centered)[(0, 0)])
}

/// Condition the explicitly assembled joint Gaussian of (latent, observation)
/// on the observation, by the partitioned-covariance (Schur complement)
/// formula with explicit block inversion.
///
/// Model: latent `xi ~ N(0, prior_cov)`, observation
/// `u = offset + design * xi + e`, `e ~ N(0, diag(noise_diag))`.
pub fn condition_by_schur(
    prior_cov: &DMatrix<f64>,
    design: &DMatrix<f64>,
    noise_diag: &DVector<f64>,
    observation: &DVector<f64>,
    offset: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let d = prior_cov.nrows();
    let n = design.nrows();
    let mut joint = DMatrix::zeros(d + n, d + n);

    joint.view_mut((0, 0), (d, d)).copy_from(prior_cov);
    let cross = prior_cov * design.transpose();
    joint.view_mut((0, d), (d, n)).copy_from(&cross);
    joint.view_mut((d, 0), (n, d)).copy_from(&cross.transpose());
    let mut obs_block = design * prior_cov * design.transpose();
    for i in 0..n {
        obs_block[(i, i)] += noise_diag[i];
    }
    joint.view_mut((d, d), (n, n)).copy_from(&obs_block);

    let sig_xu = joint.view((0, d), (d, n)).clone_owned();
    let sig_uu = joint.view((d, d), (n, n)).clone_owned();
    let sig_uu_inv = sig_uu.try_inverse().expect("oracle observation block invertible");

    let mean = &sig_xu * &sig_uu_inv * (observation - offset);
    let cov = prior_cov - &sig_xu * &sig_uu_inv * sig_xu.transpose();
    (mean, cov)
}
