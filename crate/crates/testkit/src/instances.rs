//! Random model parameters and datasets shared by the integration and
//! acceptance suites.

use curveclust::mixmodel::{MeanStructure, ModelParams};
use curveclust::preprocess::CurveObservation;
use curveclust::splinebasis::BasisSpec;
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// A basis with exactly `p` functions (2 <= p), using cubic splines where
/// possible and lower degrees for tiny p.
pub fn basis_with_p(p: usize) -> BasisSpec {
    let spec = match p {
        0 | 1 => panic!("need p >= 2"),
        2 => BasisSpec::new(2, 1),
        3 => BasisSpec::new(2, 2),
        _ => BasisSpec::new(p - 2, 3),
    }
    .expect("valid basis layout");
    assert_eq!(spec.num_basis(), p);
    spec
}

/// A valid, identifiable random parameter vector.
pub fn random_params(p: usize, g: usize, h: usize, r: usize, rng: &mut ChaCha8Rng) -> ModelParams {
    let lambda0 = DVector::from_fn(p, |_, _| rng.gen_range(-1.5..1.5));
    let loading = if h > 0 {
        DMatrix::from_fn(p, h, |_, _| rng.gen_range(-1.0..1.0))
    } else {
        DMatrix::zeros(p, 0)
    };
    let alphas: Vec<DVector<f64>> = (0..g)
        .map(|_| DVector::from_fn(h, |_, _| rng.gen_range(-1.5..1.5)))
        .collect();
    let mut mean = MeanStructure {
        lambda0,
        loading,
        alphas,
    };
    mean.enforce_identifiability();

    let d = p + r;
    let latent_covs: Vec<DMatrix<f64>> = (0..g)
        .map(|_| {
            let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.5..0.5));
            &a * a.transpose() + DMatrix::identity(d, d) * rng.gen_range(0.4..1.0)
        })
        .collect();

    let raw: Vec<f64> = (0..g).map(|_| rng.gen_range(0.5..2.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = DVector::from_iterator(g, raw.iter().map(|w| w / total));

    ModelParams {
        weights,
        mean,
        latent_covs,
        sigma2: rng.gen_range(0.2..0.8),
        sigma2_x: (r > 0).then(|| rng.gen_range(0.2..0.8)),
        covariate_means: (r > 0).then(|| {
            (0..g)
                .map(|_| DVector::from_fn(r, |_, _| rng.gen_range(-2.0..2.0)))
                .collect()
        }),
        r,
    }
}

/// Random observations on random strictly increasing grids (not drawn from
/// the model), with `r` covariates when requested.
pub fn random_dataset(
    n_subjects: usize,
    r: usize,
    n_obs_range: (usize, usize),
    rng: &mut ChaCha8Rng,
) -> Vec<CurveObservation> {
    (0..n_subjects)
        .map(|i| {
            let n = rng.gen_range(n_obs_range.0..=n_obs_range.1);
            // Strictly increasing by construction: one jittered point per bin.
            let times: Vec<f64> = (0..n)
                .map(|j| (j as f64 + 0.5 + rng.gen_range(-0.4..0.4)) / n as f64)
                .collect();
            CurveObservation {
                subject_id: format!("r{i:03}"),
                times,
                values: DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0)),
                covariates: (r > 0)
                    .then(|| DVector::from_fn(r, |_, _| rng.gen_range(-2.0..2.0))),
            }
        })
        .collect()
}
