//! Oracle-backed checks for the coefficient-estimate formula and the
//! distortion criterion.

use curveclust::mixmodel;
use curveclust::modelselect::{distortion, distortion_delta, eta_hat};
use curveclust::synth::{self, GeneratorSpec};
use curveclust_testkit::{dense_gauss, instances};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[test]
fn eta_hat_zero_residual_recovers_cluster_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let basis = instances::basis_with_p(4);
    let params = instances::random_params(4, 3, 2, 0, &mut rng);
    let times: Vec<f64> = (0..9).map(|j| j as f64 / 8.0).collect();
    let phi = curveclust::splinebasis::eval_basis_matrix(&times, &basis).unwrap();
    let mu1 = params.mean.mu(1);
    let obs = curveclust::CurveObservation {
        subject_id: "exact".into(),
        times,
        values: phi.as_matrix() * &mu1,
        covariates: None,
    };
    let data = mixmodel::prepare(&[obs], &basis, false).unwrap();
    let posterior = DVector::from_vec(vec![0.0, 1.0, 0.0]);
    let eta = eta_hat(&data[0], &params, &posterior).unwrap();
    assert!((eta - mu1).amax() < 1e-8);
}

#[test]
fn eta_hat_huge_noise_returns_prior_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let basis = instances::basis_with_p(4);
    let mut params = instances::random_params(4, 2, 1, 0, &mut rng);
    params.sigma2 = 1e12;
    let obs = instances::random_dataset(1, 0, (8, 8), &mut rng).remove(0);
    let data = mixmodel::prepare(&[obs], &basis, false).unwrap();
    let posterior = DVector::from_vec(vec![0.3, 0.7]);
    let eta = eta_hat(&data[0], &params, &posterior).unwrap();
    let prior = &params.mean.lambda0
        + &params.mean.loading
            * (&params.mean.alphas[0] * 0.3 + &params.mean.alphas[1] * 0.7);
    assert!((eta - prior).amax() < 1e-6);
}

#[test]
fn eta_hat_matches_dense_conditioning_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let basis = instances::basis_with_p(4);
    let params = instances::random_params(4, 3, 2, 0, &mut rng);
    let obs = instances::random_dataset(5, 0, (6, 11), &mut rng);
    let data = mixmodel::prepare(&obs, &basis, false).unwrap();

    for subject in &data {
        let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let posterior = DVector::from_iterator(3, raw.iter().map(|w| w / total));

        let got = eta_hat(subject, &params, &posterior).unwrap();

        // Oracle: joint conditioning under the posterior-mixed prior
        // precision, through the partitioned-covariance formula.
        let mut precision = DMatrix::zeros(4, 4);
        for k in 0..3 {
            precision += params.latent_covs[k].clone().try_inverse().unwrap() * posterior[k];
        }
        let prior_cov = precision.try_inverse().unwrap();
        let mut mixed_alpha = DVector::zeros(2);
        for k in 0..3 {
            mixed_alpha += &params.mean.alphas[k] * posterior[k];
        }
        let prior_mean = &params.mean.lambda0 + &params.mean.loading * mixed_alpha;
        let phi = subject.basis.as_matrix();
        let noise = DVector::from_element(subject.n(), params.sigma2);
        let offset = phi * &prior_mean;
        let (gamma, _) =
            dense_gauss::condition_by_schur(&prior_cov, phi, &noise, &subject.values, &offset);
        let oracle = prior_mean + gamma;
        assert!((got - oracle).amax() < 1e-8);
    }
}

#[test]
fn eta_hat_vanishing_noise_reduces_to_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let basis = instances::basis_with_p(4);
    let mut params = instances::random_params(4, 2, 1, 0, &mut rng);
    params.sigma2 = 1e-12;
    let obs = instances::random_dataset(1, 0, (9, 12), &mut rng).remove(0);
    let data = mixmodel::prepare(&[obs], &basis, false).unwrap();
    let posterior = DVector::from_vec(vec![0.5, 0.5]);
    let eta = eta_hat(&data[0], &params, &posterior).unwrap();
    let ls = data[0]
        .gram
        .clone()
        .cholesky()
        .unwrap()
        .solve(&data[0].phity);
    assert!((eta - ls).amax() < 1e-4);
}

#[test]
fn distortion_matches_exhaustive_assignment_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Twelve points in three visible groups, p = 2.
    let centers = [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]];
    let points: Vec<DVector<f64>> = (0..12)
        .map(|i| {
            let c = centers[i % 3];
            DVector::from_vec(vec![
                c[0] + rng.gen_range(-0.5..0.5),
                c[1] + rng.gen_range(-0.5..0.5),
            ])
        })
        .collect();

    let got = distortion(&points, 3, 50, 9).unwrap();

    // Brute force over all 3^12 assignments.
    let mut best = f64::INFINITY;
    let n = points.len();
    for code in 0..3usize.pow(12) {
        let mut labels = [0usize; 12];
        let mut c = code;
        for slot in labels.iter_mut() {
            *slot = c % 3;
            c /= 3;
        }
        let mut sums = vec![DVector::zeros(2); 3];
        let mut counts = [0usize; 3];
        for (i, &z) in labels.iter().enumerate() {
            sums[z] += &points[i];
            counts[z] += 1;
        }
        let mut ss = 0.0;
        for (i, &z) in labels.iter().enumerate() {
            if counts[z] == 0 {
                continue;
            }
            let centroid = &sums[z] / counts[z] as f64;
            ss += (&points[i] - centroid).norm_squared();
        }
        if ss < best {
            best = ss;
        }
    }
    let oracle = best / (n as f64 * 2.0);
    assert!(
        (got - oracle).abs() < 1e-9,
        "kmeans distortion {got} vs exhaustive {oracle}"
    );
}

#[test]
fn distortion_nonincreasing_in_g() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let points: Vec<DVector<f64>> = (0..30)
        .map(|_| DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0)))
        .collect();
    let mut prev = f64::INFINITY;
    for g in 1..=6 {
        let d = distortion(&points, g, 10, 4).unwrap();
        assert!(
            d <= prev + 1e-12,
            "distortion increased at G = {g}: {prev} -> {d}"
        );
        prev = d;
    }
}

#[test]
fn kmeans_never_beats_exhaustive_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut exact = 0usize;
    let trials = 20;
    for _ in 0..trials {
        let points: Vec<DVector<f64>> = (0..10)
            .map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0)))
            .collect();
        let km = distortion(&points, 3, 50, rng.gen()).unwrap();

        let mut best = f64::INFINITY;
        for code in 0..3usize.pow(10) {
            let mut c = code;
            let mut sums = vec![DVector::zeros(2); 3];
            let mut counts = [0usize; 3];
            let mut labels = [0usize; 10];
            for slot in labels.iter_mut() {
                *slot = c % 3;
                c /= 3;
            }
            for (i, &z) in labels.iter().enumerate() {
                sums[z] += &points[i];
                counts[z] += 1;
            }
            let mut ss = 0.0;
            for (i, &z) in labels.iter().enumerate() {
                if counts[z] > 0 {
                    let centroid = &sums[z] / counts[z] as f64;
                    ss += (&points[i] - centroid).norm_squared();
                }
            }
            best = best.min(ss);
        }
        let optimum = best / (10.0 * 2.0);
        assert!(km >= optimum - 1e-9, "heuristic beat the optimum");
        if (km - optimum).abs() < 1e-9 {
            exact += 1;
        }
    }
    // Logged, not gated: k-means is a heuristic.
    println!("kmeans matched the exhaustive optimum in {exact}/{trials} trials");
}

#[test]
fn fitted_curves_boundary_and_limit_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let basis = instances::basis_with_p(4);
    let params = instances::random_params(4, 2, 1, 0, &mut rng);
    let obs = instances::random_dataset(1, 0, (8, 10), &mut rng).remove(0);
    let data = mixmodel::prepare(&[obs], &basis, false).unwrap();
    let posterior = DVector::from_vec(vec![0.4, 0.6]);
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let (cluster_means, subject_curve) =
        mixmodel::fitted_curves(&data[0], &basis, &params, &posterior, &grid).unwrap();

    // Clamped boundary: the value at t = 0 is the first coefficient.
    let eta = eta_hat(&data[0], &params, &posterior).unwrap();
    assert!((subject_curve[0] - eta[0]).abs() < 1e-12);
    for k in 0..2 {
        let mu = params.mean.mu(k);
        assert!((cluster_means[k][0] - mu[0]).abs() < 1e-12);
        assert!((cluster_means[k][4] - mu[3]).abs() < 1e-12);
    }

    // Out-of-domain grid is rejected.
    assert!(mixmodel::fitted_curves(&data[0], &basis, &params, &posterior, &[1.5]).is_err());
}

#[test]
fn fitted_curves_vanishing_gamma_mixes_cluster_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let basis = instances::basis_with_p(4);
    let mut params = instances::random_params(4, 2, 1, 0, &mut rng);
    params.latent_covs = vec![DMatrix::identity(4, 4) * 1e-12; 2];
    let obs = instances::random_dataset(1, 0, (8, 10), &mut rng).remove(0);
    let data = mixmodel::prepare(&[obs], &basis, false).unwrap();
    let posterior = DVector::from_vec(vec![0.3, 0.7]);
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let (cluster_means, subject_curve) =
        mixmodel::fitted_curves(&data[0], &basis, &params, &posterior, &grid).unwrap();
    for (j, &s) in subject_curve.iter().enumerate() {
        let mixed = 0.3 * cluster_means[0][j] + 0.7 * cluster_means[1][j];
        assert!((s - mixed).abs() < 1e-6, "grid point {j}: {s} vs {mixed}");
    }
}

#[test]
fn fitted_curves_recover_exact_cluster_member() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let basis = instances::basis_with_p(4);
    let params = instances::random_params(4, 3, 2, 0, &mut rng);
    let times: Vec<f64> = (0..10).map(|j| j as f64 / 9.0).collect();
    let phi = curveclust::splinebasis::eval_basis_matrix(&times, &basis).unwrap();
    let mu2 = params.mean.mu(2);
    let obs = curveclust::CurveObservation {
        subject_id: "member".into(),
        times,
        values: phi.as_matrix() * &mu2,
        covariates: None,
    };
    let data = mixmodel::prepare(&[obs], &basis, false).unwrap();
    let posterior = DVector::from_vec(vec![0.0, 0.0, 1.0]);
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let (cluster_means, subject_curve) =
        mixmodel::fitted_curves(&data[0], &basis, &params, &posterior, &grid).unwrap();
    for (s, m) in subject_curve.iter().zip(cluster_means[2].iter()) {
        assert!((s - m).abs() < 1e-6);
    }
}

#[test]
fn distortion_delta_peaks_at_true_cluster_count() {
    let mut hits = 0;
    let seeds = 20;
    for seed in 0..seeds {
        let spec = GeneratorSpec::separated_three_cluster(45, false);
        let data = synth::generate(&spec, 500 + seed).unwrap();
        // Penalized coefficients stand in for the eta-hats.
        let prepared = mixmodel::prepare(&data.observations, &spec.basis, false).unwrap();
        let penalty = spec.basis.second_derivative_penalty();
        let coefs: Vec<DVector<f64>> = prepared
            .iter()
            .map(|s| {
                (&s.gram + &penalty * 0.00014625)
                    .cholesky()
                    .unwrap()
                    .solve(&s.phity)
            })
            .collect();
        let mut d = BTreeMap::new();
        for g in 1..=5 {
            d.insert(g, distortion(&coefs, g, 10, 77 + seed).unwrap());
        }
        let deltas = distortion_delta(&d, 4.0).unwrap();
        let peak = deltas
            .iter()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(&g, _)| g)
            .unwrap();
        if peak == 3 {
            hits += 1;
        }
    }
    assert!(hits >= 18, "delta peaked at G = 3 in only {hits}/{seeds} seeds");
}
