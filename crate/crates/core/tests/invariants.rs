//! Property tests for the structural invariants: partition of unity, local
//! support, warp monotonicity, centering idempotence, posterior row
//! structure, and Woodbury/direct agreement.

use curveclust::gauss::{self, GaussianMoments};
use curveclust::mixmodel::PosteriorTable;
use curveclust::preprocess::{center_values, landmark_warp};
use curveclust::splinebasis::BasisSpec;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

proptest! {
    #[test]
    fn basis_is_a_partition_of_unity(
        t in 0.0f64..=1.0,
        knots in 2usize..10,
        degree in 1usize..=4,
    ) {
        let spec = BasisSpec::new(knots, degree).unwrap();
        let v = spec.eval_basis(t).unwrap();
        prop_assert!((v.sum() - 1.0).abs() < 1e-12);
        prop_assert!(v.iter().all(|&x| x >= 0.0));
        let nonzero = v.iter().filter(|&&x| x != 0.0).count();
        prop_assert!(nonzero <= degree + 1);
    }

    #[test]
    fn warp_is_strictly_monotone_with_fixed_endpoints(
        landmark in 0.01f64..0.99,
        target in 0.01f64..0.99,
        t1 in 0.0f64..=1.0,
        t2 in 0.0f64..=1.0,
    ) {
        prop_assume!((t1 - t2).abs() > 1e-12);
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let w_lo = landmark_warp(lo, landmark, target).unwrap();
        let w_hi = landmark_warp(hi, landmark, target).unwrap();
        prop_assert!(w_lo < w_hi);
        prop_assert_eq!(landmark_warp(0.0, landmark, target).unwrap(), 0.0);
        prop_assert_eq!(landmark_warp(1.0, landmark, target).unwrap(), 1.0);
    }

    #[test]
    fn centering_is_idempotent(values in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let (centered, _) = center_values(&values).unwrap();
        let mean: f64 = centered.iter().sum::<f64>() / centered.len() as f64;
        prop_assert!(mean.abs() < 1e-10);
        let (again, second_mean) = center_values(&centered).unwrap();
        prop_assert!(second_mean.abs() < 1e-10);
        for (a, b) in centered.iter().zip(again.iter()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn posterior_rows_are_probability_vectors(
        scores in prop::collection::vec(-500.0f64..10.0, 12),
    ) {
        let m = DMatrix::from_vec(4, 3, scores);
        let table = PosteriorTable::from_log_scores(&m);
        for i in 0..4 {
            let row_sum: f64 = (0..3).map(|k| table.probs[(i, k)]).sum();
            prop_assert!((row_sum - 1.0).abs() < 1e-8);
            for k in 0..3 {
                let p = table.probs[(i, k)];
                prop_assert!((0.0..=1.0).contains(&p));
                prop_assert!(p <= table.max_prob[i] + 1e-15);
            }
            prop_assert_eq!(table.max_prob[i], table.probs[(i, table.assignment[i])]);
        }
    }

    #[test]
    fn woodbury_agrees_with_direct_conditioning(seed in 0u64..200) {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = rng.gen_range(1..=8);
        let n = rng.gen_range(1..=40);
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let prior = GaussianMoments::centered(
            &a * a.transpose() + DMatrix::identity(d, d) * rng.gen_range(0.3..1.0),
        );
        let design = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
        let noise = DVector::from_fn(n, |_, _| rng.gen_range(0.1..2.0));
        let obs = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let offset = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));

        let direct = gauss::condition_joint(&prior, &design, &noise, &obs, &offset).unwrap();
        let wood = gauss::woodbury_condition(&prior, &design, &noise, &obs, &offset).unwrap();
        prop_assert!((direct.mean - wood.mean).amax() < 1e-8);
        prop_assert!((direct.covariance - wood.covariance).amax() < 1e-8);
    }

    #[test]
    fn knot_count_determines_basis_dimension(knots in 2usize..12, degree in 1usize..=4) {
        let spec = BasisSpec::new(knots, degree).unwrap();
        prop_assert_eq!(spec.num_basis(), knots + degree - 1);
        let distinct = spec.distinct_knots();
        prop_assert_eq!(distinct.len(), knots);
        prop_assert_eq!(distinct[0], 0.0);
        prop_assert_eq!(distinct[knots - 1], 1.0);
    }
}
