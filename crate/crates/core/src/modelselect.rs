//! Model-selection diagnostics across cluster counts: information criteria,
//! relative log-likelihood changes, and the distortion criterion computed by
//! k-means on the posterior-weighted coefficient estimates.

use crate::error::{Error, Result};
use crate::gauss::cholesky_with_ridge;
use crate::kmeans;
use crate::mixmodel::{ModelParams, PreparedSubject};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::BTreeMap;

/// AIC and BIC from a fitted model's observed log-likelihood, parameter
/// count `m` and subject count `n`.
pub fn information_criteria(loglik: f64, m: usize, n: usize) -> (f64, f64) {
    let m = m as f64;
    let aic = 2.0 * m - 2.0 * loglik;
    let bic = m * (n as f64).ln() - 2.0 * loglik;
    (aic, bic)
}

/// Free-parameter count of the fitted model: (G - 1) weights, p for the
/// overall mean, the Stiefel dimension of the orthonormal loading,
/// (G - 1) h constrained offsets, the symmetric covariances, sigma2, and
/// with covariates the G r cluster means plus sigma2_x.
pub fn parameter_count(g: usize, p: usize, h: usize, r: usize) -> usize {
    let d = p + r;
    let mut m = (g - 1) + p + (p * h - h * (h + 1) / 2) + (g * h - h) + g * d * (d + 1) / 2 + 1;
    if r > 0 {
        m += g * r + 1;
    }
    m
}

/// `(ll_{G+1} - ll_G) / ll_{G+1}`.
pub fn relative_loglik_change(ll_g: f64, ll_g_plus_1: f64) -> Result<f64> {
    if ll_g_plus_1 == 0.0 {
        return Err(Error::InvalidConfig(
            "relative log-likelihood change undefined for zero denominator".into(),
        ));
    }
    Ok((ll_g_plus_1 - ll_g) / ll_g_plus_1)
}

/// Posterior-weighted coefficient estimate of one subject:
/// `eta = m + gamma` with `m = lambda0 + Lambda sum_k alpha_k post_k` and
/// `gamma = (sigma2 sum_k Gamma_k^-1 post_k + phi^T phi)^-1 phi^T (y - phi m)`.
///
/// With covariates present the coefficient blocks of the latent covariances
/// play the role of the Gamma_k.
pub fn eta_hat(
    subject: &PreparedSubject,
    params: &ModelParams,
    posterior_row: &DVector<f64>,
) -> Result<DVector<f64>> {
    let g = params.num_clusters();
    let p = params.p();
    if posterior_row.len() != g {
        return Err(Error::DimensionMismatch {
            what: "posterior row",
            expected: g,
            got: posterior_row.len(),
        });
    }

    let mut mixed_alpha = DVector::zeros(params.mean.h());
    for k in 0..g {
        mixed_alpha += &params.mean.alphas[k] * posterior_row[k];
    }
    let prior_mean = &params.mean.lambda0 + &params.mean.loading * mixed_alpha;

    let mut mixed_precision = DMatrix::zeros(p, p);
    for k in 0..g {
        let gamma = params.gamma_block(k);
        let inv = cholesky_with_ridge(&gamma, 1e-10, "coefficient covariance")?.inverse();
        mixed_precision += inv * posterior_row[k];
    }

    let lhs = mixed_precision * params.sigma2 + &subject.gram;
    let rhs = &subject.phity - &subject.gram * &prior_mean;
    let chol = cholesky_with_ridge(&lhs, 1e-12, "eta-hat system")?;
    Ok(prior_mean + chol.solve(&rhs))
}

/// Distortion at G clusters: best-of-restarts k-means within-cluster sum of
/// squares over the coefficient estimates, divided by N and by p.
pub fn distortion(
    eta_hats: &[DVector<f64>],
    g: usize,
    restarts: usize,
    seed: u64,
) -> Result<f64> {
    if eta_hats.is_empty() {
        return Err(Error::EmptyInput("coefficient estimates"));
    }
    if eta_hats.len() < g {
        return Err(Error::InvalidConfig(format!(
            "distortion needs N >= G, got N = {} and G = {g}",
            eta_hats.len()
        )));
    }
    let p = eta_hats[0].len();
    let result = kmeans::kmeans(eta_hats, g, restarts, seed, 200)?;
    Ok(result.inertia / (eta_hats.len() as f64 * p as f64))
}

/// Transformed distortion differences `d_G^-b - d_{G-1}^-b` for every G in
/// the map with a predecessor; the keys must be consecutive.
pub fn distortion_delta(
    distortions: &BTreeMap<usize, f64>,
    b: f64,
) -> Result<BTreeMap<usize, f64>> {
    let keys: Vec<usize> = distortions.keys().cloned().collect();
    for pair in keys.windows(2) {
        if pair[1] != pair[0] + 1 {
            return Err(Error::InvalidConfig(format!(
                "distortion map must cover consecutive G; missing G = {}",
                pair[0] + 1
            )));
        }
    }
    for (&g, &d) in distortions {
        if d.is_nan() || d <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "distortion at G = {g} must be positive, got {d}"
            )));
        }
    }
    let mut deltas = BTreeMap::new();
    for pair in keys.windows(2) {
        let prev = distortions[&pair[0]];
        let next = distortions[&pair[1]];
        deltas.insert(pair[1], next.powf(-b) - prev.powf(-b));
    }
    Ok(deltas)
}

/// Scores of one fitted cluster count.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionEntry {
    pub loglik: f64,
    pub param_count: usize,
    pub aic: f64,
    pub bic: f64,
    /// sigma2 + sigma2_x.
    pub sigma_sum: f64,
    pub distortion: f64,
}

/// Selection table across a sweep of cluster counts.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionSweep {
    pub per_g: BTreeMap<usize, SelectionEntry>,
    /// `d_G^-b - d_{G-1}^-b`, keyed by G.
    pub deltas: BTreeMap<usize, f64>,
    pub b: f64,
}

impl SelectionSweep {
    pub fn new(b: f64) -> Self {
        Self {
            per_g: BTreeMap::new(),
            deltas: BTreeMap::new(),
            b,
        }
    }

    pub fn insert(&mut self, g: usize, entry: SelectionEntry) {
        self.per_g.insert(g, entry);
    }

    /// Fill in the distortion deltas; requires consecutive G keys.
    pub fn compute_deltas(&mut self) -> Result<()> {
        let distortions: BTreeMap<usize, f64> = self
            .per_g
            .iter()
            .map(|(&g, e)| (g, e.distortion))
            .collect();
        self.deltas = distortion_delta(&distortions, self.b)?;
        Ok(())
    }

    /// Relative log-likelihood change from G-1 to G, keyed by G.
    pub fn relative_loglik_changes(&self) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        let entries: Vec<(usize, f64)> =
            self.per_g.iter().map(|(&g, e)| (g, e.loglik)).collect();
        for pair in entries.windows(2) {
            if pair[1].0 == pair[0].0 + 1 {
                if let Ok(change) = relative_loglik_change(pair[0].1, pair[1].1) {
                    out.insert(pair[1].0, change);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn information_criteria_examples() {
        let (aic, bic) = information_criteria(0.0, 1, 1);
        assert_eq!(aic, 2.0);
        assert_eq!(bic, 0.0);

        let (aic, bic) = information_criteria(-100.0, 10, 100);
        assert_abs_diff_eq!(aic, 220.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bic, 10.0 * 100f64.ln() + 200.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bic, 246.0517018598809, epsilon = 1e-10);
    }

    #[test]
    fn bic_minus_aic_identity() {
        for &(ll, m, n) in &[(-31.4, 3usize, 17usize), (-1000.0, 25, 6326), (12.0, 1, 2)] {
            let (aic, bic) = information_criteria(ll, m, n);
            let gap = m as f64 * ((n as f64).ln() - 2.0);
            assert_abs_diff_eq!(bic - aic, gap, epsilon = 1e-10);
        }
    }

    #[test]
    fn aic_improves_only_past_one_nat() {
        let (base, _) = information_criteria(-50.0, 5, 100);
        let (slightly_better, _) = information_criteria(-49.1, 6, 100);
        let (much_better, _) = information_criteria(-48.9, 6, 100);
        assert!(slightly_better > base);
        assert!(much_better < base);
    }

    #[test]
    fn relative_change_examples() {
        assert_eq!(relative_loglik_change(-5.0, -5.0).unwrap(), 0.0);
        let got = relative_loglik_change(-1000.0, -900.0).unwrap();
        assert_abs_diff_eq!(got, -0.1111111111111111, epsilon = 1e-12);
        assert!(relative_loglik_change(-1.0, 0.0).is_err());
    }

    #[test]
    fn distortion_edge_cases() {
        let points: Vec<DVector<f64>> = (0..6)
            .map(|i| DVector::from_vec(vec![i as f64, (i * i) as f64 * 0.1]))
            .collect();
        // G = N: each point its own centroid.
        let d = distortion(&points, 6, 5, 1).unwrap();
        assert!(d.abs() < 1e-18);

        // G = 1: total scatter about the grand mean over N p.
        let d1 = distortion(&points, 1, 5, 1).unwrap();
        let grand = points.iter().sum::<DVector<f64>>() / 6.0;
        let ss: f64 = points.iter().map(|x| (x - &grand).norm_squared()).sum();
        assert_abs_diff_eq!(d1, ss / (6.0 * 2.0), epsilon = 1e-12);

        assert!(distortion(&points, 7, 5, 1).is_err());
    }

    #[test]
    fn delta_examples() {
        let mut d = BTreeMap::new();
        d.insert(1, 4.0);
        d.insert(2, 2.0);
        let deltas = distortion_delta(&d, 1.0).unwrap();
        assert_eq!(deltas.len(), 1);
        assert_abs_diff_eq!(deltas[&2], 0.25, epsilon = 1e-15);

        let mut flat = BTreeMap::new();
        for g in 1..=4 {
            flat.insert(g, 3.0);
        }
        let deltas = distortion_delta(&flat, 4.0).unwrap();
        assert!(deltas.values().all(|&v| v.abs() < 1e-15));

        let mut gapped = BTreeMap::new();
        gapped.insert(1, 1.0);
        gapped.insert(3, 0.5);
        assert!(distortion_delta(&gapped, 4.0).is_err());
    }

    #[test]
    fn parameter_count_single_cluster() {
        // G = 1, h = 0: p mean + p(p+1)/2 covariance + sigma2.
        assert_eq!(parameter_count(1, 8, 0, 0), 8 + 36 + 1);
        // Covariate model adds G r upsilons and sigma2_x.
        assert_eq!(
            parameter_count(1, 8, 0, 3),
            8 + 11 * 12 / 2 + 1 + 3 + 1
        );
    }
}
