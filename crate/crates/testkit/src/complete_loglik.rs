//! Dense evaluator of the expected complete log-likelihood
//! `Q(theta) = E[l(theta) | data, theta_old]` given a fixed E-step cache.
//!
//! Everything is computed from explicit matrices (determinants, generic
//! inverses, full basis products), independently of the closed-form update
//! formulas it is used to cross-check. Candidate parameters that leave the
//! positive-definite cone evaluate to negative infinity so generic
//! maximizers can search freely.

use curveclust::emfit::EStepCache;
use curveclust::mixmodel::{ModelParams, PreparedSubject};

/// Evaluate Q at `params` with expectations taken from `cache`.
pub fn expected_complete_loglik(
    data: &[PreparedSubject],
    cache: &EStepCache,
    params: &ModelParams,
) -> f64 {
    let n = data.len();
    let g = params.num_clusters();
    let p = params.p();
    let r = params.r;

    if params.sigma2 <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if r > 0 && params.sigma2_x.is_none_or(|s| s <= 0.0) {
        return f64::NEG_INFINITY;
    }
    if params.weights.iter().any(|&w| w <= 0.0) {
        return f64::NEG_INFINITY;
    }

    // Per-cluster log-determinants and inverses of the latent covariances.
    // Candidates outside the positive-definite cone (checked through the
    // eigenvalues, not the determinant sign) evaluate to -inf.
    let mut log_dets = Vec::with_capacity(g);
    let mut inverses = Vec::with_capacity(g);
    for cov in &params.latent_covs {
        let sym = (cov + cov.transpose()) * 0.5;
        let eigenvalues = sym.clone().symmetric_eigen().eigenvalues;
        if eigenvalues.iter().any(|&l| l <= 0.0) {
            return f64::NEG_INFINITY;
        }
        let Some(inv) = sym.try_inverse() else {
            return f64::NEG_INFINITY;
        };
        log_dets.push(eigenvalues.iter().map(|l| l.ln()).sum::<f64>());
        inverses.push(inv);
    }

    let mus: Vec<_> = (0..g).map(|k| params.mean.mu(k)).collect();
    let mut q = 0.0;
    for i in 0..n {
        let subject = &data[i];
        let phi = subject.basis.as_matrix();
        for k in 0..g {
            let w = cache.resp[(i, k)];
            if w == 0.0 {
                continue;
            }
            q += w * params.weights[k].ln();

            // Latent quadratic term.
            let m = &cache.cond_mean[i][k];
            let second_moment = &cache.cond_cov[i][k] + m * m.transpose();
            let quad = (&inverses[k] * second_moment).trace();
            q += -0.5 * w * (log_dets[k] + quad);

            // Curve residual term with dense basis products.
            let gamma_hat = m.rows(0, p).clone_owned();
            let v_gamma = cache.cond_cov[i][k].view((0, 0), (p, p)).clone_owned();
            let resid = &subject.values - phi * (&mus[k] + gamma_hat);
            let spread = (phi * v_gamma * phi.transpose()).trace();
            q += -0.5
                * w
                * (subject.n() as f64 * params.sigma2.ln()
                    + (resid.norm_squared() + spread) / params.sigma2);

            if r > 0 {
                let sigma2_x = params.sigma2_x.expect("checked");
                let ups = &params.covariate_means.as_ref().expect("covariate model")[k];
                let x = subject.covariates.as_ref().expect("covariate model");
                let delta_hat = m.rows(p, r).clone_owned();
                let v_delta = cache.cond_cov[i][k].view((p, p), (r, r)).clone_owned();
                let resid_x = x - ups - delta_hat;
                q += -0.5
                    * w
                    * (r as f64 * sigma2_x.ln()
                        + (resid_x.norm_squared() + v_delta.trace()) / sigma2_x);
            }
        }
    }
    q
}
