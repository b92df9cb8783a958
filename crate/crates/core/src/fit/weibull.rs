//! Weibull accelerated failure time regression by maximum likelihood.
//!
//! Model: `log T = mu + gamma' z + sigma W` with `W` standard minimum extreme value.
//! Parameters are `(mu, gamma, log sigma)`.

use serde::{Deserialize, Serialize};

use super::dataset::{FitResult, SurvDataset};
use super::linalg::{chol_inverse_diag, chol_solve, cholesky};
use crate::error::{Result, TsmError};

const LOG_SIGMA_MIN: f64 = -6.907_755_278_982_137; // ln 1e-3
const LOG_SIGMA_MAX: f64 = 6.907_755_278_982_137;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeibullAftFit {
    /// `[mu, gamma_1..gamma_p, log sigma]`
    pub params: Vec<f64>,
    pub se: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl WeibullAftFit {
    pub fn intercept(&self) -> f64 {
        self.params[0]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.params[1..self.params.len() - 1]
    }

    pub fn scale(&self) -> f64 {
        self.params[self.params.len() - 1].exp()
    }

    /// Covariate effects (log acceleration factors) as a [`FitResult`].
    pub fn to_fit_result(&self) -> FitResult {
        let p = self.params.len();
        FitResult {
            beta: self.params[1..p - 1].to_vec(),
            se: self.se[1..p - 1].to_vec(),
            loglik: self.loglik,
            converged: self.converged,
            iterations: self.iterations,
            notes: vec![],
        }
    }
}

struct Eval {
    loglik: f64,
    grad: Vec<f64>,
    // negative Hessian
    neg_hess: Vec<f64>,
}

fn evaluate(data: &SurvDataset, logt: &[f64], theta: &[f64]) -> Eval {
    let p = data.n_covariates();
    let m = p + 2;
    let s = theta[m - 1];
    let sigma = s.exp();
    let mut loglik = 0.0;
    let mut grad = vec![0.0; m];
    let mut neg_hess = vec![0.0; m * m];
    let mut x = vec![0.0; p + 1];
    x[0] = 1.0;
    for i in 0..data.len() {
        x[1..].copy_from_slice(data.covariates(i));
        let eta: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
        let w = (logt[i] - eta) / sigma;
        let ew = w.exp();
        let delta = if data.event()[i] { 1.0 } else { 0.0 };
        let wt = data.weight()[i];
        loglik += wt * (delta * (w - s) - ew);
        let d_eta = (ew - delta) / sigma;
        let d_s = -delta + w * (ew - delta);
        let h_ee = -ew / (sigma * sigma);
        let h_es = -(w * ew + ew - delta) / sigma;
        let h_ss = -w * (ew - delta) - w * w * ew;
        for a in 0..=p {
            grad[a] += wt * d_eta * x[a];
            for b in 0..=p {
                neg_hess[a * m + b] -= wt * h_ee * x[a] * x[b];
            }
            neg_hess[a * m + m - 1] -= wt * h_es * x[a];
            neg_hess[(m - 1) * m + a] -= wt * h_es * x[a];
        }
        grad[m - 1] += wt * d_s;
        neg_hess[(m - 1) * m + m - 1] -= wt * h_ss;
    }
    Eval { loglik, grad, neg_hess }
}

/// Fits the Weibull AFT model to right-censored rows (`start` must be 0).
pub fn weibull_aft_fit(data: &SurvDataset) -> Result<WeibullAftFit> {
    if !data.is_right_censored() {
        return Err(TsmError::InvalidData("weibull_aft_fit needs right-censored data".into()));
    }
    if data.n_events() < 2 {
        return Err(TsmError::NoEvents);
    }
    let p = data.n_covariates();
    let m = p + 2;
    let logt: Vec<f64> = data.stop().iter().map(|t| t.ln()).collect();
    // exponential start: sigma = 1, mu = log(total time / events)
    let wsum_t: f64 = data.stop().iter().zip(data.weight()).map(|(t, w)| t * w).sum();
    let wsum_d: f64 = data.event().iter().zip(data.weight()).filter(|(e, _)| **e).map(|(_, w)| w).sum();
    let mut theta = vec![0.0; m];
    theta[0] = (wsum_t / wsum_d).ln();
    let mut cur = evaluate(data, &logt, &theta);
    let mut converged = false;
    let mut iterations = 0;
    let mut factor = cur.neg_hess.clone();
    while iterations < 100 {
        iterations += 1;
        let mut step = if cholesky(&mut factor, m, 1e-13) {
            chol_solve(&factor, m, &cur.grad)
        } else {
            // fall back to a damped gradient step when the Hessian is not definite
            let norm = cur.grad.iter().map(|g| g * g).sum::<f64>().sqrt().max(1.0);
            cur.grad.iter().map(|g| 0.1 * g / norm).collect()
        };
        let mut next_theta = vec![0.0; m];
        let mut next;
        let mut halvings = 0;
        loop {
            for k in 0..m {
                next_theta[k] = theta[k] + step[k];
            }
            next_theta[m - 1] = next_theta[m - 1].clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX);
            next = evaluate(data, &logt, &next_theta);
            if (next.loglik.is_finite() && next.loglik >= cur.loglik - 1e-12 * (1.0 + cur.loglik.abs()))
                || halvings >= 10
            {
                break;
            }
            step.iter_mut().for_each(|s| *s *= 0.5);
            halvings += 1;
        }
        if !next.loglik.is_finite() || next.loglik < cur.loglik - 1e-12 * (1.0 + cur.loglik.abs()) {
            break;
        }
        let change = next.loglik - cur.loglik;
        theta = next_theta;
        cur = next;
        factor = cur.neg_hess.clone();
        if change < 1e-9 * (1.0 + cur.loglik.abs()) {
            converged = true;
            break;
        }
    }
    let mut f = cur.neg_hess.clone();
    let se = if cholesky(&mut f, m, 1e-14) {
        chol_inverse_diag(&f, m).into_iter().map(f64::sqrt).collect()
    } else {
        if converged {
            return Err(TsmError::Collinear);
        }
        vec![f64::NAN; m]
    };
    Ok(WeibullAftFit { params: theta, se, loglik: cur.loglik, converged, iterations })
}
