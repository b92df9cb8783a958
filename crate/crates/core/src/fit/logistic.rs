//! Pooled (person-period) logistic regression.

use super::dataset::FitResult;
use super::linalg::{chol_inverse_diag, chol_solve, cholesky};
use crate::error::{Result, TsmError};

/// One row per subject-period: binary outcome, covariates (include an explicit
/// intercept column if wanted) and a case weight.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PersonPeriodTable {
    p: usize,
    y: Vec<bool>,
    x: Vec<f64>,
    weight: Vec<f64>,
}

impl PersonPeriodTable {
    pub fn new(p: usize) -> Self {
        Self { p, ..Default::default() }
    }

    pub fn push(&mut self, y: bool, x: &[f64], weight: f64) {
        assert_eq!(x.len(), self.p, "covariate count");
        self.y.push(y);
        self.x.extend_from_slice(x);
        self.weight.push(weight);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.p
    }

    pub fn outcome(&self, i: usize) -> bool {
        self.y[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn loglik(&self, beta: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| {
                let eta: f64 = self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
                // log(1 + e^eta) computed stably
                let log1pe = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
                self.weight[i] * (if self.y[i] { eta } else { 0.0 } - log1pe)
            })
            .sum()
    }
}

pub fn inv_logit(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// Newton (IRLS) fit; fails with [`TsmError::Separation`] when the maximum
/// likelihood estimate does not exist.
pub fn pooled_logistic_fit(table: &PersonPeriodTable) -> Result<FitResult> {
    let p = table.p;
    let n = table.len();
    if n == 0 || p == 0 {
        return Err(TsmError::InvalidData("empty logistic design".into()));
    }
    let ones = table.y.iter().filter(|&&y| y).count();
    if ones == 0 || ones == n {
        return Err(TsmError::Separation);
    }
    let mut beta = vec![0.0; p];
    let mut ll = table.loglik(&beta);
    let mut converged = false;
    let mut iterations = 0;
    let mut factor = vec![0.0; p * p];
    while iterations < 50 {
        iterations += 1;
        let mut grad = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        for i in 0..n {
            let x = table.row(i);
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = inv_logit(eta);
            let w = table.weight[i];
            let r = (if table.y[i] { 1.0 } else { 0.0 }) - mu;
            for a in 0..p {
                grad[a] += w * r * x[a];
                for b in 0..p {
                    info[a * p + b] += w * mu * (1.0 - mu) * x[a] * x[b];
                }
            }
        }
        factor.copy_from_slice(&info);
        if !cholesky(&mut factor, p, 1e-14) {
            return Err(if iterations == 1 { TsmError::Collinear } else { TsmError::Separation });
        }
        let mut step = chol_solve(&factor, p, &grad);
        let mut trial: Vec<f64>;
        let mut ll_new;
        let mut halvings = 0;
        loop {
            trial = beta.iter().zip(&step).map(|(b, s)| b + s).collect();
            ll_new = table.loglik(&trial);
            if ll_new >= ll - 1e-12 * (1.0 + ll.abs()) || halvings >= 10 {
                break;
            }
            step.iter_mut().for_each(|s| *s *= 0.5);
            halvings += 1;
        }
        let change = (ll_new - ll).abs();
        let max_step = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        beta = trial;
        ll = ll_new;
        if change < 1e-9 * (1.0 + ll.abs()) && max_step < 1e-6 {
            converged = true;
            break;
        }
    }
    // coefficients running away mark (quasi-)separation
    for j in 0..p {
        let (lo, hi) = (0..n)
            .map(|i| table.row(i)[j])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let spread = if hi > lo { hi - lo } else { hi.abs().max(1.0) };
        if !beta[j].is_finite() || beta[j].abs() * spread > 25.0 {
            return Err(TsmError::Separation);
        }
    }
    let mut info = vec![0.0; p * p];
    for i in 0..n {
        let x = table.row(i);
        let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
        let mu = inv_logit(eta);
        for a in 0..p {
            for b in 0..p {
                info[a * p + b] += table.weight[i] * mu * (1.0 - mu) * x[a] * x[b];
            }
        }
    }
    if !cholesky(&mut info, p, 1e-14) {
        return Err(TsmError::Separation);
    }
    let se = chol_inverse_diag(&info, p).into_iter().map(f64::sqrt).collect();
    Ok(FitResult { beta, se, loglik: ll, converged, iterations, notes: vec![] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only_recovers_proportion() {
        let mut t = PersonPeriodTable::new(1);
        for i in 0..10 {
            t.push(i < 3, &[1.0], 1.0);
        }
        let fit = pooled_logistic_fit(&t).unwrap();
        assert!((inv_logit(fit.beta[0]) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn covariate_flip_flips_sign() {
        let mut a = PersonPeriodTable::new(2);
        let mut b = PersonPeriodTable::new(2);
        let xs = [0.1, -0.5, 1.2, 0.3, -1.0, 2.0, 0.7, -0.2, 0.9, 1.5];
        let ys = [false, false, true, false, false, true, true, false, false, true];
        for (x, y) in xs.iter().zip(ys) {
            a.push(y, &[1.0, *x], 1.0);
            b.push(y, &[1.0, -*x], 1.0);
        }
        let fa = pooled_logistic_fit(&a).unwrap();
        let fb = pooled_logistic_fit(&b).unwrap();
        assert!((fa.beta[1] + fb.beta[1]).abs() < 1e-8);
        assert!((fa.beta[0] - fb.beta[0]).abs() < 1e-8);
    }

    #[test]
    fn separated_data_is_rejected() {
        let mut t = PersonPeriodTable::new(2);
        for i in 0..10 {
            let x = i as f64;
            t.push(i >= 5, &[1.0, x], 1.0);
        }
        assert!(matches!(pooled_logistic_fit(&t), Err(TsmError::Separation)));
        let mut all_zero = PersonPeriodTable::new(1);
        all_zero.push(false, &[1.0], 1.0);
        assert!(matches!(pooled_logistic_fit(&all_zero), Err(TsmError::Separation)));
    }
}
