//! Weighted Cox partial likelihood on counting-process data.

use serde::{Deserialize, Serialize};

use super::dataset::{FitResult, SurvDataset};
use super::linalg::{chol_inverse_diag, chol_solve, cholesky};
use crate::error::{Result, TsmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ties {
    #[default]
    Efron,
    Breslow,
}

#[derive(Debug, Clone)]
pub struct CoxOptions {
    pub ties: Ties,
    pub max_iter: usize,
    /// Convergence when `|Δloglik| < tol * (1 + |loglik|)`.
    pub tol: f64,
    pub init: Option<Vec<f64>>,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self { ties: Ties::Efron, max_iter: 25, tol: 1e-9, init: None }
    }
}

impl CoxOptions {
    pub fn with_ties(ties: Ties) -> Self {
        Self { ties, ..Self::default() }
    }
}

pub fn cox_fit(data: &SurvDataset) -> Result<FitResult> {
    cox_fit_with(data, &CoxOptions::default())
}

/// Partial likelihood pieces at a fixed coefficient vector.
pub struct CoxEval {
    pub loglik: f64,
    pub score: Vec<f64>,
    /// Observed information, row-major `p x p`.
    pub info: Vec<f64>,
}

pub(crate) struct CoxProblem<'a> {
    data: &'a SurvDataset,
    p: usize,
    by_stop: Vec<usize>,
    by_start: Option<Vec<usize>>,
    xc: Vec<f64>,
    ties: Ties,
}

impl<'a> CoxProblem<'a> {
    pub(crate) fn new(data: &'a SurvDataset, ties: Ties) -> Self {
        let n = data.len();
        let p = data.n_covariates();
        let mut by_stop: Vec<usize> = (0..n).collect();
        by_stop.sort_unstable_by(|&a, &b| data.stop()[b].total_cmp(&data.stop()[a]));
        let by_start = (!data.is_right_censored()).then(|| {
            let mut v: Vec<usize> = (0..n).collect();
            v.sort_unstable_by(|&a, &b| data.start()[b].total_cmp(&data.start()[a]));
            v
        });
        // centring leaves beta unchanged and keeps exp() well scaled
        let mut means = vec![0.0; p];
        let wsum: f64 = data.weight().iter().sum();
        for i in 0..n {
            for j in 0..p {
                means[j] += data.weight()[i] * data.covariate(i, j);
            }
        }
        means.iter_mut().for_each(|m| *m /= wsum);
        let mut xc = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                xc.push(data.covariate(i, j) - means[j]);
            }
        }
        Self { data, p, by_stop, by_start, xc, ties }
    }

    pub(crate) fn eval(&self, beta: &[f64]) -> CoxEval {
        if self.p == 1 {
            return self.eval_single(beta[0]);
        }
        let p = self.p;
        let d = self.data;
        let n = d.len();
        let (stop, start, event, w) = (d.stop(), d.start(), d.event(), d.weight());
        let risk: Vec<f64> = (0..n)
            .map(|i| {
                let eta: f64 = (0..p).map(|j| self.xc[i * p + j] * beta[j]).sum();
                w[i] * eta.exp()
            })
            .collect();
        let mut loglik = 0.0;
        let mut score = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        let (mut s0, mut s1, mut s2) = (0.0, vec![0.0; p], vec![0.0; p * p]);
        let (mut d1, mut d2) = (vec![0.0; p], vec![0.0; p * p]);
        let mut a = vec![0.0; p];
        let add = |s0: &mut f64, s1: &mut [f64], s2: &mut [f64], i: usize, sign: f64| {
            let r = sign * risk[i];
            *s0 += r;
            let x = &self.xc[i * p..(i + 1) * p];
            for j in 0..p {
                s1[j] += r * x[j];
                for k in 0..p {
                    s2[j * p + k] += r * x[j] * x[k];
                }
            }
        };
        let mut i = 0;
        let mut k = 0;
        while i < n {
            let t = stop[self.by_stop[i]];
            let mut nd = 0usize;
            let mut wd = 0.0;
            let mut d0 = 0.0;
            d1.iter_mut().for_each(|v| *v = 0.0);
            d2.iter_mut().for_each(|v| *v = 0.0);
            let mut j = i;
            while j < n && stop[self.by_stop[j]] == t {
                let r = self.by_stop[j];
                add(&mut s0, &mut s1, &mut s2, r, 1.0);
                if event[r] {
                    nd += 1;
                    wd += w[r];
                    add(&mut d0, &mut d1, &mut d2, r, 1.0);
                    let x = &self.xc[r * p..(r + 1) * p];
                    for c in 0..p {
                        loglik += w[r] * x[c] * beta[c];
                        score[c] += w[r] * x[c];
                    }
                }
                j += 1;
            }
            if let Some(by_start) = &self.by_start {
                while k < n && start[by_start[k]] >= t {
                    add(&mut s0, &mut s1, &mut s2, by_start[k], -1.0);
                    k += 1;
                }
            }
            if nd > 0 {
                let meanw = wd / nd as f64;
                for m in 0..nd {
                    let frac = match self.ties {
                        Ties::Efron => m as f64 / nd as f64,
                        Ties::Breslow => 0.0,
                    };
                    let denom = s0 - frac * d0;
                    loglik -= meanw * denom.ln();
                    for c in 0..p {
                        a[c] = (s1[c] - frac * d1[c]) / denom;
                        score[c] -= meanw * a[c];
                    }
                    for c in 0..p {
                        for e in 0..p {
                            info[c * p + e] += meanw * ((s2[c * p + e] - frac * d2[c * p + e]) / denom - a[c] * a[e]);
                        }
                    }
                }
            }
            i = j;
        }
        CoxEval { loglik, score, info }
    }

    /// Scalar version of [`CoxProblem::eval`] for the common one-covariate case.
    fn eval_single(&self, beta: f64) -> CoxEval {
        let d = self.data;
        let n = d.len();
        let (stop, start, event, w) = (d.stop(), d.start(), d.event(), d.weight());
        let x = &self.xc;
        let efron = self.ties == Ties::Efron;
        let (mut loglik, mut score, mut info) = (0.0, 0.0, 0.0);
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        let (mut i, mut k) = (0, 0);
        while i < n {
            let t = stop[self.by_stop[i]];
            let (mut nd, mut wd, mut d0, mut d1, mut d2) = (0usize, 0.0, 0.0, 0.0, 0.0);
            let mut j = i;
            while j < n && stop[self.by_stop[j]] == t {
                let r = self.by_stop[j];
                let xr = x[r];
                let risk = w[r] * (xr * beta).exp();
                s0 += risk;
                s1 += risk * xr;
                s2 += risk * xr * xr;
                if event[r] {
                    nd += 1;
                    wd += w[r];
                    d0 += risk;
                    d1 += risk * xr;
                    d2 += risk * xr * xr;
                    loglik += w[r] * xr * beta;
                    score += w[r] * xr;
                }
                j += 1;
            }
            if let Some(by_start) = &self.by_start {
                while k < n && start[by_start[k]] >= t {
                    let r = by_start[k];
                    let xr = x[r];
                    let risk = w[r] * (xr * beta).exp();
                    s0 -= risk;
                    s1 -= risk * xr;
                    s2 -= risk * xr * xr;
                    k += 1;
                }
            }
            if nd > 0 {
                let meanw = wd / nd as f64;
                for m in 0..nd {
                    let frac = if efron { m as f64 / nd as f64 } else { 0.0 };
                    let denom = s0 - frac * d0;
                    let a = (s1 - frac * d1) / denom;
                    loglik -= meanw * denom.ln();
                    score -= meanw * a;
                    info += meanw * ((s2 - frac * d2) / denom - a * a);
                }
            }
            i = j;
        }
        CoxEval { loglik, score: vec![score], info: vec![info] }
    }
}

/// Maximizes the weighted partial likelihood by Newton-Raphson with step halving.
pub fn cox_fit_with(data: &SurvDataset, opts: &CoxOptions) -> Result<FitResult> {
    if data.n_events() == 0 {
        return Err(TsmError::NoEvents);
    }
    let p = data.n_covariates();
    if p == 0 {
        return Err(TsmError::InvalidData("cox_fit needs at least one covariate".into()));
    }
    let problem = CoxProblem::new(data, opts.ties);
    let mut beta = opts.init.clone().unwrap_or_else(|| vec![0.0; p]);
    if beta.len() != p {
        return Err(TsmError::InvalidData("initial value has the wrong length".into()));
    }
    let mut cur = problem.eval(&beta);
    let mut factor = cur.info.clone();
    if !cholesky(&mut factor, p, 1e-10) {
        return Err(TsmError::Collinear);
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut step = chol_solve(&factor, p, &cur.score);
        let mut trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + s).collect();
        let mut next = problem.eval(&trial);
        let mut halvings = 0;
        while (!next.loglik.is_finite() || next.loglik < cur.loglik - 1e-12 * (1.0 + cur.loglik.abs())) && halvings < 10
        {
            step.iter_mut().for_each(|s| *s *= 0.5);
            trial = beta.iter().zip(&step).map(|(b, s)| b + s).collect();
            next = problem.eval(&trial);
            halvings += 1;
        }
        if !next.loglik.is_finite() {
            break;
        }
        let change = (next.loglik - cur.loglik).abs();
        beta = trial;
        cur = next;
        factor = cur.info.clone();
        if !cholesky(&mut factor, p, 1e-14) {
            // information vanished: coefficient running off to infinity
            return Err(TsmError::InfiniteEstimate);
        }
        if change < opts.tol * (1.0 + cur.loglik.abs()) {
            converged = true;
            break;
        }
    }
    for j in 0..p {
        let (lo, hi) = (0..data.len())
            .map(|i| data.covariate(i, j))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !beta[j].is_finite() || beta[j].abs() * (hi - lo) > 12.0 {
            return Err(TsmError::InfiniteEstimate);
        }
    }
    let se = chol_inverse_diag(&factor, p).into_iter().map(f64::sqrt).collect();
    let mut notes = Vec::new();
    if !converged {
        notes.push(format!("cox: no convergence after {iterations} iterations"));
    }
    Ok(FitResult { beta, se, loglik: cur.loglik, converged, iterations, notes })
}

/// Score test of `beta = 0`: `U' I^{-1} U` at zero.
pub fn cox_score_test(data: &SurvDataset, ties: Ties) -> Result<f64> {
    let p = data.n_covariates();
    let problem = CoxProblem::new(data, ties);
    let ev = problem.eval(&vec![0.0; p]);
    let mut f = ev.info.clone();
    if !cholesky(&mut f, p, 1e-10) {
        return Err(TsmError::Collinear);
    }
    let x = chol_solve(&f, p, &ev.score);
    Ok(x.iter().zip(&ev.score).map(|(a, b)| a * b).sum())
}

/// Partial log-likelihood at `beta`, for diagnostics and tests.
pub fn cox_loglik(data: &SurvDataset, beta: &[f64], ties: Ties) -> f64 {
    CoxProblem::new(data, ties).eval(beta).loglik
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_group(times: &[f64], events: &[bool], grp: &[f64]) -> SurvDataset {
        SurvDataset::from_right_censored(times, events, grp).unwrap()
    }

    /// Brute-force Breslow/Efron-free partial likelihood for untied data.
    fn brute_loglik(times: &[f64], events: &[bool], x: &[f64], beta: f64) -> f64 {
        let mut ll = 0.0;
        for i in 0..times.len() {
            if !events[i] {
                continue;
            }
            let denom: f64 = (0..times.len()).filter(|&j| times[j] >= times[i]).map(|j| (beta * x[j]).exp()).sum();
            ll += beta * x[i] - denom.ln();
        }
        ll
    }

    #[test]
    fn matches_grid_search_on_tiny_dataset() {
        let times = [1.0, 3.0, 2.0, 4.0];
        let events = [true; 4];
        let grp = [0.0, 0.0, 1.0, 1.0];
        let fit = cox_fit(&two_group(&times, &events, &grp)).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut b = -5.0;
        while b <= 5.0 {
            let ll = brute_loglik(&times, &events, &grp, b);
            if ll > best.0 {
                best = (ll, b);
            }
            b += 1e-4;
        }
        assert!((fit.beta[0] - best.1).abs() < 1e-3, "{} vs {}", fit.beta[0], best.1);
        assert!(fit.converged);
        assert!((fit.loglik - best.0).abs() < 1e-6);
    }

    #[test]
    fn constant_covariate_is_collinear() {
        let d = two_group(&[1.0, 2.0, 3.0], &[true, true, false], &[0.0, 0.0, 0.0]);
        assert!(matches!(cox_fit(&d), Err(TsmError::Collinear)));
    }

    #[test]
    fn weights_leave_beta_unchanged() {
        let times = [1.0, 3.0, 2.0, 4.0, 5.5, 0.7, 2.2];
        let events = [true, true, true, false, true, true, false];
        let grp = [0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0];
        let d = two_group(&times, &events, &grp);
        let a = cox_fit(&d).unwrap();
        let b = cox_fit(&d.reweighted(2.0)).unwrap();
        assert!((a.beta[0] - b.beta[0]).abs() < 1e-8);
        assert!((a.se[0] / b.se[0] - 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn perfect_separation_is_infinite() {
        // every group-1 subject dies before every group-0 subject
        let times = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let events = [true; 6];
        let grp = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        assert!(matches!(cox_fit(&two_group(&times, &events, &grp)), Err(TsmError::InfiniteEstimate)));
    }

    #[test]
    fn no_events() {
        let d = two_group(&[1.0, 2.0], &[false, false], &[0.0, 1.0]);
        assert!(matches!(cox_fit(&d), Err(TsmError::NoEvents)));
    }

    #[test]
    fn efron_handles_ties_like_hand_computation() {
        // two tied deaths at t=1, one from each group, risk set of four
        let times = [1.0, 1.0, 2.0, 2.0];
        let events = [true, true, true, true];
        let grp = [1.0, 0.0, 1.0, 0.0];
        let d = two_group(&times, &events, &grp);
        let b = 0.3f64;
        let e = b.exp();
        // uncentred Efron: first death term uses full risk set, second removes half the deaths
        let t1 = b - (2.0 * e + 2.0).ln() - (2.0 * e + 2.0 - 0.5 * (e + 1.0)).ln();
        let t2 = b - (e + 1.0).ln() - (e + 1.0 - 0.5 * (e + 1.0)).ln();
        let ll = cox_loglik(&d, &[b], Ties::Efron);
        // centring shifts every term by the same constant: compare differences in beta
        let ll0 = cox_loglik(&d, &[0.0], Ties::Efron);
        let h0 = -(4f64).ln() - (3f64).ln() - (2f64).ln() - (1f64).ln();
        assert!(((ll - ll0) - (t1 + t2 - h0)).abs() < 1e-12);
    }

    #[test]
    fn counting_process_split_matches_unsplit() {
        let times = [1.0, 3.0, 2.0, 4.0, 5.5, 0.7, 2.2];
        let events = [true, true, true, false, true, true, false];
        let grp = [0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0];
        let whole = cox_fit(&two_group(&times, &events, &grp)).unwrap();
        let mut split = SurvDataset::new(1);
        for i in 0..times.len() {
            let cut = times[i] / 2.0;
            split.push(0.0, cut, false, &[grp[i]], 1.0).unwrap();
            split.push(cut, times[i], events[i], &[grp[i]], 1.0).unwrap();
        }
        let parts = cox_fit(&split).unwrap();
        assert!((whole.beta[0] - parts.beta[0]).abs() < 1e-10);
        assert!((whole.se[0] - parts.se[0]).abs() < 1e-10);
    }
}
