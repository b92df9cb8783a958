//! Bayesian imputed multiplicative method.
//!
//! Each posterior draw of the piecewise hazards maps a switcher's post-crossover
//! duration `d*` to the duration `d` with `Λ₂(d) = Λ₂*(d*)`, i.e. the same survival
//! quantile under the control hazard. The Cox estimates over draws are combined as
//! `mean(v_k) + var(beta_k)`.

use serde::{Deserialize, Serialize};

use super::simple::cox;
use super::{has_arm_data, BimmConfig};
use crate::error::{Result, TsmError};
use crate::fit::{cox_fit_with, gamma_posterior_draws, CoxOptions, FitResult, PathSummary, SurvDataset, Ties};
use crate::hazard::{Clock, PiecewiseHazard};
use crate::rng::rng_from_seed;
use crate::simulate::PatientRecord;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BimmDiagnostics {
    pub draws: usize,
    /// No progressed patient stayed on control; the fixed-point branch was used.
    pub full_crossover: bool,
    pub failed_fits: usize,
    pub nonconverged: usize,
    /// Transforms whose target level lay beyond the hazard's support.
    pub clamped: usize,
    /// Cox fits spent in the full-crossover fixed-point iterations.
    pub fixed_point_iterations: usize,
}

/// Counterfactual time for a switcher with crossover `u` and observed time `y`.
/// Semi-Markov clock maps durations since crossover; Markov maps cumulative hazard
/// accrued after `u` on the entry clock.
pub fn bimm_transform(
    lambda2: &PiecewiseHazard,
    lambda2_star: &PiecewiseHazard,
    u: f64,
    y: f64,
    clock: Clock,
    clamped: &mut usize,
) -> f64 {
    let (level, offset) = match clock {
        Clock::SemiMarkov => (lambda2_star.cumulative(y - u), 0.0),
        Clock::Markov => {
            let l = lambda2.cumulative(u) + lambda2_star.cumulative(y) - lambda2_star.cumulative(u);
            (l, u)
        }
    };
    let t = match lambda2.inverse_cumulative(level) {
        Ok(t) => t,
        Err(_) => {
            *clamped += 1;
            *lambda2.cuts().last().expect("non-empty grid")
        }
    };
    match clock {
        Clock::SemiMarkov => u + t,
        // entry-clock result; never earlier than the crossover
        Clock::Markov => t.max(offset),
    }
}

struct Switcher {
    index: usize,
    u: f64,
    y: f64,
}

fn adjusted(records: &[PatientRecord], switchers: &[Switcher], new_times: &[f64]) -> Result<SurvDataset> {
    let mut times: Vec<f64> = records.iter().map(|r| r.time).collect();
    for (s, &t) in switchers.iter().zip(new_times) {
        times[s.index] = t;
    }
    let mut data = SurvDataset::with_capacity(1, records.len());
    for (r, t) in records.iter().zip(times) {
        data.push(0.0, t, r.event, &[if r.is_treatment() { 1.0 } else { 0.0 }], 1.0)?;
    }
    Ok(data)
}

/// Returns the combined fit and per-draw diagnostics. The fit is flagged as not
/// converged when more than 1% of draws fail.
pub fn bimm(
    records: &[PatientRecord],
    cuts: &[f64],
    cfg: &BimmConfig,
    ties: Ties,
    seed: u64,
) -> Result<(FitResult, BimmDiagnostics)> {
    has_arm_data(records)?;
    let switchers: Vec<Switcher> = records
        .iter()
        .enumerate()
        .filter_map(|(index, r)| match r.cross_time {
            Some(u) if r.switched && !r.is_treatment() => Some(Switcher { index, u, y: r.time }),
            _ => None,
        })
        .collect();
    let mut diag = BimmDiagnostics { draws: cfg.draws, ..Default::default() };
    if switchers.is_empty() {
        // every draw leaves the data unchanged
        let fit = cox(&adjusted(records, &[], &[])?, ties)?;
        return Ok((fit, diag));
    }
    let summary = PathSummary::from_records(records, cuts, cfg.clock)?;
    diag.full_crossover = records.iter().all(|r| r.is_treatment() || r.cross_time.is_none() || r.switched);
    let draws = gamma_posterior_draws(&summary, cfg.prior, cfg.draws, &mut rng_from_seed(seed))?;
    let mut betas = Vec::with_capacity(cfg.draws);
    let mut vars = Vec::with_capacity(cfg.draws);
    let mut new_times = vec![0.0; switchers.len()];
    let mut warm = 0.0;
    for k in 0..draws.len() {
        let h2s = draws.lambda2_star_hazard(k);
        let outcome = if diag.full_crossover {
            fixed_point(records, &switchers, &h2s, cfg, ties, &mut new_times, &mut diag, warm)
        } else {
            let h2 = draws.lambda2_hazard(k);
            for (s, t) in switchers.iter().zip(new_times.iter_mut()) {
                *t = bimm_transform(&h2, &h2s, s.u, s.y, cfg.clock, &mut diag.clamped);
            }
            let opts = CoxOptions { init: Some(vec![warm]), ..CoxOptions::with_ties(ties) };
            adjusted(records, &switchers, &new_times).and_then(|d| cox_fit_with(&d, &opts)).map(|f| (f, true))
        };
        match outcome {
            Ok((fit, converged)) => {
                if !converged {
                    diag.nonconverged += 1;
                }
                warm = fit.beta[0];
                betas.push(fit.beta[0]);
                vars.push(fit.se[0] * fit.se[0]);
            }
            Err(_) => diag.failed_fits += 1,
        }
    }
    if betas.is_empty() {
        return Err(TsmError::InvalidData("every posterior draw failed to fit".into()));
    }
    let m = betas.len() as f64;
    let mean = betas.iter().sum::<f64>() / m;
    let within = vars.iter().sum::<f64>() / m;
    let between = if betas.len() > 1 { betas.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
    let bad = diag.failed_fits + diag.nonconverged;
    let mut notes = Vec::new();
    if bad > 0 {
        notes.push(format!("bimm: {} failed and {} non-converged draws", diag.failed_fits, diag.nonconverged));
    }
    if diag.clamped > 0 {
        notes.push(format!("bimm: {} transforms clamped at the last cut", diag.clamped));
    }
    let fit = FitResult {
        beta: vec![mean],
        se: vec![(within + between).sqrt()],
        loglik: f64::NAN,
        converged: (bad as f64) <= 0.01 * cfg.draws as f64,
        iterations: cfg.draws,
        notes,
    };
    Ok((fit, diag))
}

/// Full-crossover branch: `λ₂ = λ₂* e^{-beta}` iterated with the Cox estimate until
/// `|Δbeta| < tol`. The Cox estimate depends on the data only through ranks, so the
/// map is piecewise constant and can cycle; that case reports non-convergence.
#[allow(clippy::too_many_arguments)]
fn fixed_point(
    records: &[PatientRecord],
    switchers: &[Switcher],
    h2s: &PiecewiseHazard,
    cfg: &BimmConfig,
    ties: Ties,
    new_times: &mut [f64],
    diag: &mut BimmDiagnostics,
    warm: f64,
) -> Result<(FitResult, bool)> {
    let mut beta = 0.0f64;
    let mut last: Option<FitResult> = None;
    for _ in 0..cfg.max_iter {
        let h2 = h2s.scaled((-beta).exp())?;
        for (s, t) in switchers.iter().zip(new_times.iter_mut()) {
            *t = bimm_transform(&h2, h2s, s.u, s.y, cfg.clock, &mut diag.clamped);
        }
        diag.fixed_point_iterations += 1;
        let init = last.as_ref().map_or(warm, |f| f.beta[0]);
        let opts = CoxOptions { init: Some(vec![init]), ..CoxOptions::with_ties(ties) };
        let fit = cox_fit_with(&adjusted(records, switchers, new_times)?, &opts)?;
        let next = fit.beta[0];
        let done = (next - beta).abs() < cfg.tol;
        beta = next;
        last = Some(fit);
        if done {
            return Ok((last.expect("set above"), true));
        }
    }
    Ok((last.expect("max_iter > 0"), false))
}
