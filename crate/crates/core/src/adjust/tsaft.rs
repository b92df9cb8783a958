//! Two-stage adjustment with a Weibull AFT model from the secondary baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::simple::cox;
use super::{has_arm_data, TsaftConfig};
use crate::error::{Result, TsmError};
use crate::fit::{weibull_aft_fit, FitResult, SurvDataset, Ties};
use crate::rng::rng_from_seed;
use crate::simulate::PatientRecord;

/// What to do when every progressed control patient switched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FullCrossover {
    /// Assume the switch effect equals the randomized effect and solve for both.
    #[default]
    EqualEffects,
    Error,
}

/// Stage 1: log acceleration factor of switching, from a Weibull AFT fit to the
/// post-crossover durations of crossed control patients.
pub fn tsaft_stage1(records: &[PatientRecord]) -> Result<f64> {
    let crossed: Vec<&PatientRecord> = records.iter().filter(|r| !r.is_treatment() && r.cross_time.is_some()).collect();
    let switchers = crossed.iter().filter(|r| r.switched).count();
    if switchers == 0 {
        return Ok(0.0);
    }
    if switchers == crossed.len() {
        return Err(TsmError::NotIdentifiable("no progressed patient stayed on control".into()));
    }
    let mut data = SurvDataset::with_capacity(1, crossed.len());
    for r in &crossed {
        let u = r.cross_time.expect("filtered");
        data.push(0.0, r.time - u, r.event, &[if r.switched { 1.0 } else { 0.0 }], 1.0)?;
    }
    let fit = weibull_aft_fit(&data).map_err(|e| match e {
        TsmError::NoEvents => TsmError::NotIdentifiable("fewer than two post-crossover events".into()),
        other => other,
    })?;
    if !fit.converged {
        return Err(TsmError::NotIdentifiable("stage-1 Weibull fit did not converge".into()));
    }
    Ok(fit.coefficients()[0])
}

/// Observed treatment arm and control arm with switchers' post-crossover time
/// shrunk by `e^{-gamma}`; censored switchers keep their censoring flag.
fn adjusted(records: &[PatientRecord], gamma: f64) -> Result<SurvDataset> {
    let shrink = (-gamma).exp();
    let mut data = SurvDataset::with_capacity(1, records.len());
    for r in records {
        let (t, x) = match (r.is_treatment(), r.cross_time) {
            (true, _) => (r.time, 1.0),
            (false, Some(u)) if r.switched => (u + shrink * (r.time - u), 0.0),
            (false, _) => (r.time, 0.0),
        };
        data.push(0.0, t, r.event, &[x], 1.0)?;
    }
    Ok(data)
}

/// Fixed point of `gamma = phi1(gamma)` with `phi1` the Weibull AFT arm effect on the
/// adjusted data.
fn equal_effects(records: &[PatientRecord], cfg: &TsaftConfig) -> Result<f64> {
    let mut gamma = 0.0;
    for _ in 0..cfg.max_iter {
        let fit = weibull_aft_fit(&adjusted(records, gamma)?)?;
        let next = fit.coefficients()[0];
        if !next.is_finite() {
            break;
        }
        if (next - gamma).abs() < cfg.tol {
            return Ok(next);
        }
        gamma = next;
    }
    Err(TsmError::NotIdentifiable("equal-effects iteration did not converge".into()))
}

fn switch_effect(records: &[PatientRecord], cfg: &TsaftConfig) -> Result<f64> {
    match tsaft_stage1(records) {
        Err(TsmError::NotIdentifiable(msg)) if msg.starts_with("no progressed") => match cfg.full_crossover {
            FullCrossover::EqualEffects => equal_effects(records, cfg),
            FullCrossover::Error => Err(TsmError::NotIdentifiable(msg)),
        },
        other => other,
    }
}

fn point(records: &[PatientRecord], cfg: &TsaftConfig, ties: Ties) -> Result<(f64, FitResult)> {
    let gamma = switch_effect(records, cfg)?;
    Ok((gamma, cox(&adjusted(records, gamma)?, ties)?))
}

/// Two-stage estimate with a within-arm nonparametric bootstrap standard error.
pub fn tsaft(records: &[PatientRecord], cfg: &TsaftConfig, ties: Ties, seed: u64) -> Result<FitResult> {
    has_arm_data(records)?;
    let (gamma, mut fit) = point(records, cfg, ties)?;
    fit.notes.push(format!("gamma = {gamma:.6}"));
    if cfg.bootstrap == 0 {
        return Ok(fit);
    }
    let treat: Vec<usize> = (0..records.len()).filter(|&i| records[i].is_treatment()).collect();
    let control: Vec<usize> = (0..records.len()).filter(|&i| !records[i].is_treatment()).collect();
    let mut rng = rng_from_seed(seed);
    let mut betas = Vec::with_capacity(cfg.bootstrap);
    let mut sample = Vec::with_capacity(records.len());
    for _ in 0..cfg.bootstrap {
        sample.clear();
        for arm in [&treat, &control] {
            for _ in 0..arm.len() {
                sample.push(records[arm[rng.random_range(0..arm.len())]].clone());
            }
        }
        if let Ok((_, f)) = point(&sample, cfg, ties) {
            betas.push(f.beta[0]);
        }
    }
    let failed = cfg.bootstrap - betas.len();
    if betas.len() < 2 {
        return Err(TsmError::NotIdentifiable("bootstrap produced fewer than two estimates".into()));
    }
    let mean = betas.iter().sum::<f64>() / betas.len() as f64;
    let var = betas.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (betas.len() - 1) as f64;
    fit.se[0] = var.sqrt();
    if failed > 0 {
        fit.notes.push(format!("bootstrap failures: {failed}"));
    }
    Ok(fit)
}
