//! Rank-preserving structural failure time model fitted by g-estimation.

use super::has_arm_data;
use super::simple::cox;
use super::RpsftConfig;
use crate::error::{Result, TsmError};
use crate::fit::{logrank, FitResult, SurvDataset, Ties};
use crate::simulate::{arm_dataset, PatientRecord};

fn readout(records: &[PatientRecord], cfg: &RpsftConfig) -> f64 {
    cfg.readout_time.unwrap_or_else(|| records.iter().map(|r| r.entry + r.time).fold(0.0, f64::max))
}

/// Counterfactual untreated `(time, event)` for every record at acceleration `phi`:
/// time on treatment is shrunk by `e^{-phi}`. With recensoring each record is
/// censored at `C min(1, e^{-phi})` where `C = readout - entry`.
pub fn counterfactual_times(records: &[PatientRecord], phi: f64, cfg: &RpsftConfig) -> Vec<(f64, bool)> {
    let shrink = (-phi).exp();
    let end = readout(records, cfg);
    records
        .iter()
        .map(|r| {
            let t = if r.is_treatment() {
                shrink * r.time
            } else {
                match r.cross_time {
                    Some(u) if r.switched => u + shrink * (r.time - u),
                    _ => r.time,
                }
            };
            if cfg.recensor {
                let c = (end - r.entry).max(0.0) * shrink.min(1.0);
                if t > c && c > 0.0 {
                    return (c, false);
                }
            }
            (t, r.event)
        })
        .collect()
}

fn arm_groups(records: &[PatientRecord]) -> Vec<bool> {
    records.iter().map(|r| r.is_treatment()).collect()
}

/// Log-rank Z (treatment versus control) on the counterfactual untreated times.
pub fn rpsft_z(records: &[PatientRecord], phi: f64, cfg: &RpsftConfig) -> Result<f64> {
    let cf = counterfactual_times(records, phi, cfg);
    let data = arm_dataset(records.iter().zip(&cf).map(|(r, &(t, e))| (r, t, e)))?;
    Ok(logrank(&data, &arm_groups(records))?.z)
}

fn g_estimate(records: &[PatientRecord], cfg: &RpsftConfig) -> Result<f64> {
    let (mut lo, mut hi) = (cfg.lo, cfg.hi);
    let mut z_lo = rpsft_z(records, lo, cfg)?;
    let z_hi = rpsft_z(records, hi, cfg)?;
    if z_lo == 0.0 {
        return Ok(lo);
    }
    if z_hi == 0.0 {
        return Ok(hi);
    }
    if z_lo.signum() == z_hi.signum() {
        return Err(TsmError::NotBracketed { lo, hi });
    }
    while hi - lo > cfg.tol {
        let mid = 0.5 * (lo + hi);
        let z = rpsft_z(records, mid, cfg)?;
        if z == 0.0 {
            return Ok(mid);
        }
        if z.signum() == z_lo.signum() {
            lo = mid;
            z_lo = z;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Estimates `phi` by g-estimation, then fits Cox to the observed treatment arm
/// against the counterfactual control arm. The standard error is `|beta| / sqrt(chi2)`
/// with `chi2` the log-rank statistic of the unadjusted comparison.
pub fn rpsft(records: &[PatientRecord], cfg: &RpsftConfig, ties: Ties) -> Result<FitResult> {
    has_arm_data(records)?;
    let phi = g_estimate(records, cfg)?;
    let cf = counterfactual_times(records, phi, cfg);
    let mut data = SurvDataset::with_capacity(1, records.len());
    for (r, &(t, e)) in records.iter().zip(&cf) {
        if r.is_treatment() {
            data.push(0.0, r.time, r.event, &[1.0], 1.0)?;
        } else {
            data.push(0.0, t, e, &[0.0], 1.0)?;
        }
    }
    let mut fit = cox(&data, ties)?;
    let observed = arm_dataset(records.iter().map(|r| (r, r.time, r.event)))?;
    let chi2 = logrank(&observed, &arm_groups(records))?.chi2;
    if !(chi2 > 0.0) {
        return Err(TsmError::InvalidData("unadjusted log-rank statistic is zero".into()));
    }
    fit.se[0] = fit.beta[0].abs() / chi2.sqrt();
    fit.notes.push(format!("phi = {phi:.6}"));
    Ok(fit)
}
