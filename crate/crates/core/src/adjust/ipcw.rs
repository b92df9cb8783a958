//! Inverse probability of censoring weighting with switchers censored at the switch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::simple::cox;
use super::{has_arm_data, IpcwConfig};
use crate::error::{Result, TsmError};
use crate::fit::{inv_logit, pooled_logistic_fit, FitResult, PersonPeriodTable, SurvDataset, Ties};
use crate::simulate::PatientRecord;

/// Covariates of the pooled logistic model for switching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpcwModel {
    /// Intercept and period start time.
    TimeTrend,
    /// Adds an indicator of progression by the end of the period.
    #[default]
    ProgressionStatus,
}

struct Period {
    patient: usize,
    k: usize,
    start: f64,
    stop: f64,
    switched: bool,
    progressed: bool,
}

fn periods(records: &[PatientRecord], cuts: &[f64]) -> Vec<Period> {
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate().filter(|(_, r)| !r.is_treatment()) {
        let end = match r.cross_time {
            Some(u) if r.switched => u,
            _ => r.time,
        };
        for (k, &start) in cuts.iter().enumerate().take_while(|(_, &c)| c < end) {
            let next = cuts.get(k + 1).copied().unwrap_or(f64::INFINITY);
            let stop = next.min(end);
            out.push(Period {
                patient: i,
                k,
                start,
                stop,
                switched: r.switched && stop == end,
                progressed: r.cross_time.is_some_and(|u| u < next),
            });
        }
    }
    out
}

fn design(p: &Period, model: IpcwModel) -> Vec<f64> {
    match model {
        IpcwModel::TimeTrend => vec![1.0, p.start],
        IpcwModel::ProgressionStatus => vec![1.0, p.start, if p.progressed { 1.0 } else { 0.0 }],
    }
}

/// Switching probability per period row: logistic fit, or empirical cell proportions
/// when the logistic estimate does not exist.
fn switch_probabilities(rows: &[Period], model: IpcwModel) -> Result<(Vec<f64>, bool)> {
    let p = design(&rows[0], model).len();
    let mut table = PersonPeriodTable::new(p);
    for r in rows {
        table.push(r.switched, &design(r, model), 1.0);
    }
    match pooled_logistic_fit(&table) {
        Ok(fit) => Ok((
            rows.iter().map(|r| inv_logit(design(r, model).iter().zip(&fit.beta).map(|(a, b)| a * b).sum())).collect(),
            false,
        )),
        Err(TsmError::Separation) | Err(TsmError::Collinear) => {
            let key = |r: &Period| (r.k, model == IpcwModel::ProgressionStatus && r.progressed);
            let mut cells: BTreeMap<(usize, bool), (f64, f64)> = BTreeMap::new();
            for r in rows {
                let c = cells.entry(key(r)).or_default();
                c.0 += f64::from(u8::from(r.switched));
                c.1 += 1.0;
            }
            Ok((
                rows.iter()
                    .map(|r| {
                        let c = cells[&key(r)];
                        c.0 / c.1
                    })
                    .collect(),
                true,
            ))
        }
        Err(e) => Err(e),
    }
}

/// Weighted counting-process data: treatment rows with weight 1, control follow-up
/// censored at the switch and weighted by the capped inverse probability of
/// remaining unswitched at the start of each period. Adjacent periods with equal
/// weight are merged.
pub fn ipcw_dataset(records: &[PatientRecord], cuts: &[f64], cfg: &IpcwConfig) -> Result<(SurvDataset, bool)> {
    let rows = periods(records, cuts);
    let (prob, fallback) = if rows.iter().any(|r| r.switched) {
        switch_probabilities(&rows, cfg.model)?
    } else {
        (vec![0.0; rows.len()], false)
    };
    let mut weights: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new(); records.len()];
    let mut surv = 1.0f64;
    for (idx, r) in rows.iter().enumerate() {
        if r.k == 0 {
            surv = 1.0;
        }
        // weight for a period depends only on switching in earlier periods
        let w = if surv > 0.0 { (1.0 / surv).min(cfg.cap) } else { cfg.cap };
        surv *= 1.0 - prob[idx];
        let pieces = &mut weights[r.patient];
        match pieces.last_mut() {
            Some(last) if last.2 == w => last.1 = r.stop,
            _ => pieces.push((r.start, r.stop, w)),
        }
    }
    let mut data = SurvDataset::with_capacity(1, records.len() + rows.len());
    for (i, r) in records.iter().enumerate() {
        if r.is_treatment() {
            data.push(0.0, r.time, r.event, &[1.0], 1.0)?;
            continue;
        }
        let event = r.event && !r.switched;
        let pieces = &weights[i];
        for (j, &(start, stop, w)) in pieces.iter().enumerate() {
            data.push(start, stop, event && j + 1 == pieces.len(), &[0.0], w)?;
        }
    }
    Ok((data, fallback))
}

pub fn ipcw(records: &[PatientRecord], cuts: &[f64], cfg: &IpcwConfig, ties: Ties) -> Result<FitResult> {
    has_arm_data(records)?;
    if cuts.first() != Some(&0.0) {
        return Err(TsmError::InvalidData("ipcw period grid must start at 0".into()));
    }
    let (data, fallback) = ipcw_dataset(records, cuts, cfg)?;
    let mut fit = cox(&data, ties)?;
    if fallback {
        fit.notes.push("ipcw: logistic separation, empirical switching proportions used".into());
    }
    Ok(fit)
}
