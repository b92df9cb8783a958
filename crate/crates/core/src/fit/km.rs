use serde::{Deserialize, Serialize};

use super::dataset::SurvDataset;
use crate::error::{Result, TsmError};

/// Product-limit survival curve: `survival[k]` holds on `[times[k], times[k+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeier {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<f64>,
    pub events: Vec<f64>,
}

impl KaplanMeier {
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }
}

/// Distinct event times with (weighted) risk-set size and event count, restricted
/// to rows selected by `keep`.
fn event_table(data: &SurvDataset, keep: impl Fn(usize) -> bool) -> Vec<(f64, f64, f64)> {
    let n = data.len();
    let mut idx: Vec<usize> = (0..n).filter(|&i| keep(i)).collect();
    idx.sort_unstable_by(|&a, &b| data.stop()[a].total_cmp(&data.stop()[b]));
    let mut event_times: Vec<f64> = idx.iter().filter(|&&i| data.event()[i]).map(|&i| data.stop()[i]).collect();
    event_times.dedup();
    event_times
        .into_iter()
        .map(|t| {
            let mut risk = 0.0;
            let mut d = 0.0;
            for &i in &idx {
                let (s, e) = (data.start()[i], data.stop()[i]);
                if s < t && e >= t {
                    risk += data.weight()[i];
                    if e == t && data.event()[i] {
                        d += data.weight()[i];
                    }
                }
            }
            (t, risk, d)
        })
        .collect()
}

pub fn km_estimate(data: &SurvDataset) -> Result<KaplanMeier> {
    if data.n_events() == 0 {
        return Err(TsmError::NoEvents);
    }
    let table = event_table(data, |_| true);
    let mut s = 1.0;
    let mut out = KaplanMeier { times: vec![], survival: vec![], at_risk: vec![], events: vec![] };
    for (t, risk, d) in table {
        s *= 1.0 - d / risk;
        out.times.push(t);
        out.survival.push(s);
        out.at_risk.push(risk);
        out.events.push(d);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRank {
    /// Observed minus expected events in the `true` group.
    pub o_minus_e: f64,
    pub variance: f64,
    pub z: f64,
    pub chi2: f64,
}

impl LogRank {
    /// Two-sided p-value from the chi-square(1) reference.
    pub fn p_value(&self) -> f64 {
        statrs::function::erf::erfc((self.chi2 / 2.0).sqrt())
    }
}

/// Two-group log-rank test with the hypergeometric variance. Case weights are ignored.
pub fn logrank(data: &SurvDataset, group: &[bool]) -> Result<LogRank> {
    if group.len() != data.len() {
        return Err(TsmError::InvalidData("group length differs from data".into()));
    }
    if data.n_events() == 0 {
        return Err(TsmError::NoEvents);
    }
    let n = data.len();
    let mut by_stop: Vec<usize> = (0..n).collect();
    by_stop.sort_unstable_by(|&a, &b| data.stop()[b].total_cmp(&data.stop()[a]));
    let mut by_start: Vec<usize> = (0..n).collect();
    by_start.sort_unstable_by(|&a, &b| data.start()[b].total_cmp(&data.start()[a]));
    let (mut n_all, mut n_grp) = (0.0, 0.0);
    let (mut o_minus_e, mut variance) = (0.0f64, 0.0f64);
    let (mut i, mut k) = (0, 0);
    // sweep from the last time backwards so risk sets only grow (minus late entries)
    while i < n {
        let t = data.stop()[by_stop[i]];
        let (mut d_all, mut d_grp) = (0.0, 0.0);
        while i < n && data.stop()[by_stop[i]] == t {
            let r = by_stop[i];
            n_all += 1.0;
            if group[r] {
                n_grp += 1.0;
            }
            if data.event()[r] {
                d_all += 1.0;
                if group[r] {
                    d_grp += 1.0;
                }
            }
            i += 1;
        }
        while k < n && data.start()[by_start[k]] >= t {
            n_all -= 1.0;
            if group[by_start[k]] {
                n_grp -= 1.0;
            }
            k += 1;
        }
        if d_all > 0.0 {
            let frac = n_grp / n_all;
            o_minus_e += d_grp - d_all * frac;
            if n_all > 1.0 {
                variance += d_all * frac * (1.0 - frac) * (n_all - d_all) / (n_all - 1.0);
            }
        }
    }
    let z = if variance > 0.0 { o_minus_e / variance.sqrt() } else { 0.0 };
    Ok(LogRank { o_minus_e, variance, z, chi2: z * z })
}
