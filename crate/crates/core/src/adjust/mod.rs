//! Crossover-adjustment estimators. Each maps patient records to a log hazard ratio
//! of treatment versus control.

mod bimm;
mod ipcw;
mod rpsft;
mod simple;
mod tsaft;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsmError};
use crate::fit::{FitResult, GammaPrior, Ties};
use crate::hazard::Clock;
use crate::simulate::PatientRecord;

pub use bimm::{bimm, bimm_transform, BimmDiagnostics};
pub use ipcw::{ipcw, ipcw_dataset, IpcwModel};
pub use rpsft::{counterfactual_times, rpsft, rpsft_z};
pub use simple::{cas, eas, itt, ttdv, ttdv_dataset};
pub use tsaft::{tsaft, tsaft_stage1, FullCrossover};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodId {
    Itt,
    Cas,
    Eas,
    Ttdv,
    Rpsft,
    Tsaft,
    Ipcw,
    Bimm,
}

impl MethodId {
    pub const ALL: [MethodId; 8] = [
        MethodId::Itt,
        MethodId::Cas,
        MethodId::Eas,
        MethodId::Ttdv,
        MethodId::Rpsft,
        MethodId::Tsaft,
        MethodId::Ipcw,
        MethodId::Bimm,
    ];

    pub fn all() -> Vec<MethodId> {
        Self::ALL.to_vec()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Itt => "itt",
            MethodId::Cas => "cas",
            MethodId::Eas => "eas",
            MethodId::Ttdv => "ttdv",
            MethodId::Rpsft => "rpsft",
            MethodId::Tsaft => "tsaft",
            MethodId::Ipcw => "ipcw",
            MethodId::Bimm => "bimm",
        }
    }

    /// Parses a comma-separated list; `all` expands to every method.
    pub fn parse_list(s: &str) -> Result<Vec<MethodId>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part.eq_ignore_ascii_case("all") {
                return Ok(Self::all());
            }
            let m: MethodId = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(TsmError::UnknownMethod(s.to_string()));
        }
        Ok(out)
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = TsmError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| TsmError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RpsftConfig {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    pub recensor: bool,
    /// Calendar time of the analysis; potential censoring is `readout_time - entry`.
    /// Defaults to the latest observed calendar time in the data.
    pub readout_time: Option<f64>,
}

impl Default for RpsftConfig {
    fn default() -> Self {
        Self { lo: -3.0, hi: 3.0, tol: 1e-6, recensor: true, readout_time: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsaftConfig {
    pub bootstrap: usize,
    pub full_crossover: FullCrossover,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TsaftConfig {
    fn default() -> Self {
        Self { bootstrap: 200, full_crossover: FullCrossover::EqualEffects, tol: 1e-6, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpcwConfig {
    pub cap: f64,
    pub model: IpcwModel,
}

impl Default for IpcwConfig {
    fn default() -> Self {
        Self { cap: 10.0, model: IpcwModel::ProgressionStatus }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BimmConfig {
    pub prior: GammaPrior,
    pub draws: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub clock: Clock,
}

impl Default for BimmConfig {
    fn default() -> Self {
        Self { prior: GammaPrior::default(), draws: 2000, tol: 1e-6, max_iter: 200, clock: Clock::SemiMarkov }
    }
}

/// Settings shared by all estimators. `cuts` is the piecewise grid used by BIMM
/// hazards and the IPCW switching periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdjusterConfig {
    pub cuts: Option<Vec<f64>>,
    pub ties: Ties,
    pub rpsft: RpsftConfig,
    pub tsaft: TsaftConfig,
    pub ipcw: IpcwConfig,
    pub bimm: BimmConfig,
}

impl Default for AdjusterConfig {
    fn default() -> Self {
        Self {
            cuts: None,
            ties: Ties::Efron,
            rpsft: RpsftConfig::default(),
            tsaft: TsaftConfig::default(),
            ipcw: IpcwConfig::default(),
            bimm: BimmConfig::default(),
        }
    }
}

impl AdjusterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TsmError::InvalidData(format!("adjuster config: {m}")));
        if let Some(c) = &self.cuts {
            if c.first() != Some(&0.0) || c.windows(2).any(|w| !(w[0] < w[1])) {
                return bad("cuts must start at 0 and increase strictly");
            }
        }
        if !(self.rpsft.lo < self.rpsft.hi) || !(self.rpsft.tol > 0.0) {
            return bad("rpsft interval must be non-empty and tol positive");
        }
        if !(self.tsaft.tol > 0.0) || self.tsaft.max_iter == 0 {
            return bad("tsaft tolerance and iteration limit must be positive");
        }
        if !(self.ipcw.cap >= 1.0) {
            return bad("ipcw cap must be at least 1");
        }
        if self.bimm.draws == 0 || !(self.bimm.tol > 0.0) || self.bimm.max_iter == 0 {
            return bad("bimm draws, tolerance and iteration limit must be positive");
        }
        if !(self.bimm.prior.shape > 0.0 && self.bimm.prior.rate > 0.0) {
            return bad("bimm prior parameters must be positive");
        }
        Ok(())
    }

    /// The configured grid, or five equal pieces over 80% of the longest follow-up.
    pub fn cuts_for(&self, records: &[PatientRecord]) -> Vec<f64> {
        if let Some(c) = &self.cuts {
            return c.clone();
        }
        let horizon = records.iter().map(|r| r.time).fold(0.0, f64::max) * 0.8;
        if horizon <= 0.0 {
            return vec![0.0];
        }
        (0..5).map(|k| k as f64 * horizon / 5.0).collect()
    }
}

/// Runs one estimator. `seed` drives the randomized methods (TSAFT bootstrap and
/// BIMM posterior draws) and is ignored by the others.
pub fn estimate(method: MethodId, records: &[PatientRecord], cfg: &AdjusterConfig, seed: u64) -> Result<FitResult> {
    match method {
        MethodId::Itt => itt(records, cfg.ties),
        MethodId::Cas => cas(records, cfg.ties),
        MethodId::Eas => eas(records, cfg.ties),
        MethodId::Ttdv => ttdv(records, cfg.ties),
        MethodId::Rpsft => rpsft(records, &cfg.rpsft, cfg.ties),
        MethodId::Tsaft => tsaft(records, &cfg.tsaft, cfg.ties, seed),
        MethodId::Ipcw => ipcw(records, &cfg.cuts_for(records), &cfg.ipcw, cfg.ties),
        MethodId::Bimm => bimm(records, &cfg.cuts_for(records), &cfg.bimm, cfg.ties, seed).map(|(f, _)| f),
    }
}

fn has_arm_data(records: &[PatientRecord]) -> Result<()> {
    let nt = records.iter().filter(|r| r.is_treatment()).count();
    if nt == 0 || nt == records.len() {
        return Err(TsmError::InvalidData("both arms must be present".into()));
    }
    Ok(())
}
