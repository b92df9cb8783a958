//! Monte Carlo replication of simulated trials with per-method operating
//! characteristics, plus the built-in Experiment 1 scenarios.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::adjust::{estimate, AdjusterConfig, MethodId};
use crate::error::{Result, TsmError};
use crate::fit::{logrank, Z_95};
use crate::hazard::PiecewiseHazard;
use crate::rng::{derive_seed, rng_from_seed};
use crate::simulate::{
    arm_dataset, censoring_proportion, simulate_trial, true_working_hr, CrossoverScenario, PostCrossover,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "exp1-moderate")]
    Exp1Moderate,
    #[serde(rename = "exp1-low")]
    Exp1Low,
    #[serde(rename = "exp1-high")]
    Exp1High,
}

const CUTS: [f64; 3] = [0.0, 1.0, 2.0];
const LAMBDA1: [f64; 3] = [0.2, 0.2, 0.25];

fn pw(rates: [f64; 3]) -> PiecewiseHazard {
    PiecewiseHazard::new(CUTS.to_vec(), rates.to_vec()).expect("preset hazards are valid")
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Exp1Moderate, Preset::Exp1Low, Preset::Exp1High];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Exp1Moderate => "exp1-moderate",
            Preset::Exp1Low => "exp1-low",
            Preset::Exp1High => "exp1-high",
        }
    }

    pub fn hr_true(self) -> f64 {
        match self {
            Preset::Exp1Moderate => 0.5,
            Preset::Exp1Low => 0.489,
            Preset::Exp1High => 0.514,
        }
    }

    /// Experiment 1: yearly hazards on pieces 0-1, 1-2, 2+, semi-Markov crossover at
    /// progression, 200 patients per arm.
    pub fn scenario(self, pi2: f64) -> CrossoverScenario {
        let (dropout, accrual, readout) = match self {
            Preset::Exp1Moderate => (0.02, 1.0, 6.0),
            Preset::Exp1Low => (0.02, 1.0, 8.0),
            Preset::Exp1High => (0.025, 2.0, 5.0),
        };
        let scale = |f: f64| LAMBDA1.map(|r| r * f);
        CrossoverScenario {
            name: self.name().to_string(),
            n_treatment: 200,
            n_control: 200,
            accrual_duration: accrual,
            readout_time: readout,
            dropout_hazard: pw([dropout; 3]),
            lambda1: pw(LAMBDA1),
            lambda3: pw([0.4; 3]),
            post_crossover: PostCrossover::SemiMarkov { stay: pw(scale(1.5)), switch: pw(scale(0.8)) },
            treatment_hazard: pw([0.12, 0.12, 0.15]),
            pi2,
            seed: 0,
            alpha: 0.05,
            analysis_cuts: Some(vec![0.0, 1.0, 2.0, 3.0, 4.0]),
            hr_true: Some(self.hr_true()),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = TsmError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| TsmError::UnknownPreset(s.to_string()))
    }
}

/// Default crossover fraction when a preset is used without one.
pub const DEFAULT_PI2: f64 = 0.5;

/// Field-by-field overrides of a scenario, optionally on top of a preset.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    preset: Option<Preset>,
    name: Option<String>,
    n_treatment: Option<usize>,
    n_control: Option<usize>,
    accrual_duration: Option<f64>,
    readout_time: Option<f64>,
    dropout_hazard: Option<PiecewiseHazard>,
    lambda1: Option<PiecewiseHazard>,
    lambda3: Option<PiecewiseHazard>,
    post_crossover: Option<PostCrossover>,
    treatment_hazard: Option<PiecewiseHazard>,
    pi2: Option<f64>,
    seed: Option<u64>,
    alpha: Option<f64>,
    analysis_cuts: Option<Vec<f64>>,
    hr_true: Option<f64>,
}

/// Parses scenario JSON. With a `preset` key the remaining fields override the preset;
/// without one the document must describe a complete scenario. Errors carry the line
/// and column reported by the JSON parser.
pub fn parse_scenario(text: &str) -> Result<CrossoverScenario> {
    let file: ScenarioFile = serde_json::from_str(text)?;
    let Some(preset) = file.preset else {
        return Ok(serde_json::from_str::<CrossoverScenario>(text)?);
    };
    let mut sc = preset.scenario(file.pi2.unwrap_or(DEFAULT_PI2));
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = file.$f { sc.$f = v; })* };
    }
    set!(
        name,
        n_treatment,
        n_control,
        accrual_duration,
        readout_time,
        dropout_hazard,
        lambda1,
        lambda3,
        post_crossover,
        treatment_hazard,
        seed,
        alpha
    );
    if file.analysis_cuts.is_some() {
        sc.analysis_cuts = file.analysis_cuts;
    }
    if file.hr_true.is_some() {
        sc.hr_true = file.hr_true;
    }
    Ok(sc)
}

/// A preset name or a path to a scenario file.
pub fn load_scenario(spec: &str) -> Result<CrossoverScenario> {
    if let Ok(p) = spec.parse::<Preset>() {
        return Ok(p.scenario(DEFAULT_PI2));
    }
    let text = std::fs::read_to_string(spec)?;
    parse_scenario(&text)
}

/// Scenario where both arms and every path share `lambda1`, so the true hazard ratio is 1.
pub fn null_scenario(pi2: f64) -> CrossoverScenario {
    let mut sc = Preset::Exp1Moderate.scenario(pi2);
    sc.name = "null".into();
    sc.post_crossover = PostCrossover::SemiMarkov { stay: pw(LAMBDA1), switch: pw(LAMBDA1) };
    sc.treatment_hazard = pw(LAMBDA1);
    sc.hr_true = Some(1.0);
    sc
}

#[derive(Debug, Clone)]
pub struct ReplicationOptions {
    pub methods: Vec<MethodId>,
    pub replications: usize,
    pub seed: u64,
    pub adjuster: AdjusterConfig,
    /// Worker count; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
}

impl ReplicationOptions {
    pub fn new(methods: Vec<MethodId>, replications: usize, seed: u64) -> Self {
        Self { methods, replications, seed, adjuster: AdjusterConfig::default(), threads: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub method: MethodId,
    pub beta: Option<f64>,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: MethodId,
    pub n_ok: usize,
    pub n_failed: usize,
    pub fail_rate: f64,
    pub mean_hr: Option<f64>,
    /// `mean(HR) - HR_true`
    pub bias: Option<f64>,
    /// Empirical standard deviation of the estimated HR; absent with fewer than two fits.
    pub se: Option<f64>,
    pub mse: Option<f64>,
    pub ecp: Option<f64>,
    pub power: Option<f64>,
    /// Averages of the per-replication HR-scale interval endpoints.
    pub mean_ci_lo: Option<f64>,
    pub mean_ci_hi: Option<f64>,
    /// More than 5% of replications failed.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub scenario: String,
    pub pi2: f64,
    pub replications: usize,
    pub seed: u64,
    pub hr_true: f64,
    pub alpha: f64,
    pub mean_censoring: f64,
    pub runtime_secs: f64,
    pub methods: Vec<MethodSummary>,
    pub rows: Vec<ReplicationRow>,
}

pub const REPORT_COLUMNS: [&str; 10] =
    ["scenario", "pi2", "method", "R", "bias", "se", "mse", "ecp", "power", "fail_rate"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl ReplicationReport {
    pub fn method(&self, m: MethodId) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    /// One row per method. Runtime is left out so the bytes depend only on inputs.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(REPORT_COLUMNS)?;
        for s in &self.methods {
            w.write_record([
                self.scenario.clone(),
                format!("{}", self.pi2),
                s.method.to_string(),
                self.replications.to_string(),
                opt(s.bias),
                opt(s.se),
                opt(s.mse),
                opt(s.ecp),
                opt(s.power),
                format!("{:.6}", s.fail_rate),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-replication estimates, for rebuilding interval plots.
    pub fn write_rows_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["replication", "method", "beta", "se", "ci_lo", "ci_hi", "error"])?;
        for r in &self.rows {
            w.write_record([
                r.replication.to_string(),
                r.method.to_string(),
                opt(r.beta),
                opt(r.se),
                opt(r.ci_lo),
                opt(r.ci_hi),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn z_crit(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| TsmError::InvalidData(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Seed of replication `r`; method `m` uses `derive_seed(replication_seed, m + 1)`.
pub fn replication_seed(base: u64, r: usize) -> u64 {
    derive_seed(base, r as u64)
}

fn method_summary(m: MethodId, rows: &[&ReplicationRow], hr_true: f64, z: f64) -> MethodSummary {
    let ok: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r.beta?, r.se?))).collect();
    let n_failed = rows.len() - ok.len();
    let n = ok.len() as f64;
    let fail_rate = if rows.is_empty() { 0.0 } else { n_failed as f64 / rows.len() as f64 };
    let mut s = MethodSummary {
        method: m,
        n_ok: ok.len(),
        n_failed,
        fail_rate,
        mean_hr: None,
        bias: None,
        se: None,
        mse: None,
        ecp: None,
        power: None,
        mean_ci_lo: None,
        mean_ci_hi: None,
        flagged: fail_rate > 0.05,
    };
    if ok.is_empty() {
        return s;
    }
    let hrs: Vec<f64> = ok.iter().map(|(b, _)| b.exp()).collect();
    let mean_hr = hrs.iter().sum::<f64>() / n;
    let bias = mean_hr - hr_true;
    s.mean_hr = Some(mean_hr);
    s.bias = Some(bias);
    if ok.len() > 1 {
        let sd = (hrs.iter().map(|h| (h - mean_hr).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        s.se = Some(sd);
        s.mse = Some(bias * bias + sd * sd);
    }
    let covered =
        ok.iter().filter(|(b, se)| (b - Z_95 * se).exp() <= hr_true && hr_true <= (b + Z_95 * se).exp()).count();
    s.ecp = Some(covered as f64 / n);
    s.power = Some(ok.iter().filter(|(b, se)| *se > 0.0 && (b / se).abs() > z).count() as f64 / n);
    s.mean_ci_lo = Some(ok.iter().map(|(b, se)| (b - Z_95 * se).exp()).sum::<f64>() / n);
    s.mean_ci_hi = Some(ok.iter().map(|(b, se)| (b + Z_95 * se).exp()).sum::<f64>() / n);
    s
}

/// Simulates `R` trials and applies every requested method to each. Results do not
/// depend on thread count or method order.
pub fn run_replications(sc: &CrossoverScenario, opts: &ReplicationOptions) -> Result<ReplicationReport> {
    if opts.replications == 0 {
        return Err(TsmError::InvalidData("R must be at least 1".into()));
    }
    sc.validate()?;
    opts.adjuster.validate()?;
    let hr_true = match sc.hr_true {
        Some(h) => h,
        None => true_working_hr(sc, false)?,
    };
    let mut adjuster = opts.adjuster.clone();
    if adjuster.cuts.is_none() {
        adjuster.cuts = Some(sc.estimation_cuts());
    }
    if adjuster.rpsft.readout_time.is_none() {
        adjuster.rpsft.readout_time = Some(sc.readout_time);
    }
    let mut methods = opts.methods.clone();
    methods.sort();
    methods.dedup();
    let started = Instant::now();
    let per_rep = in_pool(opts.threads, || {
        (0..opts.replications)
            .into_par_iter()
            .map(|r| -> Result<(f64, Vec<ReplicationRow>)> {
                let seed = replication_seed(sc.seed ^ opts.seed, r);
                let records = simulate_trial(sc, &mut rng_from_seed(seed))?;
                let rows = methods
                    .iter()
                    .map(|&m| {
                        let idx = MethodId::ALL.iter().position(|x| *x == m).expect("known") as u64;
                        match estimate(m, &records, &adjuster, derive_seed(seed, idx + 1)) {
                            Ok(f) if f.beta[0].is_finite() && f.se[0].is_finite() => {
                                let (lo, hi) = f.ci();
                                ReplicationRow {
                                    replication: r,
                                    method: m,
                                    beta: Some(f.beta[0]),
                                    se: Some(f.se[0]),
                                    ci_lo: Some(lo.exp()),
                                    ci_hi: Some(hi.exp()),
                                    error: None,
                                }
                            }
                            Ok(_) => failed_row(r, m, "non-finite estimate".into()),
                            Err(e) => failed_row(r, m, e.to_string()),
                        }
                    })
                    .collect();
                Ok((censoring_proportion(&records), rows))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let runtime_secs = started.elapsed().as_secs_f64();
    let mean_censoring = per_rep.iter().map(|(c, _)| c).sum::<f64>() / per_rep.len() as f64;
    let rows: Vec<ReplicationRow> = per_rep.into_iter().flat_map(|(_, rows)| rows).collect();
    let z = z_crit(sc.alpha);
    let summaries = methods
        .iter()
        .map(|&m| {
            let mine: Vec<&ReplicationRow> = rows.iter().filter(|r| r.method == m).collect();
            method_summary(m, &mine, hr_true, z)
        })
        .collect();
    Ok(ReplicationReport {
        scenario: sc.name.clone(),
        pi2: sc.pi2,
        replications: opts.replications,
        seed: opts.seed,
        hr_true,
        alpha: sc.alpha,
        mean_censoring,
        runtime_secs,
        methods: summaries,
        rows,
    })
}

fn failed_row(replication: usize, method: MethodId, error: String) -> ReplicationRow {
    ReplicationRow { replication, method, beta: None, se: None, ci_lo: None, ci_hi: None, error: Some(error) }
}

/// Log-rank power and mean censoring proportion of the unadjusted comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSummary {
    pub power: f64,
    pub mean_censoring: f64,
}

pub fn power_summary(
    sc: &CrossoverScenario,
    replications: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<PowerSummary> {
    if replications == 0 {
        return Err(TsmError::InvalidData("R must be at least 1".into()));
    }
    sc.validate()?;
    let per_rep = in_pool(threads, || {
        (0..replications)
            .into_par_iter()
            .map(|r| -> Result<(bool, f64)> {
                let records = simulate_trial(sc, &mut rng_from_seed(replication_seed(sc.seed ^ seed, r)))?;
                let data = arm_dataset(records.iter().map(|r| (r, r.time, r.event)))?;
                let group: Vec<bool> = records.iter().map(|r| r.is_treatment()).collect();
                let reject = logrank(&data, &group).map(|lr| lr.p_value() < sc.alpha).unwrap_or(false);
                Ok((reject, censoring_proportion(&records)))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let n = per_rep.len() as f64;
    Ok(PowerSummary {
        power: per_rep.iter().filter(|(rej, _)| *rej).count() as f64 / n,
        mean_censoring: per_rep.iter().map(|(_, c)| c).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub scenario: String,
    pub pi2: f64,
    pub working_hr: f64,
    pub hr_true: f64,
    pub power: f64,
    pub censoring: f64,
    pub replications: usize,
}

/// Working hazard ratio with crossover, the no-crossover ratio, log-rank power and
/// censoring proportion.
pub fn design_summary(
    sc: &CrossoverScenario,
    replications: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<DesignSummary> {
    let p = power_summary(sc, replications, seed, threads)?;
    let (working_hr, hr_true) =
        in_pool(threads, || rayon::join(|| true_working_hr(sc, true), || true_working_hr(sc, false)))?;
    Ok(DesignSummary {
        scenario: sc.name.clone(),
        pi2: sc.pi2,
        working_hr: working_hr?,
        hr_true: hr_true?,
        power: p.power,
        censoring: p.mean_censoring,
        replications,
    })
}
