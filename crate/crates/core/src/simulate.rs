//! Exact generation of crossover trials under the three-state model.

use std::io::{Read, Write};

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TsmError};
use crate::fit::{cox_fit, SurvDataset};
use crate::hazard::{CrossoverKind, GeneralHazard, PiecewiseHazard};
use crate::rng::rng_from_seed;

/// Post-crossover hazards for patients who stay on control and who switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PostCrossover {
    Markov { stay: PiecewiseHazard, switch: PiecewiseHazard },
    SemiMarkov { stay: PiecewiseHazard, switch: PiecewiseHazard },
    General { stay: GeneralHazard, switch: GeneralHazard },
}

impl PostCrossover {
    pub fn kind(&self, switched: bool) -> CrossoverKind {
        match self {
            PostCrossover::Markov { stay, switch } => {
                CrossoverKind::Markov { hazard: if switched { switch } else { stay }.clone() }
            }
            PostCrossover::SemiMarkov { stay, switch } => {
                CrossoverKind::SemiMarkov { hazard: if switched { switch } else { stay }.clone() }
            }
            PostCrossover::General { stay, switch } => {
                CrossoverKind::General { surface: if switched { switch } else { stay }.clone() }
            }
        }
    }
}

fn default_alpha() -> f64 {
    0.05
}

fn default_name() -> String {
    "custom".to_string()
}

/// Full generative description of a two-arm trial with crossover in the control arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossoverScenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub n_treatment: usize,
    pub n_control: usize,
    /// Uniform accrual over `[0, accrual_duration]`.
    pub accrual_duration: f64,
    /// Calendar time of the analysis, measured from the first randomization.
    pub readout_time: f64,
    /// Dropout hazard on the patient clock.
    pub dropout_hazard: PiecewiseHazard,
    pub lambda1: PiecewiseHazard,
    pub lambda3: PiecewiseHazard,
    pub post_crossover: PostCrossover,
    pub treatment_hazard: PiecewiseHazard,
    pub pi2: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Grid used by estimators that need one (posterior hazards, switching periods).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis_cuts: Option<Vec<f64>>,
    /// Known true hazard ratio without crossover, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_true: Option<f64>,
}

impl CrossoverScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TsmError::InvalidScenario(m));
        if !(0.0..=1.0).contains(&self.pi2) {
            return bad("pi2 must lie in [0,1]".into());
        }
        if self.n_treatment == 0 || self.n_control == 0 {
            return bad("both arms need at least one patient".into());
        }
        if !(self.accrual_duration >= 0.0) || !(self.accrual_duration < self.readout_time) {
            return bad("accrual_duration must be non-negative and below readout_time".into());
        }
        if !self.readout_time.is_finite() {
            return bad("readout_time must be finite".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0,1)".into());
        }
        let grid = self.lambda1.cuts();
        let mut grids: Vec<(&str, &[f64])> = vec![
            ("lambda3", self.lambda3.cuts()),
            ("treatment_hazard", self.treatment_hazard.cuts()),
            ("dropout_hazard", self.dropout_hazard.cuts()),
        ];
        let stay = self.post_crossover.kind(false);
        let switch = self.post_crossover.kind(true);
        grids.push(("post_crossover.stay", stay.cuts()));
        grids.push(("post_crossover.switch", switch.cuts()));
        for (name, cuts) in grids {
            if cuts != grid {
                return bad(format!("{name} does not share the cut grid of lambda1"));
            }
        }
        if let Some(cuts) = &self.analysis_cuts {
            PiecewiseHazard::new(cuts.clone(), vec![0.0; cuts.len()])
                .map_err(|e| TsmError::InvalidScenario(format!("analysis_cuts: {e}")))?;
        }
        Ok(())
    }

    /// Non-fatal issues such as improper hazards with no censoring horizon.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, h) in [("lambda1", &self.lambda1), ("treatment_hazard", &self.treatment_hazard)] {
            if !h.is_proper() && !self.readout_time.is_finite() {
                out.push(format!("{name} has a zero last rate and no administrative horizon"));
            }
        }
        out
    }

    pub fn n_total(&self) -> usize {
        self.n_treatment + self.n_control
    }

    /// Grid for estimators: explicit analysis cuts, else the hazard grid.
    pub fn estimation_cuts(&self) -> Vec<f64> {
        self.analysis_cuts.clone().unwrap_or_else(|| self.lambda1.cuts().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Treatment,
    Control,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Treatment => "treatment",
            Arm::Control => "control",
        }
    }
}

/// One simulated or observed subject. Durations are measured from entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: usize,
    pub arm: Arm,
    pub entry: f64,
    /// Observed follow-up: the first of death, dropout and administrative censoring.
    pub time: f64,
    pub event: bool,
    pub crossed: bool,
    pub cross_time: Option<f64>,
    pub switched: bool,
}

impl PatientRecord {
    pub fn is_treatment(&self) -> bool {
        self.arm == Arm::Treatment
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TsmError::InvalidData(format!("record {}: {m}", self.id)));
        if !(self.time > 0.0) || !self.time.is_finite() {
            return bad("time must be positive and finite");
        }
        match (self.crossed, self.cross_time) {
            (true, Some(u)) if u >= 0.0 && u < self.time => {}
            (true, _) => return bad("crossed records need 0 <= cross_time < time"),
            (false, Some(_)) => return bad("cross_time given without crossover"),
            (false, None) => {}
        }
        if self.switched && !self.crossed {
            return bad("switched implies crossed");
        }
        if self.arm == Arm::Treatment && self.crossed {
            return bad("crossover is only modelled in the control arm");
        }
        Ok(())
    }
}

fn uniform_open(rng: &mut impl Rng) -> f64 {
    rng.sample(Open01)
}

/// Draws a duration from `h`; mass beyond the last finite level maps to infinity.
fn draw_duration(h: &PiecewiseHazard, rng: &mut impl Rng) -> Result<f64> {
    match h.inverse_survival(uniform_open(rng)) {
        Err(TsmError::MassBeyondHorizon) => Ok(f64::INFINITY),
        other => other,
    }
}

/// Joint draw of event time `T` and crossover time `U` (`None` when no crossover
/// precedes the event).
pub fn draw_joint(
    lambda1: &PiecewiseHazard,
    lambda3: &PiecewiseHazard,
    crossover: &CrossoverKind,
    rng: &mut impl Rng,
) -> Result<(f64, Option<f64>)> {
    let x = uniform_open(rng);
    let u = draw_duration(lambda3, rng)?;
    let cum1_u = if u.is_finite() { lambda1.cumulative(u) } else { f64::INFINITY };
    let s1_u = (-cum1_u).exp();
    if x > s1_u {
        return Ok((lambda1.inverse_survival(x)?, None));
    }
    // post-crossover cumulative hazard needed to reach survival level x
    let level = (-x.ln() - cum1_u).max(0.0);
    let t = crossover.time_after(u, level)?;
    Ok((t, Some(u)))
}

/// Simulates every patient of a trial. Treatment patients come first.
pub fn simulate_trial(sc: &CrossoverScenario, rng: &mut impl Rng) -> Result<Vec<PatientRecord>> {
    sc.validate()?;
    let stay = sc.post_crossover.kind(false);
    let switch = sc.post_crossover.kind(true);
    let mut out = Vec::with_capacity(sc.n_total());
    for id in 0..sc.n_total() {
        let arm = if id < sc.n_treatment { Arm::Treatment } else { Arm::Control };
        let entry = sc.accrual_duration * rng.random::<f64>();
        let (t, u, switch_flag) = match arm {
            Arm::Treatment => (draw_duration(&sc.treatment_hazard, rng)?, None, false),
            Arm::Control => {
                let switch_flag = rng.random_bool(sc.pi2);
                let kind = if switch_flag { &switch } else { &stay };
                let (t, u) = draw_joint(&sc.lambda1, &sc.lambda3, kind, rng)?;
                (t, u, switch_flag)
            }
        };
        let dropout = draw_duration(&sc.dropout_hazard, rng)?;
        let admin = sc.readout_time - entry;
        let censor = dropout.min(admin);
        let time = t.min(censor);
        let event = t <= censor;
        let cross_time = u.filter(|&u| u < time);
        let crossed = cross_time.is_some();
        out.push(PatientRecord { id, arm, entry, time, event, crossed, cross_time, switched: crossed && switch_flag });
    }
    Ok(out)
}

pub fn censoring_proportion(records: &[PatientRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| !r.event).count() as f64 / records.len() as f64
}

/// Right-censored dataset with a single treatment indicator covariate.
pub fn arm_dataset<'a>(rows: impl IntoIterator<Item = (&'a PatientRecord, f64, bool)>) -> Result<SurvDataset> {
    let mut data = SurvDataset::new(1);
    for (r, time, event) in rows {
        data.push(0.0, time, event, &[if r.is_treatment() { 1.0 } else { 0.0 }], 1.0)?;
    }
    Ok(data)
}

pub const WORKING_HR_ARM_SIZE: usize = 200_000;

/// Working hazard ratio of the design, obtained from one very large simulated trial
/// fitted with an unadjusted Cox model. Monte Carlo error is about 0.005.
///
/// With `allow_crossover = false` every control patient stays on control after the
/// crossover event.
pub fn true_working_hr(sc: &CrossoverScenario, allow_crossover: bool) -> Result<f64> {
    let mut big = sc.clone();
    big.n_treatment = WORKING_HR_ARM_SIZE;
    big.n_control = WORKING_HR_ARM_SIZE;
    if !allow_crossover {
        big.pi2 = 0.0;
    }
    let mut rng = rng_from_seed(crate::rng::derive_seed(sc.seed, 0x0057_4852));
    let records = simulate_trial(&big, &mut rng)?;
    let data = arm_dataset(records.iter().map(|r| (r, r.time, r.event)))?;
    let fit = cox_fit(&data)?;
    Ok(fit.beta[0].exp())
}

pub const CSV_COLUMNS: [&str; 8] = ["id", "arm", "entry", "time", "event", "crossed", "cross_time", "switched"];

pub fn write_records_csv<W: Write>(writer: W, records: &[PatientRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record([
            r.id.to_string(),
            r.arm.as_str().to_string(),
            r.entry.to_string(),
            r.time.to_string(),
            u8::from(r.event).to_string(),
            u8::from(r.crossed).to_string(),
            r.cross_time.map(|u| u.to_string()).unwrap_or_default(),
            u8::from(r.switched).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_flag(s: &str, column: &str, line: u64) -> Result<bool> {
    match s.trim() {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" => Ok(false),
        other => Err(TsmError::InvalidData(format!("line {line}, column {column}: expected 0/1, got '{other}'"))),
    }
}

fn parse_num(s: &str, column: &str, line: u64) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| TsmError::InvalidData(format!("line {line}, column {column}: expected a number, got '{s}'")))
}

/// Reads the patient CSV written by [`write_records_csv`]. `crossed` and `switched`
/// are optional; a missing `crossed` column is inferred from `cross_time`.
pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<PatientRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let require = |name: &str| col(name).ok_or_else(|| TsmError::InvalidData(format!("missing column '{name}'")));
    let (c_arm, c_time, c_event) = (require("arm")?, require("time")?, require("event")?);
    let c_id = col("id");
    let c_entry = col("entry");
    let c_cross = col("cross_time");
    let c_crossed = col("crossed");
    let c_switched = col("switched");
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
        let get = |c: usize| row.get(c).unwrap_or("");
        let arm = match get(c_arm).trim() {
            "treatment" | "1" => Arm::Treatment,
            "control" | "0" => Arm::Control,
            other => {
                return Err(TsmError::InvalidData(format!(
                    "line {line}, column arm: expected treatment/control, got '{other}'"
                )))
            }
        };
        let id = match c_id {
            Some(c) => parse_num(get(c), "id", line)? as usize,
            None => i,
        };
        let entry = match c_entry {
            Some(c) if !get(c).trim().is_empty() => parse_num(get(c), "entry", line)?,
            _ => 0.0,
        };
        let cross_time = match c_cross {
            Some(c) if !get(c).trim().is_empty() => Some(parse_num(get(c), "cross_time", line)?),
            _ => None,
        };
        let crossed = match c_crossed {
            Some(c) => parse_flag(get(c), "crossed", line)?,
            None => cross_time.is_some(),
        };
        let switched = match c_switched {
            Some(c) => parse_flag(get(c), "switched", line)?,
            None => crossed,
        };
        let rec = PatientRecord {
            id,
            arm,
            entry,
            time: parse_num(get(c_time), "time", line)?,
            event: parse_flag(get(c_event), "event", line)?,
            crossed,
            cross_time,
            switched,
        };
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Preset;

    #[test]
    fn no_crossover_hazard_never_crosses() {
        let l1 = PiecewiseHazard::new(vec![0.0, 1.0], vec![0.3, 0.5]).unwrap();
        let l3 = PiecewiseHazard::zero(l1.cuts());
        let x = CrossoverKind::SemiMarkov { hazard: l1.clone() };
        let mut rng = rng_from_seed(1);
        for _ in 0..1000 {
            let (t, u) = draw_joint(&l1, &l3, &x, &mut rng).unwrap();
            assert!(u.is_none());
            assert!(t > 0.0 && t.is_finite());
        }
    }

    #[test]
    fn crossover_never_after_event() {
        let sc = Preset::Exp1Moderate.scenario(1.0);
        let mut rng = rng_from_seed(3);
        let recs = simulate_trial(&sc, &mut rng).unwrap();
        assert_eq!(recs.len(), 400);
        for r in &recs {
            r.validate().unwrap();
            if let Some(u) = r.cross_time {
                assert!(u < r.time);
            }
            assert!(!r.switched || r.crossed);
        }
        assert!(recs.iter().any(|r| r.switched));
    }

    #[test]
    fn same_seed_same_records() {
        let sc = Preset::Exp1Moderate.scenario(0.5);
        let a = simulate_trial(&sc, &mut rng_from_seed(11)).unwrap();
        let b = simulate_trial(&sc, &mut rng_from_seed(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pi2_validation_message() {
        let sc = Preset::Exp1Moderate.scenario(1.5);
        let err = sc.validate().unwrap_err().to_string();
        assert!(err.contains("pi2 must lie in [0,1]"), "{err}");
    }

    #[test]
    fn csv_round_trip() {
        let sc = Preset::Exp1Moderate.scenario(0.75);
        let recs = simulate_trial(&sc, &mut rng_from_seed(5)).unwrap();
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,arm,entry,time,event,crossed,cross_time,switched\n"));
        let back = read_records_csv(&buf[..]).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn csv_missing_column_is_named() {
        let err = read_records_csv("id,arm,time\n0,control,1.0\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("'event'"), "{err}");
    }
}
