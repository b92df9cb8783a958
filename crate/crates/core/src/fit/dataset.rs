use serde::{Deserialize, Serialize};

use crate::error::{Result, TsmError};

/// Counting-process survival data: rows `(start, stop]` with an event flag at
/// `stop`, `p` covariates and a positive case weight.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurvDataset {
    p: usize,
    start: Vec<f64>,
    stop: Vec<f64>,
    event: Vec<bool>,
    x: Vec<f64>,
    weight: Vec<f64>,
}

impl SurvDataset {
    pub fn new(p: usize) -> Self {
        Self { p, ..Default::default() }
    }

    pub fn with_capacity(p: usize, n: usize) -> Self {
        Self {
            p,
            start: Vec::with_capacity(n),
            stop: Vec::with_capacity(n),
            event: Vec::with_capacity(n),
            x: Vec::with_capacity(n * p),
            weight: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, start: f64, stop: f64, event: bool, x: &[f64], weight: f64) -> Result<()> {
        if x.len() != self.p {
            return Err(TsmError::InvalidData(format!("expected {} covariates, got {}", self.p, x.len())));
        }
        if !(start >= 0.0 && start < stop) || !stop.is_finite() {
            return Err(TsmError::InvalidData(format!("invalid interval ({start}, {stop}]")));
        }
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(TsmError::InvalidData(format!("weight must be positive, got {weight}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TsmError::InvalidData("covariates must be finite".into()));
        }
        self.start.push(start);
        self.stop.push(stop);
        self.event.push(event);
        self.x.extend_from_slice(x);
        self.weight.push(weight);
        Ok(())
    }

    /// Right-censored rows with a single covariate.
    pub fn from_right_censored(times: &[f64], events: &[bool], covariate: &[f64]) -> Result<Self> {
        if times.len() != events.len() || times.len() != covariate.len() {
            return Err(TsmError::InvalidData("column lengths differ".into()));
        }
        let mut d = Self::with_capacity(1, times.len());
        for i in 0..times.len() {
            d.push(0.0, times[i], events[i], &[covariate[i]], 1.0)?;
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.stop.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stop.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.p
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn stop(&self) -> &[f64] {
        &self.stop
    }

    pub fn event(&self) -> &[bool] {
        &self.event
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn covariates(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn covariate(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.p + j]
    }

    pub fn is_right_censored(&self) -> bool {
        self.start.iter().all(|&s| s == 0.0)
    }

    /// Same rows with every weight multiplied by `factor`.
    pub fn reweighted(&self, factor: f64) -> Self {
        let mut d = self.clone();
        d.weight.iter_mut().for_each(|w| *w *= factor);
        d
    }
}

/// Estimates on the log-hazard-ratio scale (or log acceleration scale for AFT fits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub const Z_95: f64 = 1.96;

impl FitResult {
    pub fn hr(&self) -> f64 {
        self.beta[0].exp()
    }

    /// `beta ± 1.96 se` on the log scale for the first coefficient.
    pub fn ci(&self) -> (f64, f64) {
        (self.beta[0] - Z_95 * self.se[0], self.beta[0] + Z_95 * self.se[0])
    }

    pub fn hr_ci(&self) -> (f64, f64) {
        let (lo, hi) = self.ci();
        (lo.exp(), hi.exp())
    }
}
