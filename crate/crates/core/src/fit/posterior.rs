//! Exact posterior draws for piecewise-constant hazards under independent Gamma priors.
//!
//! With a Gamma(a, b) prior on each step height and a piecewise-exponential
//! likelihood, the posterior of step `j` is Gamma(a + d_j, b + E_j) where `d_j` is
//! the event count and `E_j` the exposure in that piece.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TsmError};
use crate::hazard::{Clock, PiecewiseHazard};
use crate::simulate::PatientRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self { shape: 1.0, rate: 2.0 }
    }
}

/// Event counts and exposure per grid piece for one transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathExposure {
    pub events: Vec<f64>,
    pub exposure: Vec<f64>,
}

impl PathExposure {
    fn new(j: usize) -> Self {
        Self { events: vec![0.0; j], exposure: vec![0.0; j] }
    }

    pub fn total_events(&self) -> f64 {
        self.events.iter().sum()
    }

    pub fn total_exposure(&self) -> f64 {
        self.exposure.iter().sum()
    }
}

/// Sufficient statistics of the control arm for the four transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub cuts: Vec<f64>,
    pub clock: Clock,
    /// entry to event, entry clock
    pub lambda1: PathExposure,
    /// after crossover, stayed on control
    pub lambda2: PathExposure,
    /// after crossover, switched
    pub lambda2_star: PathExposure,
    /// entry to crossover, entry clock
    pub lambda3: PathExposure,
}

impl PathSummary {
    /// Splits the control-arm follow-up by path. Post-crossover exposure is measured
    /// from crossover under [`Clock::SemiMarkov`] and from entry under [`Clock::Markov`].
    pub fn from_records(records: &[PatientRecord], cuts: &[f64], clock: Clock) -> Result<Self> {
        let grid = PiecewiseHazard::new(cuts.to_vec(), vec![0.0; cuts.len()])?;
        let j = cuts.len();
        let mut s = PathSummary {
            cuts: cuts.to_vec(),
            clock,
            lambda1: PathExposure::new(j),
            lambda2: PathExposure::new(j),
            lambda2_star: PathExposure::new(j),
            lambda3: PathExposure::new(j),
        };
        let mut before = vec![0.0; j];
        let mut after = vec![0.0; j];
        for r in records.iter().filter(|r| !r.is_treatment()) {
            let pre_end = r.cross_time.unwrap_or(r.time);
            before.iter_mut().for_each(|v| *v = 0.0);
            grid.exposure_by_piece(pre_end, &mut before);
            for k in 0..j {
                s.lambda1.exposure[k] += before[k];
                s.lambda3.exposure[k] += before[k];
            }
            let Some(u) = r.cross_time else {
                if r.event {
                    s.lambda1.events[grid.piece_index(r.time)] += 1.0;
                }
                continue;
            };
            s.lambda3.events[grid.piece_index(u)] += 1.0;
            let path = if r.switched { &mut s.lambda2_star } else { &mut s.lambda2 };
            after.iter_mut().for_each(|v| *v = 0.0);
            let event_clock = match clock {
                Clock::SemiMarkov => {
                    grid.exposure_by_piece(r.time - u, &mut after);
                    r.time - u
                }
                Clock::Markov => {
                    grid.exposure_by_piece(r.time, &mut after);
                    let mut pre = vec![0.0; j];
                    grid.exposure_by_piece(u, &mut pre);
                    after.iter_mut().zip(&pre).for_each(|(a, b)| *a -= b);
                    r.time
                }
            };
            for k in 0..j {
                path.exposure[k] += after[k];
            }
            if r.event {
                path.events[grid.piece_index(event_clock)] += 1.0;
            }
        }
        Ok(s)
    }
}

/// `K x J` matrices of sampled step heights, one per transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub cuts: Vec<f64>,
    pub lambda1: Vec<Vec<f64>>,
    pub lambda2: Vec<Vec<f64>>,
    pub lambda2_star: Vec<Vec<f64>>,
    pub lambda3: Vec<Vec<f64>>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.lambda1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda1.is_empty()
    }

    fn hazard(&self, rows: &[Vec<f64>], k: usize) -> PiecewiseHazard {
        PiecewiseHazard::new(self.cuts.clone(), rows[k].clone()).expect("posterior draws are positive")
    }

    pub fn lambda2_hazard(&self, k: usize) -> PiecewiseHazard {
        self.hazard(&self.lambda2, k)
    }

    pub fn lambda2_star_hazard(&self, k: usize) -> PiecewiseHazard {
        self.hazard(&self.lambda2_star, k)
    }

    pub fn lambda1_hazard(&self, k: usize) -> PiecewiseHazard {
        self.hazard(&self.lambda1, k)
    }

    pub fn lambda3_hazard(&self, k: usize) -> PiecewiseHazard {
        self.hazard(&self.lambda3, k)
    }
}

fn posterior(prior: GammaPrior, path: &PathExposure) -> Result<Vec<Gamma<f64>>> {
    path.events
        .iter()
        .zip(&path.exposure)
        .map(|(d, e)| {
            Gamma::new(prior.shape + d, 1.0 / (prior.rate + e))
                .map_err(|err| TsmError::InvalidData(format!("gamma posterior: {err}")))
        })
        .collect()
}

/// `k` independent draws from the product-Gamma posterior.
pub fn gamma_posterior_draws(
    summary: &PathSummary,
    prior: GammaPrior,
    k: usize,
    rng: &mut impl Rng,
) -> Result<PosteriorDraws> {
    if k == 0 {
        return Err(TsmError::InvalidData("at least one posterior draw is required".into()));
    }
    if !(prior.shape > 0.0 && prior.rate > 0.0) {
        return Err(TsmError::InvalidData("gamma prior parameters must be positive".into()));
    }
    let dists = [
        posterior(prior, &summary.lambda1)?,
        posterior(prior, &summary.lambda2)?,
        posterior(prior, &summary.lambda2_star)?,
        posterior(prior, &summary.lambda3)?,
    ];
    let mut mats: [Vec<Vec<f64>>; 4] = Default::default();
    for _ in 0..k {
        for (m, ds) in mats.iter_mut().zip(&dists) {
            // a Gamma draw can underflow to 0 only for absurd shapes; keep rates positive
            m.push(ds.iter().map(|g| g.sample(rng).max(f64::MIN_POSITIVE)).collect());
        }
    }
    let [lambda1, lambda2, lambda2_star, lambda3] = mats;
    Ok(PosteriorDraws { cuts: summary.cuts.clone(), lambda1, lambda2, lambda2_star, lambda3 })
}
