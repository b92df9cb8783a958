//! Piecewise-constant hazards and the marginal survival of the three-state model.
//!
//! A patient either dies directly from entry (hazard `lambda1`), or reaches the
//! crossover event first (hazard `lambda3`) and then dies under a post-crossover
//! hazard that may depend on the crossover time (see [`CrossoverKind`]).

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsmError};

/// Step-function hazard over `cuts[0] = 0 < cuts[1] < ... < cuts[J-1]`.
///
/// `rates[j]` applies on `(cuts[j], cuts[j+1]]`; the last rate extends to infinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHazard", into = "RawHazard")]
pub struct PiecewiseHazard {
    cuts: Vec<f64>,
    rates: Vec<f64>,
    // cumulative hazard at each cut
    cum: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawHazard {
    cuts: Vec<f64>,
    rates: Vec<f64>,
}

impl TryFrom<RawHazard> for PiecewiseHazard {
    type Error = TsmError;

    fn try_from(raw: RawHazard) -> Result<Self> {
        PiecewiseHazard::new(raw.cuts, raw.rates)
    }
}

impl From<PiecewiseHazard> for RawHazard {
    fn from(h: PiecewiseHazard) -> Self {
        RawHazard { cuts: h.cuts, rates: h.rates }
    }
}

impl PiecewiseHazard {
    pub fn new(cuts: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if cuts.is_empty() {
            return Err(TsmError::InvalidHazard("at least one cut point is required".into()));
        }
        if cuts.len() != rates.len() {
            return Err(TsmError::InvalidHazard(format!("{} cuts but {} rates", cuts.len(), rates.len())));
        }
        if cuts[0] != 0.0 {
            return Err(TsmError::InvalidHazard("first cut must be 0".into()));
        }
        if cuts.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(TsmError::InvalidHazard("cuts must be finite and strictly increasing".into()));
        }
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(TsmError::InvalidHazard("rates must be finite and non-negative".into()));
        }
        let mut cum = Vec::with_capacity(cuts.len());
        cum.push(0.0);
        for j in 1..cuts.len() {
            cum.push(cum[j - 1] + rates[j - 1] * (cuts[j] - cuts[j - 1]));
        }
        Ok(Self { cuts, rates, cum })
    }

    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![rate])
    }

    pub fn zero(cuts: &[f64]) -> Self {
        Self::new(cuts.to_vec(), vec![0.0; cuts.len()]).expect("zero hazard on a valid grid")
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn n_pieces(&self) -> usize {
        self.rates.len()
    }

    /// Same grid, every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.cuts.clone(), self.rates.iter().map(|r| r * factor).collect())
    }

    /// Index of the piece containing `t`, using left-open intervals `(s_j, s_{j+1}]`.
    pub fn piece_index(&self, t: f64) -> usize {
        // number of cuts strictly below t, minus one
        let k = self.cuts.partition_point(|&c| c < t);
        k.saturating_sub(1)
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        self.rates[self.piece_index(t)]
    }

    /// Cumulative hazard; continuous and piecewise linear. `t` is assumed non-negative.
    pub fn cumulative(&self, t: f64) -> f64 {
        let j = self.piece_index(t);
        self.cum[j] + self.rates[j] * (t - self.cuts[j])
    }

    pub fn is_proper(&self) -> bool {
        *self.rates.last().unwrap() > 0.0
    }

    pub fn survival(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(TsmError::NegativeTime(t));
        }
        Ok((-self.cumulative(t)).exp())
    }

    /// Smallest `t` with `cumulative(t) = level`.
    pub fn inverse_cumulative(&self, level: f64) -> Result<f64> {
        if !(level >= 0.0) {
            return Err(TsmError::InvalidProbability((-level).exp()));
        }
        if level == 0.0 {
            return Ok(0.0);
        }
        // first piece whose end reaches the level
        let k = self.cum.partition_point(|&c| c < level);
        let j = k - 1;
        let rate = self.rates[j];
        if rate == 0.0 {
            // only reachable on the open-ended last piece
            return Err(TsmError::MassBeyondHorizon);
        }
        let t = self.cuts[j] + (level - self.cum[j]) / rate;
        if !t.is_finite() {
            return Err(TsmError::MassBeyondHorizon);
        }
        Ok(t)
    }

    pub fn inverse_survival(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(TsmError::InvalidProbability(p));
        }
        self.inverse_cumulative(-p.ln())
    }

    /// Time spent in each piece by an interval `[0, t]`.
    pub fn exposure_by_piece(&self, t: f64, out: &mut [f64]) {
        for j in 0..self.cuts.len() {
            let lo = self.cuts[j];
            if t <= lo {
                break;
            }
            let hi = self.cuts.get(j + 1).copied().unwrap_or(f64::INFINITY);
            out[j] += t.min(hi) - lo;
        }
    }
}

/// Post-crossover hazard surface `lambda2(t | u)` on a shared grid in both arguments.
///
/// `rows[i]` is the entry-clock hazard used when the crossover time falls in piece `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralHazard {
    pub rows: Vec<PiecewiseHazard>,
}

impl GeneralHazard {
    pub fn new(rows: Vec<PiecewiseHazard>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(TsmError::InvalidHazard("general hazard needs at least one row".into()));
        };
        if rows.len() != first.n_pieces() {
            return Err(TsmError::InvalidHazard("general hazard needs one row per piece of the grid".into()));
        }
        if rows.iter().any(|r| r.cuts() != first.cuts()) {
            return Err(TsmError::InvalidHazard("general hazard rows must share one grid".into()));
        }
        Ok(Self { rows })
    }

    /// Tabulates `f(t, u)` at the left end of each grid piece in both arguments.
    pub fn from_fn(cuts: &[f64], f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let rows = cuts
            .iter()
            .map(|&u| PiecewiseHazard::new(cuts.to_vec(), cuts.iter().map(|&t| f(t, u)).collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    pub fn cuts(&self) -> &[f64] {
        self.rows[0].cuts()
    }

    pub fn row_for(&self, u: f64) -> &PiecewiseHazard {
        &self.rows[self.rows[0].piece_index(u)]
    }
}

/// Clock on which a post-crossover hazard runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// time since entry
    Markov,
    /// time since crossover
    #[default]
    SemiMarkov,
}

/// How the post-crossover hazard depends on the crossover time `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CrossoverKind {
    /// `lambda2(t | u) = lambda(t)`, entry clock.
    Markov {
        hazard: PiecewiseHazard,
    },
    /// `lambda2(t | u) = lambda(t - u)`, clock reset at crossover.
    SemiMarkov {
        hazard: PiecewiseHazard,
    },
    General {
        surface: GeneralHazard,
    },
}

impl CrossoverKind {
    pub fn cuts(&self) -> &[f64] {
        match self {
            CrossoverKind::Markov { hazard } | CrossoverKind::SemiMarkov { hazard } => hazard.cuts(),
            CrossoverKind::General { surface } => surface.cuts(),
        }
    }

    /// `int_u^t lambda2(s | u) ds` for `t >= u`.
    pub fn cumulative_after(&self, u: f64, t: f64) -> f64 {
        match self {
            CrossoverKind::Markov { hazard } => hazard.cumulative(t) - hazard.cumulative(u),
            CrossoverKind::SemiMarkov { hazard } => hazard.cumulative(t - u),
            CrossoverKind::General { surface } => {
                let row = surface.row_for(u);
                row.cumulative(t) - row.cumulative(u)
            }
        }
    }

    /// Entry-clock time `t >= u` at which the post-crossover cumulative hazard reaches `level`.
    pub fn time_after(&self, u: f64, level: f64) -> Result<f64> {
        match self {
            CrossoverKind::Markov { hazard } => hazard.inverse_cumulative(hazard.cumulative(u) + level),
            CrossoverKind::SemiMarkov { hazard } => Ok(u + hazard.inverse_cumulative(level)?),
            CrossoverKind::General { surface } => {
                let row = surface.row_for(u);
                row.inverse_cumulative(row.cumulative(u) + level)
            }
        }
    }
}

/// `S(t) = exp(-Lambda(t))`.
pub fn survival(h: &PiecewiseHazard, t: f64) -> Result<f64> {
    h.survival(t)
}

pub fn inverse_survival(h: &PiecewiseHazard, p: f64) -> Result<f64> {
    h.inverse_survival(p)
}

const MARGINAL_TOL: f64 = 1e-10;

/// Marginal event-time survival `P(T > t)` of the three-state model.
///
/// The crossover term is integrated by adaptive Simpson on segments split at every
/// kink of the integrand.
pub fn marginal_survival(
    lambda1: &PiecewiseHazard,
    lambda3: &PiecewiseHazard,
    crossover: &CrossoverKind,
    t: f64,
) -> Result<f64> {
    marginal_survival_tol(lambda1, lambda3, crossover, t, MARGINAL_TOL)
}

fn marginal_survival_tol(
    lambda1: &PiecewiseHazard,
    lambda3: &PiecewiseHazard,
    crossover: &CrossoverKind,
    t: f64,
    tol: f64,
) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(TsmError::NegativeTime(t));
    }
    let direct = (-(lambda1.cumulative(t) + lambda3.cumulative(t))).exp();
    if t == 0.0 {
        return Ok(direct);
    }
    let integrand = |u: f64| {
        let before = lambda1.cumulative(u) + lambda3.cumulative(u);
        let after = crossover.cumulative_after(u, t);
        (-(before + after)).exp() * lambda3.rate_at(u)
    };
    let mut breaks: Vec<f64> = vec![0.0, t];
    let mut add = |c: f64| {
        if c > 0.0 && c < t {
            breaks.push(c);
        }
    };
    lambda1.cuts().iter().for_each(|&c| add(c));
    lambda3.cuts().iter().for_each(|&c| add(c));
    match crossover {
        CrossoverKind::Markov { .. } => {}
        CrossoverKind::SemiMarkov { hazard } => hazard.cuts().iter().for_each(|&c| add(t - c)),
        CrossoverKind::General { surface } => surface.cuts().iter().for_each(|&c| add(c)),
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let seg_tol = tol / (breaks.len() - 1) as f64;
    let crossed: f64 = breaks.windows(2).map(|w| adaptive_simpson(&integrand, w[0], w[1], seg_tol)).sum();
    Ok(direct + crossed)
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Numeric density `-dS/dt` and hazard `f/S` of the marginal event time.
pub fn marginal_density_and_hazard(
    lambda1: &PiecewiseHazard,
    lambda3: &PiecewiseHazard,
    crossover: &CrossoverKind,
    t: f64,
) -> Result<(f64, f64)> {
    if !(t >= 0.0) {
        return Err(TsmError::NegativeTime(t));
    }
    let s = marginal_survival(lambda1, lambda3, crossover, t)?;
    if s < 1e-12 {
        return Err(TsmError::SurvivalUnderflow(t));
    }
    let step = 1e-5 * t.max(1.0);
    // tighter quadrature so the difference quotient is not dominated by integration error
    let eval = |x: f64| marginal_survival_tol(lambda1, lambda3, crossover, x, 1e-14);
    let density = if t >= step {
        -(eval(t + step)? - eval(t - step)?) / (2.0 * step)
    } else {
        -(eval(t + step)? - eval(t)?) / step
    };
    Ok((density, density / s))
}
