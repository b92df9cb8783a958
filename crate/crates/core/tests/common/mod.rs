//! Property suites shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::Rng;

use tsm_core::adjust::{bimm_transform, counterfactual_times, itt, AdjusterConfig, MethodId, RpsftConfig};
use tsm_core::fit::{
    cox_fit_with, cox_loglik, gamma_posterior_draws, CoxOptions, GammaPrior, PathSummary, SurvDataset, Ties,
};
use tsm_core::harness::{run_replications, Preset, ReplicationOptions};
use tsm_core::hazard::{marginal_survival, Clock, CrossoverKind, PiecewiseHazard};
use tsm_core::rng::{derive_seed, rng_from_seed};
use tsm_core::simulate::{arm_dataset, draw_joint, simulate_trial, PatientRecord};
use tsm_core::TsmError;

/// Asymptotic Kolmogorov tail probability with the Stephens small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn random_hazard(rng: &mut impl Rng) -> PiecewiseHazard {
    let pieces = rng.random_range(1..=3);
    let mut cuts = vec![0.0];
    for _ in 1..pieces {
        let last = *cuts.last().unwrap();
        cuts.push(last + rng.random_range(0.3..2.0));
    }
    let rates = (0..pieces).map(|_| rng.random_range(0.05..1.5)).collect();
    PiecewiseHazard::new(cuts, rates).unwrap()
}

pub struct KsOutcome {
    pub label: String,
    pub d: f64,
    pub p: f64,
}

/// Draws `n` event times per random scenario and compares them with the marginal
/// survival function by a one-sample KS test.
pub fn rng_fidelity(scenarios: usize, n: usize, seed: u64) -> Vec<KsOutcome> {
    (0..scenarios)
        .map(|s| {
            let mut rng = rng_from_seed(derive_seed(seed, s as u64));
            let l1 = random_hazard(&mut rng);
            let l3 = random_hazard(&mut rng);
            let hazard = random_hazard(&mut rng);
            let (label, kind) = if s % 2 == 0 {
                ("markov", CrossoverKind::Markov { hazard })
            } else {
                ("semi-markov", CrossoverKind::SemiMarkov { hazard })
            };
            let mut t: Vec<f64> = (0..n).map(|_| draw_joint(&l1, &l3, &kind, &mut rng).unwrap().0).collect();
            t.sort_by(f64::total_cmp);
            let nf = n as f64;
            let d = t
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let f = 1.0 - marginal_survival(&l1, &l3, &kind, x).unwrap();
                    (f - i as f64 / nf).max((i + 1) as f64 / nf - f)
                })
                .fold(0.0, f64::max);
            KsOutcome { label: format!("{label} #{s}"), d, p: ks_p_value(d, n) }
        })
        .collect()
}

fn dataset_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, Vec<f64>)> {
    (3usize..=12).prop_flat_map(|n| {
        (
            // integer-valued times give ties
            prop::collection::vec((1u32..8).prop_map(f64::from), n),
            prop::collection::vec(prop::bool::weighted(0.7), n),
            prop::collection::vec(-1.5f64..1.5, n),
        )
    })
}

/// Maximizer of `f` over a grid of step `h` on `[lo, hi]`, refined by a second grid
/// of step `h / 100` around the best point.
pub fn grid_argmax(f: impl Fn(f64) -> f64, lo: f64, hi: f64, h: f64) -> f64 {
    let scan = |a: f64, b: f64, step: f64| {
        let n = ((b - a) / step).round() as usize;
        (0..=n)
            .map(|i| a + i as f64 * step)
            .map(|x| (x, f(x)))
            .fold((a, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    };
    let coarse = scan(lo, hi, h);
    scan(coarse - h, coarse + h, h / 100.0)
}

/// Cox estimates on random small datasets against direct grid maximization of the
/// partial likelihood. Datasets whose maximum sits on the grid boundary (no finite
/// estimate) are rejected and regenerated. Returns the number of compared cases.
pub fn cox_oracle(cases: u32, seed: u64) -> Result<u32, String> {
    let mut config = Config::with_cases(cases);
    config.max_global_rejects = 100_000;
    config.failure_persistence = None;
    let mut runner = TestRunner::new_with_rng(
        config,
        proptest::test_runner::TestRng::from_seed(proptest::test_runner::RngAlgorithm::ChaCha, &seed_bytes(seed)),
    );
    let counted = std::cell::Cell::new(0u32);
    runner
        .run(&(dataset_strategy(), prop::bool::ANY), |((times, events, x), efron)| {
            let ties = if efron { Ties::Efron } else { Ties::Breslow };
            let data = SurvDataset::from_right_censored(&times, &events, &x).unwrap();
            if data.n_events() == 0 {
                return Err(TestCaseError::reject("no events"));
            }
            let grid = grid_argmax(|b| cox_loglik(&data, &[b], ties), -8.0, 8.0, 0.01);
            if grid.abs() > 7.9 {
                return Err(TestCaseError::reject("estimate not finite"));
            }
            let fit = match cox_fit_with(&data, &CoxOptions::with_ties(ties)) {
                Ok(fit) => fit,
                // every event alone in its risk set: flat likelihood
                Err(TsmError::Collinear) => return Err(TestCaseError::reject("no information")),
                Err(e) => return Err(TestCaseError::fail(format!("fit failed: {e}"))),
            };
            prop_assert!((fit.beta[0] - grid).abs() < 1e-3, "newton {} vs grid {} ({ties:?})", fit.beta[0], grid);
            counted.set(counted.get() + 1);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(counted.get())
}

fn seed_bytes(seed: u64) -> [u8; 32] {
    let mut out = [0u8; 32];
    for (i, chunk) in out.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&derive_seed(seed, i as u64).to_le_bytes());
    }
    out
}

pub struct ConjugacyCheck {
    pub label: String,
    pub z: f64,
}

/// Standardized deviation of the Monte Carlo posterior mean from `(a+d)/(b+E)` for
/// every transition and grid piece.
pub fn conjugacy(k: usize, seed: u64) -> Vec<ConjugacyCheck> {
    let sc = Preset::Exp1Moderate.scenario(0.5);
    let records = simulate_trial(&sc, &mut rng_from_seed(seed)).unwrap();
    let prior = GammaPrior::default();
    let mut out = Vec::new();
    for clock in [Clock::SemiMarkov, Clock::Markov] {
        let summary = PathSummary::from_records(&records, &sc.estimation_cuts(), clock).unwrap();
        let draws = gamma_posterior_draws(&summary, prior, k, &mut rng_from_seed(seed + 1)).unwrap();
        let paths = [
            ("lambda1", &summary.lambda1, &draws.lambda1),
            ("lambda2", &summary.lambda2, &draws.lambda2),
            ("lambda2*", &summary.lambda2_star, &draws.lambda2_star),
            ("lambda3", &summary.lambda3, &draws.lambda3),
        ];
        for (name, path, rows) in paths {
            for j in 0..path.events.len() {
                let shape = prior.shape + path.events[j];
                let rate = prior.rate + path.exposure[j];
                let mean = rows.iter().map(|r| r[j]).sum::<f64>() / k as f64;
                let se = shape.sqrt() / rate / (k as f64).sqrt();
                out.push(ConjugacyCheck { label: format!("{clock:?} {name}[{j}]"), z: (mean - shape / rate) / se });
            }
        }
    }
    out
}

/// Identity transforms reproduce the unadjusted Cox fit: RPSFT at phi = 0 (bit for
/// bit), BIMM with equal pre- and post-switch hazards (to rounding of the inverse
/// cumulative hazard), and every method on data without switchers.
pub fn identity_transforms(datasets: usize, seed: u64) -> Result<(), String> {
    for i in 0..datasets {
        let pi2 = [0.25, 0.5, 0.75, 1.0][i % 4];
        let sc = Preset::Exp1Moderate.scenario(pi2);
        let records = simulate_trial(&sc, &mut rng_from_seed(derive_seed(seed, i as u64))).unwrap();
        let base = itt(&records, Ties::Efron).map_err(|e| e.to_string())?;

        for recensor in [false, true] {
            let cfg = RpsftConfig { recensor, readout_time: Some(sc.readout_time), ..Default::default() };
            let cf = counterfactual_times(&records, 0.0, &cfg);
            let data = arm_dataset(records.iter().zip(&cf).map(|(r, &(t, e))| (r, t, e))).unwrap();
            let fit = cox_fit_with(&data, &CoxOptions::default()).unwrap();
            if fit.beta != base.beta {
                return Err(format!("dataset {i}: rpsft phi=0 gives {:?} vs {:?}", fit.beta, base.beta));
            }
        }

        let hazard = PiecewiseHazard::new(sc.estimation_cuts(), vec![0.3, 0.25, 0.4, 0.2, 0.35]).unwrap();
        for clock in [Clock::SemiMarkov, Clock::Markov] {
            let mut clamped = 0;
            let rows = records.iter().map(|r| match r.cross_time {
                Some(u) if r.switched => (r, bimm_transform(&hazard, &hazard, u, r.time, clock, &mut clamped), r.event),
                _ => (r, r.time, r.event),
            });
            let data = arm_dataset(rows).unwrap();
            let fit = cox_fit_with(&data, &CoxOptions::default()).unwrap();
            if (fit.beta[0] - base.beta[0]).abs() > 1e-12 || clamped > 0 {
                return Err(format!("dataset {i}: bimm identity gives {:?} vs {:?}", fit.beta, base.beta));
            }
        }

        let unswitched: Vec<PatientRecord> = records
            .iter()
            .cloned()
            .map(|mut r| {
                r.switched = false;
                r
            })
            .collect();
        let plain = itt(&unswitched, Ties::Efron).unwrap();
        let mut cfg = AdjusterConfig { cuts: Some(sc.estimation_cuts()), ..Default::default() };
        cfg.tsaft.bootstrap = 0;
        cfg.bimm.draws = 10;
        for m in [MethodId::Cas, MethodId::Eas, MethodId::Ttdv, MethodId::Tsaft, MethodId::Ipcw, MethodId::Bimm] {
            let fit = tsm_core::estimate(m, &unswitched, &cfg, 1).map_err(|e| format!("{m}: {e}"))?;
            if fit.beta != plain.beta {
                return Err(format!("dataset {i}: {m} without switchers gives {:?} vs {:?}", fit.beta, plain.beta));
            }
        }
    }
    Ok(())
}

/// Replication CSV output with one worker and with eight.
pub fn determinism_outputs(replications: usize) -> (Vec<u8>, Vec<u8>) {
    let sc = Preset::Exp1Moderate.scenario(0.5);
    let run = |threads| {
        let mut opts = ReplicationOptions::new(MethodId::all(), replications, 99);
        opts.adjuster.bimm.draws = 20;
        opts.adjuster.tsaft.bootstrap = 10;
        opts.threads = Some(threads);
        let report = run_replications(&sc, &opts).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        report.write_rows_csv(&mut buf).unwrap();
        buf
    };
    (run(1), run(8))
}
