//! Acceptance run: one PASS/FAIL line per criterion. Built without the libtest
//! harness so the lines are never captured.
//!
//! Reproduction criteria are reported, not asserted; the property suites are
//! asserted. `TSM_ACCEPT_R` overrides the replication count for quick runs.

mod common;

use std::time::Instant;

use common::*;
use tsm_core::adjust::MethodId;
use tsm_core::harness::{design_summary, run_replications, Preset, ReplicationOptions, ReplicationReport};

const PI2: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
const SEED: u64 = 2024;
const BIMM_DRAWS: usize = 200;
const TSAFT_BOOTSTRAP: usize = 100;

struct Tally {
    passed: usize,
    failed: Vec<String>,
}

impl Tally {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if pass {
            self.passed += 1;
        } else {
            self.failed.push(name.to_string());
        }
    }
}

fn replications() -> usize {
    std::env::var("TSM_ACCEPT_R").ok().and_then(|v| v.parse().ok()).unwrap_or(2000)
}

fn options(methods: Vec<MethodId>, r: usize) -> ReplicationOptions {
    let mut opts = ReplicationOptions::new(methods, r, SEED);
    opts.adjuster.rpsft.recensor = false;
    opts.adjuster.bimm.draws = BIMM_DRAWS;
    opts.adjuster.tsaft.bootstrap = TSAFT_BOOTSTRAP;
    opts
}

fn bias(rep: &ReplicationReport, m: MethodId) -> f64 {
    rep.method(m).and_then(|s| s.bias).unwrap_or(f64::NAN)
}

fn ecp(rep: &ReplicationReport, m: MethodId) -> f64 {
    100.0 * rep.method(m).and_then(|s| s.ecp).unwrap_or(f64::NAN)
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn table2(t: &mut Tally, r: usize) {
    const ITT: [f64; 4] = [0.047, 0.097, 0.145, 0.204];
    const BIMM: [f64; 4] = [0.016, 0.020, 0.017, 0.028];
    const BIMM_ECP: [f64; 3] = [94.8, 94.6, 94.6];
    let mut reports = Vec::new();
    for pi2 in PI2 {
        let start = Instant::now();
        let rep = run_replications(&Preset::Exp1Moderate.scenario(pi2), &options(MethodId::all(), r)).unwrap();
        println!("  moderate pi2={pi2}: R={r}, {:.0} s", start.elapsed().as_secs_f64());
        for s in &rep.methods {
            println!(
                "    {:6} bias {:+.3}  ecp {:5.1}  failed {}",
                s.method.to_string(),
                s.bias.unwrap_or(f64::NAN),
                100.0 * s.ecp.unwrap_or(f64::NAN),
                s.n_failed
            );
        }
        reports.push(rep);
    }
    for (i, rep) in reports.iter().enumerate() {
        let b = bias(rep, MethodId::Itt);
        t.check(
            &format!("table2 itt bias pi2={}", PI2[i]),
            within(b, ITT[i], 0.03),
            format!("{b:+.3}, target {:.3} ± 0.03", ITT[i]),
        );
    }
    for (i, rep) in reports.iter().enumerate() {
        let b = bias(rep, MethodId::Bimm);
        t.check(
            &format!("table2 bimm bias pi2={}", PI2[i]),
            within(b, BIMM[i], 0.015),
            format!("{b:+.3}, target {:.3} ± 0.015", BIMM[i]),
        );
    }
    for (i, target) in BIMM_ECP.iter().enumerate() {
        let e = ecp(&reports[i], MethodId::Bimm);
        t.check(
            &format!("table2 bimm ecp pi2={}", PI2[i]),
            within(e, *target, 2.5),
            format!("{e:.1}, target {target} ± 2.5"),
        );
    }
    for (i, rep) in reports.iter().enumerate() {
        let e = ecp(rep, MethodId::Rpsft);
        t.check(&format!("table2 rpsft ecp pi2={}", PI2[i]), e >= 95.0, format!("{e:.1}, target ≥ 95"));
    }
    let e = ecp(&reports[3], MethodId::Ipcw);
    t.check("table2 ipcw ecp pi2=1", e <= 5.0, format!("{e:.1}, target ≤ 5"));
    let good = [MethodId::Rpsft, MethodId::Tsaft, MethodId::Bimm];
    let naive = [MethodId::Itt, MethodId::Cas, MethodId::Eas, MethodId::Ttdv, MethodId::Ipcw];
    for i in [2, 3] {
        let rep = &reports[i];
        let worst_good = good
            .iter()
            .map(|&m| (bias(rep, m).abs(), m))
            .fold((f64::NEG_INFINITY, MethodId::Itt), |a, b| if b.0 > a.0 { b } else { a });
        let best_naive = naive.iter().map(|&m| (bias(rep, m).abs(), m)).fold((f64::INFINITY, MethodId::Itt), |a, b| {
            if b.0 < a.0 {
                b
            } else {
                a
            }
        });
        t.check(
            &format!("table2 ordering pi2={}", PI2[i]),
            worst_good.0 < best_naive.0,
            format!(
                "max |bias| of rpsft/tsaft/bimm {:.3} ({}), min of naive methods {:.3} ({})",
                worst_good.0, worst_good.1, best_naive.0, best_naive.1
            ),
        );
    }
}

fn design(t: &mut Tally, r: usize) {
    const WORKING: [f64; 4] = [0.544, 0.592, 0.643, 0.699];
    const POWER: [f64; 4] = [99.8, 98.3, 92.2, 77.0];
    const CENSORING: [f64; 4] = [38.4, 40.0, 41.6, 43.2];
    for (i, pi2) in PI2.into_iter().enumerate() {
        let mut sc = Preset::Exp1Moderate.scenario(pi2);
        sc.hr_true = None;
        let d = design_summary(&sc, r, SEED, None).unwrap();
        t.check(
            &format!("design working hr pi2={pi2}"),
            within(d.working_hr, WORKING[i], 0.01),
            format!("{:.3}, target {} ± 0.01", d.working_hr, WORKING[i]),
        );
        if i == 0 {
            t.check(
                "design hr_true without crossover",
                within(d.hr_true, 0.5, 0.01),
                format!("{:.3}, target 0.5 ± 0.01", d.hr_true),
            );
        }
        let p = 100.0 * d.power;
        t.check(
            &format!("design power pi2={pi2}"),
            within(p, POWER[i], 2.0),
            format!("{p:.1}, target {} ± 2", POWER[i]),
        );
        let c = 100.0 * d.censoring;
        t.check(
            &format!("design censoring pi2={pi2}"),
            within(c, CENSORING[i], 1.0),
            format!("{c:.1}, target {} ± 1", CENSORING[i]),
        );
    }
}

fn appendix(t: &mut Tally, r: usize) {
    let low = run_replications(&Preset::Exp1Low.scenario(1.0), &options(vec![MethodId::Eas], r)).unwrap();
    let e = ecp(&low, MethodId::Eas);
    t.check("low censoring eas ecp pi2=1", e <= 5.0, format!("{e:.1}, target ≤ 5 (reported 1.6)"));
    let high = run_replications(&Preset::Exp1High.scenario(0.5), &options(vec![MethodId::Bimm], r)).unwrap();
    let b = bias(&high, MethodId::Bimm);
    t.check("high censoring bimm bias pi2=0.5", within(b, 0.028, 0.015), format!("{b:+.3}, target 0.028 ± 0.015"));
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

fn properties(t: &mut Tally) {
    let (ks, secs) = timed(|| rng_fidelity(10, 50_000, SEED));
    let worst = ks.iter().min_by(|a, b| a.p.total_cmp(&b.p)).unwrap();
    t.check(
        "property rng fidelity",
        ks.iter().all(|o| o.p > 0.001) && secs <= 60.0,
        format!("10 scenarios, N = 50000, min KS p = {:.4} ({}), {secs:.1} s", worst.p, worst.label),
    );
    let (cox, secs) = timed(|| cox_oracle(200, SEED));
    t.check(
        "property cox vs grid oracle",
        matches!(cox, Ok(200)) && secs <= 60.0,
        format!("{cox:?} datasets within 1e-3, {secs:.1} s"),
    );
    let (conj, secs) = timed(|| conjugacy(20_000, SEED));
    let max_z = conj.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
    t.check(
        "property posterior conjugacy",
        max_z < 3.0 && secs <= 60.0,
        format!("{} cells, max |z| = {max_z:.2}, {secs:.1} s", conj.len()),
    );
    let (ident, secs) = timed(|| identity_transforms(8, SEED));
    t.check("property identity transforms", ident.is_ok() && secs <= 60.0, format!("{ident:?}, {secs:.1} s"));
    let ((serial, parallel), secs) = timed(|| determinism_outputs(24));
    t.check(
        "property serial vs parallel determinism",
        serial == parallel && secs <= 60.0,
        format!("{} bytes, identical = {}, {secs:.1} s", serial.len(), serial == parallel),
    );
}

fn main() {
    let r = replications();
    let mut t = Tally { passed: 0, failed: Vec::new() };
    println!(
        "acceptance: R = {r}, bimm draws {BIMM_DRAWS}, tsaft bootstrap {TSAFT_BOOTSTRAP}, rpsft without recensoring"
    );
    properties(&mut t);
    let property_failures = t.failed.clone();
    design(&mut t, r);
    appendix(&mut t, r);
    table2(&mut t, r);
    println!("acceptance: {} passed, {} failed {:?}", t.passed, t.failed.len(), t.failed);
    assert!(property_failures.is_empty(), "property suites failed: {property_failures:?}");
}
