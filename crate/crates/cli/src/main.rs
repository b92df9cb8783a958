use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tsm_core::adjust::{estimate, AdjusterConfig, MethodId};
use tsm_core::harness::{design_summary, load_scenario, run_replications, ReplicationOptions};
use tsm_core::rng::rng_from_seed;
use tsm_core::simulate::{read_records_csv, simulate_trial, write_records_csv, CrossoverScenario};
use tsm_core::TsmError;

#[derive(Parser)]
#[command(
    name = "tsm",
    version,
    about = "Three-state crossover model: simulate trials and estimate crossover-adjusted treatment effects"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Preset name (exp1-moderate, exp1-low, exp1-high) or scenario JSON file
    #[arg(long, global = true)]
    scenario: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; standard output when absent
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for replications; defaults to available parallelism
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Adjuster configuration JSON file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trial and write the patient records
    Simulate {
        #[arg(long)]
        pi2: Option<f64>,
    },
    /// Fit crossover-adjusted estimators to a patient CSV
    Estimate {
        /// Patient CSV as written by `simulate`
        data: PathBuf,
        /// Comma-separated method names or `all`
        #[arg(long, default_value = "all")]
        methods: String,
    },
    /// Monte Carlo replication study
    Replicate {
        #[arg(long)]
        pi2: Option<f64>,
        #[arg(long = "R", default_value_t = 2000)]
        replications: usize,
        #[arg(long, default_value = "all")]
        methods: String,
        /// Also write the per-replication estimates to this CSV
        #[arg(long)]
        rows: Option<PathBuf>,
    },
    /// Working hazard ratio, log-rank power and censoring of a design
    Design {
        #[arg(long)]
        pi2: Option<f64>,
        /// Replications for power and censoring
        #[arg(long = "R", default_value_t = 2000)]
        replications: usize,
    },
}

/// Input errors exit with 1, numerical failures with 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Debug)]
struct AllFailed;

impl std::fmt::Display for AllFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("every requested estimator failed")
    }
}

impl std::error::Error for AllFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<AllFailed>().is_some() {
        return 2;
    }
    match err.downcast_ref::<TsmError>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

fn broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        let io = match e.downcast_ref::<TsmError>() {
            Some(TsmError::Io(io)) => Some(io),
            Some(TsmError::Csv(c)) => match c.kind() {
                csv::ErrorKind::Io(io) => Some(io),
                _ => None,
            },
            _ => e.downcast_ref::<io::Error>(),
        };
        io.is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)
    })
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn scenario(global: &Global, pi2: Option<f64>) -> Result<CrossoverScenario> {
    let spec = global.scenario.as_deref().unwrap_or("exp1-moderate");
    let mut sc = load_scenario(spec).with_context(|| format!("scenario '{spec}'"))?;
    if let Some(p) = pi2 {
        sc.pi2 = p;
    }
    sc.validate()?;
    for w in sc.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(sc)
}

fn adjuster(global: &Global) -> Result<AdjusterConfig> {
    let cfg: AdjusterConfig = match &global.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str(&text).map_err(TsmError::from).with_context(|| format!("config {}", p.display()))?
        }
        None => AdjusterConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn methods(list: &str) -> Result<Vec<MethodId>> {
    Ok(MethodId::parse_list(list)?)
}

fn simulate(global: &Global, pi2: Option<f64>) -> Result<()> {
    let sc = scenario(global, pi2)?;
    let records = simulate_trial(&sc, &mut rng_from_seed(global.seed.unwrap_or(sc.seed)))?;
    let mut out = output(&global.out)?;
    match global.format {
        Format::Csv => write_records_csv(&mut out, &records)?,
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&records)?)?,
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EstimateRow {
    method: MethodId,
    beta: Option<f64>,
    se: Option<f64>,
    hr: Option<f64>,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn estimate_cmd(global: &Global, data: &PathBuf, list: &str) -> Result<()> {
    let methods = methods(list)?;
    let mut cfg = adjuster(global)?;
    if let Some(spec) = &global.scenario {
        // analysis grid and readout of the generating design
        let sc = load_scenario(spec).with_context(|| format!("scenario '{spec}'"))?;
        cfg.cuts.get_or_insert_with(|| sc.estimation_cuts());
        cfg.rpsft.readout_time.get_or_insert(sc.readout_time);
    }
    let file = File::open(data).with_context(|| format!("cannot open {}", data.display()))?;
    let records = read_records_csv(file).with_context(|| format!("reading {}", data.display()))?;
    let seed = global.seed.unwrap_or(0);
    let rows: Vec<EstimateRow> = methods
        .iter()
        .map(|&m| match estimate(m, &records, &cfg, seed) {
            Ok(fit) => {
                let (lo, hi) = fit.hr_ci();
                EstimateRow {
                    method: m,
                    beta: Some(fit.beta[0]),
                    se: Some(fit.se[0]),
                    hr: Some(fit.hr()),
                    ci_lo: Some(lo),
                    ci_hi: Some(hi),
                    converged: fit.converged,
                    error: None,
                    notes: fit.notes,
                }
            }
            Err(e) => {
                eprintln!("{m}: {e}");
                EstimateRow {
                    method: m,
                    beta: None,
                    se: None,
                    hr: None,
                    ci_lo: None,
                    ci_hi: None,
                    converged: false,
                    error: Some(e.to_string()),
                    notes: Vec::new(),
                }
            }
        })
        .collect();
    let mut out = output(&global.out)?;
    match global.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["method", "beta", "se", "hr", "ci_lo", "ci_hi", "converged"])?;
            for r in &rows {
                w.write_record([
                    r.method.to_string(),
                    cell(r.beta),
                    cell(r.se),
                    cell(r.hr),
                    cell(r.ci_lo),
                    cell(r.ci_hi),
                    r.converged.to_string(),
                ])?;
            }
            w.flush()?;
        }
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&rows)?)?,
    }
    out.flush()?;
    if rows.iter().all(|r| r.error.is_some()) {
        return Err(AllFailed.into());
    }
    Ok(())
}

fn replicate(global: &Global, pi2: Option<f64>, replications: usize, list: &str, rows: &Option<PathBuf>) -> Result<()> {
    if replications == 0 {
        return Err(Usage("--R must be at least 1".into()).into());
    }
    let sc = scenario(global, pi2)?;
    let mut opts = ReplicationOptions::new(methods(list)?, replications, global.seed.unwrap_or(0));
    opts.adjuster = adjuster(global)?;
    opts.threads = global.threads;
    let report = run_replications(&sc, &opts)?;
    for s in report.methods.iter().filter(|s| s.flagged) {
        eprintln!("warning: {} failed in {:.1}% of replications", s.method, 100.0 * s.fail_rate);
    }
    let mut out = output(&global.out)?;
    match global.format {
        Format::Csv => report.write_csv(&mut out)?,
        Format::Json => writeln!(out, "{}", report.to_json()?)?,
    }
    out.flush()?;
    if let Some(p) = rows {
        let f = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
        report.write_rows_csv(BufWriter::new(f))?;
    }
    Ok(())
}

fn design(global: &Global, pi2: Option<f64>, replications: usize) -> Result<()> {
    if replications == 0 {
        return Err(Usage("--R must be at least 1".into()).into());
    }
    let sc = scenario(global, pi2)?;
    let d = design_summary(&sc, replications, global.seed.unwrap_or(0), global.threads)?;
    let mut out = output(&global.out)?;
    match global.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.serialize(&d)?;
            w.flush()?;
        }
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&d)?)?,
    }
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if g.threads == Some(0) {
        bail!(Usage("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Simulate { pi2 } => simulate(g, *pi2),
        Command::Estimate { data, methods } => estimate_cmd(g, data, methods),
        Command::Replicate { pi2, replications, methods, rows } => replicate(g, *pi2, *replications, methods, rows),
        Command::Design { pi2, replications } => design(g, *pi2, *replications),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
