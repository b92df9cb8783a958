//! Python bindings: scenarios, simulated trials, single-dataset estimation and
//! replication studies.

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use tsm_core::adjust::{estimate as estimate_one, AdjusterConfig, MethodId};
use tsm_core::harness::{design_summary, load_scenario, parse_scenario, run_replications, ReplicationOptions};
use tsm_core::hazard::{marginal_survival as marginal, CrossoverKind};
use tsm_core::rng::rng_from_seed;
use tsm_core::simulate::{read_records_csv, simulate_trial, write_records_csv};
use tsm_core::{CrossoverScenario, FitResult, PatientRecord, PiecewiseHazard, TsmError};

fn err(e: TsmError) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn from_json<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn adjuster(config: Option<&str>) -> PyResult<AdjusterConfig> {
    let cfg: AdjusterConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(json_err)?,
        None => AdjusterConfig::default(),
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

fn methods(list: &str) -> PyResult<Vec<MethodId>> {
    MethodId::parse_list(list).map_err(err)
}

/// Piecewise-constant hazard on `[cuts[j], cuts[j+1])`.
#[pyclass(name = "Hazard", module = "tsm", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyHazard(PiecewiseHazard);

#[pymethods]
impl PyHazard {
    #[new]
    fn new(cuts: Vec<f64>, rates: Vec<f64>) -> PyResult<Self> {
        PiecewiseHazard::new(cuts, rates).map(Self).map_err(err)
    }

    #[getter]
    fn cuts(&self) -> Vec<f64> {
        self.0.cuts().to_vec()
    }

    #[getter]
    fn rates(&self) -> Vec<f64> {
        self.0.rates().to_vec()
    }

    fn cumulative(&self, t: f64) -> f64 {
        self.0.cumulative(t)
    }

    fn survival(&self, t: f64) -> PyResult<f64> {
        self.0.survival(t).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Hazard(cuts={:?}, rates={:?})", self.0.cuts(), self.0.rates())
    }
}

/// Marginal survival `P(T > t)` of the three-state model with a Markov or
/// semi-Markov post-crossover hazard.
#[pyfunction]
#[pyo3(signature = (lambda1, lambda3, post, t, semi_markov = true))]
fn marginal_survival(
    lambda1: &PyHazard,
    lambda3: &PyHazard,
    post: &PyHazard,
    t: f64,
    semi_markov: bool,
) -> PyResult<f64> {
    let kind = if semi_markov {
        CrossoverKind::SemiMarkov { hazard: post.0.clone() }
    } else {
        CrossoverKind::Markov { hazard: post.0.clone() }
    };
    marginal(&lambda1.0, &lambda3.0, &kind, t).map_err(err)
}

#[pyclass(name = "Scenario", module = "tsm", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario(CrossoverScenario);

#[pymethods]
impl PyScenario {
    /// Built-in preset (`exp1-moderate`, `exp1-low`, `exp1-high`) or scenario file.
    #[staticmethod]
    #[pyo3(signature = (spec, pi2 = None))]
    fn load(spec: &str, pi2: Option<f64>) -> PyResult<Self> {
        let mut sc = load_scenario(spec).map_err(err)?;
        if let Some(p) = pi2 {
            sc.pi2 = p;
        }
        sc.validate().map_err(err)?;
        Ok(Self(sc))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        parse_scenario(text).map(Self).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.0).map_err(json_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }

    #[getter]
    fn pi2(&self) -> f64 {
        self.0.pi2
    }

    #[setter]
    fn set_pi2(&mut self, pi2: f64) -> PyResult<()> {
        let mut sc = self.0.clone();
        sc.pi2 = pi2;
        sc.validate().map_err(err)?;
        self.0 = sc;
        Ok(())
    }

    #[getter]
    fn hr_true(&self) -> Option<f64> {
        self.0.hr_true
    }

    #[getter]
    fn readout_time(&self) -> f64 {
        self.0.readout_time
    }

    #[getter]
    fn analysis_cuts(&self) -> Vec<f64> {
        self.0.estimation_cuts()
    }

    /// One simulated trial; the same seed gives the same patients.
    #[pyo3(signature = (seed = None))]
    fn simulate(&self, seed: Option<u64>) -> PyResult<PyTrial> {
        let mut rng = rng_from_seed(seed.unwrap_or(self.0.seed));
        simulate_trial(&self.0, &mut rng).map(PyTrial).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Scenario(name={:?}, pi2={})", self.0.name, self.0.pi2)
    }
}

/// Patient records of one trial.
#[pyclass(name = "Trial", module = "tsm", frozen)]
struct PyTrial(Vec<PatientRecord>);

#[pymethods]
impl PyTrial {
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        read_records_csv(text.as_bytes()).map(Self).map_err(err)
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &self.0).map_err(err)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Records as a list of dicts.
    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        from_json(py, &serde_json::to_string(&self.0).map_err(json_err)?)
    }

    #[getter]
    fn n_switched(&self) -> usize {
        self.0.iter().filter(|r| r.switched).count()
    }

    #[getter]
    fn n_events(&self) -> usize {
        self.0.iter().filter(|r| r.event).count()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Estimate of the log hazard ratio of treatment with a Wald interval.
#[pyclass(name = "Fit", module = "tsm", frozen)]
struct PyFit {
    method: MethodId,
    fit: FitResult,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn method(&self) -> &'static str {
        self.method.as_str()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.fit.beta[0]
    }

    #[getter]
    fn se(&self) -> f64 {
        self.fit.se[0]
    }

    #[getter]
    fn hr(&self) -> f64 {
        self.fit.hr()
    }

    /// 95% interval on the hazard-ratio scale.
    #[getter]
    fn ci(&self) -> (f64, f64) {
        self.fit.hr_ci()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.fit.converged
    }

    #[getter]
    fn notes(&self) -> Vec<String> {
        self.fit.notes.clone()
    }

    fn __repr__(&self) -> String {
        let (lo, hi) = self.fit.hr_ci();
        format!("Fit(method={}, hr={:.4}, ci=({lo:.4}, {hi:.4}))", self.method, self.fit.hr())
    }
}

/// Fits one estimator. `config` is adjuster JSON; `scenario` supplies the analysis
/// grid and readout time when the config leaves them unset.
#[pyfunction]
#[pyo3(signature = (trial, method, config = None, scenario = None, seed = 0))]
fn estimate(
    trial: &PyTrial,
    method: &str,
    config: Option<&str>,
    scenario: Option<&PyScenario>,
    seed: u64,
) -> PyResult<PyFit> {
    let method: MethodId = method.parse().map_err(err)?;
    let mut cfg = adjuster(config)?;
    if let Some(sc) = scenario {
        cfg.cuts.get_or_insert_with(|| sc.0.estimation_cuts());
        cfg.rpsft.readout_time.get_or_insert(sc.0.readout_time);
    }
    let fit = estimate_one(method, &trial.0, &cfg, seed).map_err(err)?;
    Ok(PyFit { method, fit })
}

/// Replication study; returns the report as nested dicts.
#[pyfunction]
#[pyo3(signature = (scenario, replications, methods_list = "all", seed = 0, config = None, threads = None))]
fn replicate<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    replications: usize,
    methods_list: &str,
    seed: u64,
    config: Option<&str>,
    threads: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut opts = ReplicationOptions::new(methods(methods_list)?, replications, seed);
    opts.adjuster = adjuster(config)?;
    opts.threads = threads;
    let sc = scenario.0.clone();
    let report = py.detach(move || run_replications(&sc, &opts)).map_err(err)?;
    from_json(py, &report.to_json().map_err(err)?)
}

/// Working hazard ratio, no-crossover hazard ratio, log-rank power and censoring.
#[pyfunction]
#[pyo3(signature = (scenario, replications = 2000, seed = 0, threads = None))]
fn design<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    replications: usize,
    seed: u64,
    threads: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let sc = scenario.0.clone();
    let d = py.detach(move || design_summary(&sc, replications, seed, threads)).map_err(err)?;
    from_json(py, &serde_json::to_string(&d).map_err(json_err)?)
}

#[pymodule]
fn tsm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHazard>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrial>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(marginal_survival, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(replicate, m)?)?;
    m.add_function(wrap_pyfunction!(design, m)?)?;
    m.add("METHODS", MethodId::ALL.map(MethodId::as_str).to_vec())?;
    Ok(())
}
