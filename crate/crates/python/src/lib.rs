//! Python module `ltrc`: datasets, simulation designs, nuisance fits and
//! the ATE and CATE estimators.

use ltrc_core::ate::bootstrap_se;
use ltrc_core::cate::{LearnerConfig, LossKind, TuningConfig};
use ltrc_core::nuisance::NuisanceBundle;
use ltrc_core::operators::v_pair;
use ltrc_core::sim::bench::{run_ate_benchmark, table1_row, AteBenchOptions};
use ltrc_core::sim::{mc_true_theta_with_se, ScenarioSpec};
use ltrc_core::{crossfit_ate, crossfit_cate, fit_scheme_a, ipw_ate, solve_ate, AteResult, CateModel, Dataset, Error, NuisanceConfig, ObservedRecord, Transform};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Argument(_) | Error::Schema(_) | Error::Parse { .. } | Error::InvalidDataset { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn nu_of(s: &str) -> PyResult<Transform> {
    Transform::parse(s).map_err(py_err)
}

/// Observed left-truncated, right-censored records.
#[pyclass(name = "Dataset", module = "ltrc", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(q: Vec<f64>, x: Vec<f64>, delta: Vec<u8>, a: Vec<u8>, z: Vec<Vec<f64>>) -> PyResult<Self> {
        let n = q.len();
        if [x.len(), delta.len(), a.len(), z.len()].iter().any(|&l| l != n) {
            return Err(PyValueError::new_err("q, x, delta, a and z must have the same length"));
        }
        let p = z.first().map_or(0, Vec::len);
        let records = (0..n).map(|i| ObservedRecord::new(q[i], x[i], delta[i], a[i], z[i].clone())).collect();
        let inner = Dataset::new(p, records);
        inner.ensure_valid().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, covariates=2))]
    fn from_csv(path: &str, covariates: usize) -> PyResult<Self> {
        Ok(Self { inner: ltrc_core::load_observed_csv(path, covariates).map_err(py_err)? })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        ltrc_core::write_observed_csv(path, &self.inner).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, p={}, events={})", self.inner.len(), self.inner.p, self.inner.event_count())
    }

    #[getter]
    fn q(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.q).collect()
    }

    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.x).collect()
    }

    #[getter]
    fn delta(&self) -> Vec<u8> {
        self.inner.records.iter().map(|r| r.delta).collect()
    }

    #[getter]
    fn a(&self) -> Vec<u8> {
        self.inner.records.iter().map(|r| r.a).collect()
    }

    #[getter]
    fn z(&self) -> Vec<Vec<f64>> {
        self.inner.records.iter().map(|r| r.z.clone()).collect()
    }

    /// Validation report as a JSON string.
    fn validate(&self) -> PyResult<String> {
        serde_json::to_string(&ltrc_core::validate(&self.inner)).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Fitted propensity, F, G and S_D.
#[pyclass(name = "Nuisances", module = "ltrc", frozen)]
struct PyNuisances {
    inner: NuisanceBundle,
}

#[pymethods]
impl PyNuisances {
    #[getter]
    fn trim_floor(&self) -> f64 {
        self.inner.trim_floor
    }

    fn propensity(&self, z: Vec<f64>) -> f64 {
        self.inner.pi.predict(&z)
    }

    fn f_cdf(&self, t: f64, a: u8, z: Vec<f64>) -> f64 {
        self.inner.f.eval(t, 0.0, a, &z)
    }

    fn g_cdf(&self, t: f64, a: u8, z: Vec<f64>) -> f64 {
        self.inner.g.eval(t, 0.0, a, &z)
    }

    fn sd_survival(&self, d: f64, q: f64, a: u8, z: Vec<f64>) -> f64 {
        self.inner.sd.eval(d, q, a, &z)
    }

    /// `(V(nu), V(1))` for every record of `data`.
    #[pyo3(signature = (data, nu="surv:3"))]
    fn operator_values(&self, data: &PyDataset, nu: &str) -> PyResult<Vec<(f64, f64)>> {
        let nu = nu_of(nu)?;
        data.inner
            .records
            .iter()
            .map(|r| v_pair(r, &self.inner, &nu).map(|(a, b, _)| (a, b)).map_err(py_err))
            .collect()
    }
}

#[pyclass(name = "AteResult", module = "ltrc", frozen, get_all)]
struct PyAteResult {
    theta_hat: f64,
    se_model: f64,
    se_boot: Option<f64>,
    ci_lower: f64,
    ci_upper: f64,
    method: String,
    trim_event_count: usize,
    n: usize,
}

impl From<AteResult> for PyAteResult {
    fn from(r: AteResult) -> Self {
        Self {
            theta_hat: r.theta_hat,
            se_model: r.se_model,
            se_boot: r.se_boot,
            ci_lower: r.ci_lower,
            ci_upper: r.ci_upper,
            method: format!("{:?}", r.method),
            trim_event_count: r.trim_event_count,
            n: r.n,
        }
    }
}

#[pymethods]
impl PyAteResult {
    fn __repr__(&self) -> String {
        format!("AteResult(theta_hat={:.6}, se={:.6}, ci=({:.6}, {:.6}))", self.theta_hat, self.se_model, self.ci_lower, self.ci_upper)
    }
}

/// A fitted CATE model.
#[pyclass(name = "CateModel", module = "ltrc", frozen)]
struct PyCateModel {
    inner: CateModel,
    #[pyo3(get)]
    dropped: usize,
}

#[pymethods]
impl PyCateModel {
    fn predict(&self, z: Vec<f64>) -> f64 {
        self.inner.predict_z(&z)
    }

    fn predict_many(&self, z: Vec<Vec<f64>>) -> Vec<f64> {
        z.iter().map(|v| self.inner.predict_z(v)).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self { inner: CateModel::from_json(s).map_err(py_err)?, dropped: 0 })
    }
}

fn nuisance_config(label: &str, seed: u64) -> PyResult<NuisanceConfig> {
    let mut c = NuisanceConfig::from_label(label).map_err(py_err)?;
    c.seed = seed;
    Ok(c)
}

/// Draw `n` observed records from a simulation design (`ate`, `i`, `ii`, `iii`).
#[pyfunction]
#[pyo3(signature = (n, scenario="ate", seed=1))]
fn simulate(n: usize, scenario: &str, seed: u64) -> PyResult<PyDataset> {
    let spec = ScenarioSpec::parse(scenario).map_err(py_err)?;
    Ok(PyDataset { inner: spec.gen_sample(n, seed).map_err(py_err)?.1 })
}

#[pyfunction]
#[pyo3(signature = (data, nuisance="Cox1/lgs1-Cox1-Cox1", trim_floor=0.1, seed=0))]
fn fit_nuisances(py: Python<'_>, data: &PyDataset, nuisance: &str, trim_floor: f64, seed: u64) -> PyResult<PyNuisances> {
    let cfg = nuisance_config(nuisance, seed)?;
    let inner = py.detach(|| fit_scheme_a(&data.inner, &cfg, trim_floor)).map_err(py_err)?;
    Ok(PyNuisances { inner })
}

/// Average treatment effect with `estimator` one of `dr`, `dr_crossfit`, `ipw`.
#[pyfunction]
#[pyo3(signature = (data, nuisance="Cox1/lgs1-Cox1-Cox1", nu="surv:3", estimator="dr", folds=5, trim_floor=0.1, seed=1, bootstrap=0))]
#[allow(clippy::too_many_arguments)]
fn estimate_ate(py: Python<'_>, data: &PyDataset, nuisance: &str, nu: &str, estimator: &str, folds: usize, trim_floor: f64, seed: u64, bootstrap: usize) -> PyResult<PyAteResult> {
    let nu = nu_of(nu)?;
    let cfg = nuisance_config(nuisance, seed)?;
    let run = |d: &Dataset| -> ltrc_core::Result<AteResult> {
        match estimator {
            "dr" => solve_ate(d, &fit_scheme_a(d, &cfg, trim_floor)?, &nu),
            "dr_crossfit" => crossfit_ate(d, folds, &cfg, &nu, trim_floor, seed),
            "ipw" => ipw_ate(d, &fit_scheme_a(d, &cfg, trim_floor)?, &nu),
            other => Err(Error::Argument(format!("unknown estimator `{other}`; expected dr, dr_crossfit or ipw"))),
        }
    };
    let r = py
        .detach(|| {
            let mut r = run(&data.inner)?;
            if bootstrap > 0 {
                r.se_boot = Some(bootstrap_se(&data.inner, |d| run(d).map(|r| r.theta_hat), bootstrap, seed)?.se);
            }
            Ok(r)
        })
        .map_err(py_err)?;
    Ok(r.into())
}

/// Doubly robust ATE with already fitted nuisances.
#[pyfunction]
#[pyo3(signature = (data, nuisances, nu="surv:3"))]
fn solve_ate_with(data: &PyDataset, nuisances: &PyNuisances, nu: &str) -> PyResult<PyAteResult> {
    Ok(solve_ate(&data.inner, &nuisances.inner, &nu_of(nu)?).map_err(py_err)?.into())
}

/// Cross-fitted CATE with loss `ltrcR`, `ltrcDR` or `ipwS`.
#[pyfunction]
#[pyo3(signature = (data, loss="ltrcR", nuisance="pCox/gbm-pCox-pCox", nu="log", folds=5, trim_floor=0.1, seed=1, n_search=50, max_trees=1000, ridge=None))]
#[allow(clippy::too_many_arguments)]
fn estimate_cate(
    py: Python<'_>,
    data: &PyDataset,
    loss: &str,
    nuisance: &str,
    nu: &str,
    folds: usize,
    trim_floor: f64,
    seed: u64,
    n_search: usize,
    max_trees: usize,
    ridge: Option<f64>,
) -> PyResult<PyCateModel> {
    let loss = LossKind::parse(loss).map_err(py_err)?;
    let nu = nu_of(nu)?;
    let cfg = nuisance_config(nuisance, seed)?;
    let learner = match ridge {
        Some(r) => LearnerConfig::RidgeLinear { ridge: r },
        None => LearnerConfig::BoostedTrees { params: None, tuning: TuningConfig { n_search, max_trees, ..TuningConfig::default() } },
    };
    let fit = py.detach(|| crossfit_cate(&data.inner, loss, &cfg, &learner, folds, &nu, trim_floor, seed)).map_err(py_err)?;
    Ok(PyCateModel { inner: fit.model, dropped: fit.dropped })
}

/// True CATE of a simulation scenario at `z`.
#[pyfunction]
fn true_tau(scenario: &str, z: Vec<f64>) -> PyResult<f64> {
    let spec = ScenarioSpec::parse(scenario).map_err(py_err)?;
    if !spec.kind.is_cate() {
        return Err(PyValueError::new_err("true_tau needs scenario i, ii or iii"));
    }
    Ok(spec.tau(&z))
}

/// Monte Carlo full-data contrast and its standard error.
#[pyfunction]
#[pyo3(signature = (nu="surv:3", n_mc=1_000_000, seed=1, scenario="ate"))]
fn mc_true_theta(py: Python<'_>, nu: &str, n_mc: usize, seed: u64, scenario: &str) -> PyResult<(f64, f64)> {
    let spec = ScenarioSpec::parse(scenario).map_err(py_err)?;
    let nu = nu_of(nu)?;
    if n_mc < 100_000 {
        return Err(PyValueError::new_err("n_mc must be at least 1e5"));
    }
    Ok(py.detach(|| mc_true_theta_with_se(&spec, &nu, n_mc, seed)))
}

/// Replicate rows (1-15) of the ATE table; returns the result as JSON.
#[pyfunction]
#[pyo3(signature = (rows, n=1000, reps=200, seed=1))]
fn bench_ate(py: Python<'_>, rows: Vec<usize>, n: usize, reps: usize, seed: u64) -> PyResult<String> {
    let specs = rows.iter().map(|&i| table1_row(i)).collect::<ltrc_core::Result<Vec<_>>>().map_err(py_err)?;
    let spec = ScenarioSpec::parse("ate").map_err(py_err)?;
    let b = py.detach(|| run_ate_benchmark(&spec, &specs, n, reps, seed, &AteBenchOptions::default())).map_err(py_err)?;
    serde_json::to_string(&b).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn ltrc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyNuisances>()?;
    m.add_class::<PyAteResult>()?;
    m.add_class::<PyCateModel>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_nuisances, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_ate, m)?)?;
    m.add_function(wrap_pyfunction!(solve_ate_with, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_cate, m)?)?;
    m.add_function(wrap_pyfunction!(true_tau, m)?)?;
    m.add_function(wrap_pyfunction!(mc_true_theta, m)?)?;
    m.add_function(wrap_pyfunction!(bench_ate, m)?)?;
    Ok(())
}
