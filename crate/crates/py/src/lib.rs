//! Python bindings: simulation, bandwidth selection, the bootstrap tests and
//! Monte Carlo size studies.

use lrd_core::bootstrap::TrendKernel;
use lrd_core::sim::{d2_profile, FractionalType, MemoryProfile};
use lrd_core::tuning::{gcv_select_b, GcvOptions};
use lrd_core::{
    run_test as core_run_test, simulate_model, size_experiment as core_size, LrdError, Model, ModelKind,
    RegressionSample, SimulationSpec, TestConfig, TestKind,
};
use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn to_py(e: LrdError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_model(name: &str) -> PyResult<Model> {
    match name.to_ascii_uppercase().as_str() {
        "M0" => Ok(Model::M0),
        "M1" => Ok(Model::M1),
        "M2" => Ok(Model::M2),
        other => Err(PyValueError::new_err(format!("unknown model `{other}`"))),
    }
}

fn build_sample(y: Vec<f64>, covariates: Option<Vec<Vec<f64>>>) -> PyResult<RegressionSample> {
    match covariates {
        None => RegressionSample::trend(y).map_err(to_py),
        Some(rows) => {
            let n = rows.len();
            let k = rows.first().map_or(0, Vec::len);
            if k == 0 || rows.iter().any(|r| r.len() != k) {
                return Err(PyValueError::new_err("covariates must be a non-empty rectangular list of rows"));
            }
            let x = DMatrix::from_fn(n, k, |i, j| rows[i][j]);
            RegressionSample::new(y, &x).map_err(to_py)
        }
    }
}

/// One test's outcome.
#[pyclass(frozen, get_all, skip_from_py_object, module = "lrd")]
#[derive(Clone)]
pub struct TestResult {
    test: String,
    statistic: f64,
    p_value: f64,
    replicates: usize,
    seed: u64,
    b: f64,
    m: usize,
    tau: f64,
    eta: f64,
}

#[pymethods]
impl TestResult {
    /// Whether the short-memory null is rejected at `alpha`.
    fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }

    fn __repr__(&self) -> String {
        format!(
            "TestResult(test={:?}, statistic={}, p_value={}, b={}, m={}, tau={})",
            self.test, self.statistic, self.p_value, self.b, self.m, self.tau
        )
    }
}

/// GCV bandwidth and its search range.
#[pyclass(frozen, get_all, skip_from_py_object, module = "lrd")]
#[derive(Clone)]
pub struct Bandwidth {
    b: f64,
    c_hat: Option<f64>,
    lower: f64,
    upper: f64,
}

#[pymethods]
impl Bandwidth {
    fn __repr__(&self) -> String {
        format!("Bandwidth(b={}, lower={}, upper={})", self.b, self.lower, self.upper)
    }
}

/// Simulate a built-in model. Returns `(y, covariates)` with covariates as
/// rows, excluding the intercept.
#[pyfunction]
#[pyo3(signature = (model, n, d=0.0, seed=0, varying_memory=false, type_ii=false))]
fn simulate(
    model: &str,
    n: usize,
    d: f64,
    seed: u64,
    varying_memory: bool,
    type_ii: bool,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut spec = SimulationSpec::new(parse_model(model)?, n, d, seed);
    if varying_memory {
        spec.memory = MemoryProfile::TimeVarying(d2_profile);
    }
    if type_ii {
        spec.fractional_type = FractionalType::TypeII;
    }
    let sample = simulate_model(&spec).map_err(to_py)?;
    let x = sample.x();
    let rows = (0..sample.n()).map(|i| (1..sample.p()).map(|j| x[(i, j)]).collect()).collect();
    Ok((sample.y().to_vec(), rows))
}

/// GCV choice of the regression bandwidth.
#[pyfunction]
#[pyo3(signature = (y, covariates=None))]
fn select_bandwidth(y: Vec<f64>, covariates: Option<Vec<Vec<f64>>>) -> PyResult<Bandwidth> {
    let sample = build_sample(y, covariates)?;
    let sel = gcv_select_b(&sample, &GcvOptions::default()).map_err(to_py)?;
    Ok(Bandwidth {
        b: sel.b,
        c_hat: sel.c_hat,
        lower: sel.lower,
        upper: sel.upper,
    })
}

/// Run the bootstrap tests. Without covariates the trend model is used.
#[pyfunction]
#[pyo3(signature = (
    y, covariates=None, tests=None, replicates=2000, seed=0, b=None, m=None, tau=None, eta=None,
    mv_replicates=100, jackknife_trend_kernel=false, covariance="residual"
))]
#[allow(clippy::too_many_arguments)]
fn run_test(
    py: Python<'_>,
    y: Vec<f64>,
    covariates: Option<Vec<Vec<f64>>>,
    tests: Option<Vec<String>>,
    replicates: usize,
    seed: u64,
    b: Option<f64>,
    m: Option<usize>,
    tau: Option<f64>,
    eta: Option<f64>,
    mv_replicates: usize,
    jackknife_trend_kernel: bool,
    covariance: &str,
) -> PyResult<Vec<TestResult>> {
    let kind = if covariates.is_some() { ModelKind::Covariate } else { ModelKind::Trend };
    let sample = build_sample(y, covariates)?;
    let tests: Vec<TestKind> = match tests {
        None => TestKind::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|s| s.parse().map_err(|e: String| PyValueError::new_err(e)))
            .collect::<PyResult<_>>()?,
    };
    let config = TestConfig {
        b,
        m,
        tau,
        eta,
        replicates,
        mv_replicates,
        seed,
        trend_kernel: if jackknife_trend_kernel { TrendKernel::Jackknife } else { TrendKernel::Plain },
        covariance: covariance.parse().map_err(|e: String| PyValueError::new_err(e))?,
        gcv: GcvOptions::default(),
    };
    let reports = py.detach(|| core_run_test(&sample, kind, &tests, &config)).map_err(to_py)?;
    Ok(reports
        .into_iter()
        .map(|r| TestResult {
            test: r.test.name().to_string(),
            statistic: r.statistic,
            p_value: r.p_value,
            replicates: r.replicates,
            seed: r.seed,
            b: r.params.b,
            m: r.params.m,
            tau: r.params.tau,
            eta: r.params.eta,
        })
        .collect())
}

/// Null rejection rates at d = 0 as `(test, level, rate, half_width)` rows.
#[pyfunction]
#[pyo3(signature = (model, n=500, replications=300, replicates=500, seed=0))]
fn size_experiment(
    py: Python<'_>,
    model: &str,
    n: usize,
    replications: usize,
    replicates: usize,
    seed: u64,
) -> PyResult<Vec<(String, f64, f64, f64)>> {
    let model = parse_model(model)?;
    let report = py.detach(|| core_size(model, n, replications, replicates, seed)).map_err(to_py)?;
    Ok(report
        .rows
        .iter()
        .map(|r| (r.test.name().to_string(), r.level, r.rate, r.half_width))
        .collect())
}

#[pymodule]
fn lrd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<TestResult>()?;
    m.add_class::<Bandwidth>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(select_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(run_test, m)?)?;
    m.add_function(wrap_pyfunction!(size_experiment, m)?)?;
    Ok(())
}
