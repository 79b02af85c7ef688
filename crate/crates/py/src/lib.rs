//! Python bindings. Matrices cross the boundary as lists of rows; run
//! metadata and reports come back as plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use asynclqr::fleet::{self, HeterogeneityRadii};
use asynclqr::harness::config::{ModeKind, NominalSource, Overrides, Preset, ZO_EXPLORATORY_REDRAWS};
use asynclqr::harness::summary::summarize_artifacts;
use asynclqr::harness::{self, DEFAULT_THRESHOLD};
use asynclqr::lqr::{self, InitialStateSpec, PlantModel};
use asynclqr::zo::ZoConfig;
use asynclqr::{matops, nominal, Error, Mat};

type Rows = Vec<Vec<f64>>;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidConfig { .. } | Error::DimensionMismatch(_) | Error::Malformed(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn mat(rows: Rows) -> PyResult<Mat> {
    Mat::from_rows(&rows).map_err(to_py)
}

fn json<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn init_for(n_x: usize, sigma0: Option<Rows>) -> PyResult<InitialStateSpec> {
    match sigma0 {
        None => Ok(InitialStateSpec::identity(n_x)),
        Some(rows) => {
            let sigma0 = mat(rows)?;
            let mu_lower = sigma0.symmetric_eigenvalues().first().copied().unwrap_or(0.0);
            let spec = InitialStateSpec { sigma0, mu_lower };
            spec.validate().map_err(to_py)?;
            Ok(spec)
        }
    }
}

/// A linear system `x⁺ = Ax + Bu` with stage cost `xᵀQx + uᵀRu`.
#[pyclass(name = "Plant", module = "asynclqr_py")]
struct PyPlant {
    inner: PlantModel,
    init: InitialStateSpec,
}

#[pymethods]
impl PyPlant {
    #[new]
    #[pyo3(signature = (a, b, q, r, sigma0 = None))]
    fn new(a: Rows, b: Rows, q: Rows, r: Rows, sigma0: Option<Rows>) -> PyResult<Self> {
        let inner = PlantModel::new(0, mat(a)?, mat(b)?, mat(q)?, mat(r)?).map_err(to_py)?;
        let init = init_for(inner.n_x(), sigma0)?;
        Ok(PyPlant { inner, init })
    }

    /// The built-in four-state, two-input plant.
    #[staticmethod]
    fn nominal() -> Self {
        PyPlant {
            inner: nominal::plant(),
            init: InitialStateSpec::identity(nominal::N_X),
        }
    }

    #[getter]
    fn a(&self) -> Rows {
        self.inner.a.to_rows()
    }

    #[getter]
    fn b(&self) -> Rows {
        self.inner.b.to_rows()
    }

    #[getter]
    fn q(&self) -> Rows {
        self.inner.q.to_rows()
    }

    #[getter]
    fn r(&self) -> Rows {
        self.inner.r.to_rows()
    }

    fn cost(&self, k: Rows) -> PyResult<f64> {
        lqr::lqr_cost(&self.inner, &mat(k)?, &self.init).map_err(to_py)
    }

    fn gradient(&self, k: Rows) -> PyResult<Rows> {
        lqr::analytic_gradient(&self.inner, &mat(k)?, &self.init)
            .map(|g| g.to_rows())
            .map_err(to_py)
    }

    /// Returns `(P*, K*, J*)`.
    fn optimum(&self) -> PyResult<(Rows, Rows, f64)> {
        let opt = lqr::optimum(&self.inner, &self.init).map_err(to_py)?;
        Ok((opt.p_star.to_rows(), opt.k_star.to_rows(), opt.cost))
    }

    /// Two-point zeroth-order gradient estimate; equal keys give equal estimates.
    #[pyo3(signature = (k, radius, samples, key = 0))]
    fn zo_gradient(&self, k: Rows, radius: f64, samples: usize, key: u64) -> PyResult<Rows> {
        let est = asynclqr::zo::zo_estimate(&self.inner, &mat(k)?, &ZoConfig::new(radius, samples), &self.init, key)
            .map_err(to_py)?;
        Ok(est.grad_hat.to_rows())
    }

    fn is_stabilized_by(&self, k: Rows) -> PyResult<bool> {
        let k = mat(k)?;
        if k.shape() != (self.inner.n_u(), self.inner.n_x()) {
            return Err(PyValueError::new_err(format!("gain is {:?}", k.shape())));
        }
        Ok(matops::is_contractive(&self.inner.closed_loop(&k)))
    }

    fn __repr__(&self) -> String {
        format!("Plant(n_x={}, n_u={})", self.inner.n_x(), self.inner.n_u())
    }
}

/// Initial gain of the built-in plant.
#[pyfunction]
fn nominal_gain() -> Rows {
    nominal::initial_gain().to_rows()
}

/// Solves `X = FᵀXF + W`; raises if `F` is not contractive.
#[pyfunction]
fn solve_dlyap(f: Rows, w: Rows) -> PyResult<Rows> {
    matops::solve_dlyap(&mat(f)?, &mat(w)?)
        .map(|s| s.x.to_rows())
        .map_err(to_py)
}

/// Returns `(P, K)` of the discrete algebraic Riccati equation.
#[pyfunction]
fn solve_dare(a: Rows, b: Rows, q: Rows, r: Rows) -> PyResult<(Rows, Rows)> {
    let sol = matops::solve_dare(&mat(a)?, &mat(b)?, &mat(q)?, &mat(r)?).map_err(to_py)?;
    Ok((sol.p.to_rows(), sol.k.to_rows()))
}

/// Spectral radius diagnostic.
#[pyfunction]
fn spectral_radius(f: Rows) -> PyResult<f64> {
    Ok(matops::spectral_radius_estimate(&mat(f)?))
}

/// Generates a fleet around the built-in plant. `radius_scale` multiplies the
/// reference radii. Returns the fleet as a dict.
#[pyfunction]
#[pyo3(signature = (m, seed, radius_scale = 1.0))]
fn generate_fleet<'py>(py: Python<'py>, m: usize, seed: u64, radius_scale: f64) -> PyResult<Bound<'py, PyAny>> {
    let f = fleet::generate_fleet(
        &nominal::plant(),
        &nominal::initial_gain(),
        HeterogeneityRadii::REFERENCE.scaled(radius_scale),
        m,
        seed,
        InitialStateSpec::identity(nominal::N_X),
    )
    .map_err(to_py)?;
    json(py, &f)
}

/// Runs a preset and writes its artifacts into `out`. Returns the report.
#[pyfunction]
#[pyo3(signature = (preset, out, seed = 7, mode = None, agents = None, batch_size = None, eta = None,
                    radius_scale = None, tau_cap = None, iterations = None, zo_redraw = false, nominal = None,
                    full_scale = false))]
#[allow(clippy::too_many_arguments)]
fn run_preset<'py>(
    py: Python<'py>,
    preset: &str,
    out: PathBuf,
    seed: u64,
    mode: Option<&str>,
    agents: Option<usize>,
    batch_size: Option<usize>,
    eta: Option<f64>,
    radius_scale: Option<f64>,
    tau_cap: Option<usize>,
    iterations: Option<usize>,
    zo_redraw: bool,
    nominal: Option<PathBuf>,
    full_scale: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let preset: Preset = preset.parse().map_err(to_py)?;
    let ov = Overrides {
        mode: mode.map(str::parse::<ModeKind>).transpose().map_err(to_py)?,
        agents,
        batch_size,
        eta,
        radius_scale,
        tau_cap,
        zo_redraws: zo_redraw.then_some(ZO_EXPLORATORY_REDRAWS),
        iterations,
        nominal: nominal.map(NominalSource::Path),
        full_scale,
    };
    let runs = harness::run_preset(preset, seed, &ov, &out).map_err(to_py)?;
    let report = summarize_artifacts(&runs, DEFAULT_THRESHOLD).map_err(to_py)?;
    json(py, &report)
}

/// Summarizes the runs in a directory.
#[pyfunction]
#[pyo3(signature = (dir, threshold = DEFAULT_THRESHOLD))]
fn summarize_dir<'py>(py: Python<'py>, dir: PathBuf, threshold: f64) -> PyResult<Bound<'py, PyAny>> {
    let report = harness::summarize_dir(&dir, threshold).map_err(to_py)?;
    json(py, &report)
}

#[pymodule]
fn asynclqr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPlant>()?;
    m.add_function(wrap_pyfunction!(nominal_gain, m)?)?;
    m.add_function(wrap_pyfunction!(solve_dlyap, m)?)?;
    m.add_function(wrap_pyfunction!(solve_dare, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_radius, m)?)?;
    m.add_function(wrap_pyfunction!(generate_fleet, m)?)?;
    m.add_function(wrap_pyfunction!(run_preset, m)?)?;
    m.add_function(wrap_pyfunction!(summarize_dir, m)?)?;
    Ok(())
}
