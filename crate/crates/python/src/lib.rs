//! Python bindings: case parsing, power flow, load margins, pair copulas and
//! vines, design sampling, GP emulators and the full assessment.

use std::path::PathBuf;

use loadmargin::case_model::{parse_case, NetworkCase};
use loadmargin::cpf::{load_margin, trace_continuation, CpfOptions, GrowthDirection};
use loadmargin::gpe::{train, BasisSpec, KernelFamily, TrainOptions, TrainedEmulator};
use loadmargin::pipeline::{Scenario, ScenarioConfig};
use loadmargin::powerflow::{solve_nr, BusInjections, PowerFlowOptions, VoltageState};
use loadmargin::sampling::{lhs as lhs_design, mc_uniform as mc_design};
use loadmargin::uncertainty::{PairCopula, VineKind, VineSpec};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// A parsed MATPOWER network case.
#[pyclass(name = "Case", frozen)]
struct PyCase {
    inner: NetworkCase,
}

#[pymethods]
impl PyCase {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        parse_case(text).map(|inner| PyCase { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(value_err)?;
        Self::parse(&text)
    }

    #[getter]
    fn n_buses(&self) -> usize {
        self.inner.n_buses()
    }

    #[getter]
    fn bus_ids(&self) -> Vec<u32> {
        self.inner.buses().iter().map(|b| b.id).collect()
    }

    #[getter]
    fn base_mva(&self) -> f64 {
        self.inner.base_mva()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Newton power flow from the case's own voltages.
    fn solve_power_flow<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = &self.inner;
        let sol = solve_nr(c, &BusInjections::from_case(c), &VoltageState::from_case(c), &PowerFlowOptions::default())
            .map_err(runtime_err)?;
        let d = PyDict::new(py);
        d.set_item("v_mag", sol.v_mag)?;
        d.set_item("v_ang", sol.v_ang)?;
        d.set_item("converged", sol.converged)?;
        d.set_item("iterations", sol.iterations)?;
        d.set_item("max_mismatch", sol.max_mismatch)?;
        Ok(d)
    }

    /// Load margin at `target_bus` under system-wide ("system") or
    /// single-bus ("target") load growth.
    #[pyo3(signature = (target_bus, growth = "system"))]
    fn load_margin<'py>(&self, py: Python<'py>, target_bus: u32, growth: &str) -> PyResult<Bound<'py, PyDict>> {
        let c = &self.inner;
        let dir = match growth {
            "system" => GrowthDirection::system_wide(c),
            "target" => GrowthDirection::single_bus(c, target_bus),
            other => return Err(PyValueError::new_err(format!("unknown growth mode '{other}'"))),
        }
        .map_err(value_err)?;
        let trace = trace_continuation(c, &BusInjections::from_case(c), &dir, &CpfOptions::default())
            .map_err(runtime_err)?;
        let m = load_margin(&trace, &dir, target_bus).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("lambda_max", m.lambda_max)?;
        d.set_item("margin_mw", m.margin_mw)?;
        d.set_item("margin_at_bus_mw", m.margin_at_bus_mw)?;
        d.set_item("reliable", m.reliable)?;
        Ok(d)
    }
}

/// Bivariate copula: "independence", "gaussian", "frank" or "gumbel".
#[pyclass(name = "PairCopula", frozen)]
struct PyPairCopula {
    inner: PairCopula,
}

#[pymethods]
impl PyPairCopula {
    #[new]
    #[pyo3(signature = (family, parameter = None))]
    fn new(family: &str, parameter: Option<f64>) -> PyResult<Self> {
        PairCopula::from_parts(family, parameter).map(|inner| PyPairCopula { inner }).map_err(value_err)
    }

    fn cdf(&self, u: f64, v: f64) -> PyResult<f64> {
        self.inner.cdf(u, v).map_err(value_err)
    }

    fn density(&self, u: f64, v: f64) -> PyResult<f64> {
        self.inner.density(u, v).map_err(value_err)
    }

    /// Conditional cdf of u given v.
    fn h(&self, u: f64, v: f64) -> PyResult<f64> {
        self.inner.h(u, v).map_err(value_err)
    }

    fn h_inv(&self, w: f64, v: f64) -> PyResult<f64> {
        self.inner.h_inv(w, v).map_err(value_err)
    }

    fn kendall_tau(&self) -> f64 {
        self.inner.kendall_tau()
    }

    fn __repr__(&self) -> String {
        format!("PairCopula({:?})", self.inner)
    }
}

/// C-vine or D-vine copula.
#[pyclass(name = "Vine", frozen)]
struct PyVine {
    inner: VineSpec,
}

#[pymethods]
impl PyVine {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(|inner| PyVine { inner }).map_err(value_err)
    }

    #[staticmethod]
    #[pyo3(signature = (dim, kind = "d-vine"))]
    fn independence(dim: usize, kind: &str) -> PyResult<Self> {
        let kind = match kind {
            "c-vine" => VineKind::CVine,
            "d-vine" => VineKind::DVine,
            other => return Err(PyValueError::new_err(format!("unknown vine kind '{other}'"))),
        };
        VineSpec::independence(kind, dim).map(|inner| PyVine { inner }).map_err(value_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("vine serializes")
    }

    /// Independent uniforms to dependent uniforms.
    fn sample_inverse(&self, w: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.sample_inverse(&w).map_err(value_err)
    }

    /// Dependent uniforms back to independent uniforms.
    fn rosenblatt_forward(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.rosenblatt_forward(&u).map_err(value_err)
    }

    fn log_density(&self, u: Vec<f64>) -> PyResult<f64> {
        self.inner.log_density(&u).map_err(value_err)
    }
}

/// Latin hypercube design on the unit cube, as a list of rows.
#[pyfunction]
fn lhs(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
    lhs_design(n, p, seed).rows().map(<[f64]>::to_vec).collect()
}

/// Plain Monte Carlo design on the unit cube, as a list of rows.
#[pyfunction]
fn mc_uniform(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
    mc_design(n, p, seed).rows().map(<[f64]>::to_vec).collect()
}

fn parse_basis(s: &str) -> PyResult<BasisSpec> {
    match s {
        "constant" => Ok(BasisSpec::Constant),
        "linear" => Ok(BasisSpec::Linear),
        "pure_quadratic" => Ok(BasisSpec::PureQuadratic),
        other => Err(PyValueError::new_err(format!("unknown basis '{other}'"))),
    }
}

fn parse_kernel(s: &str) -> PyResult<KernelFamily> {
    match s {
        "squared_exponential" => Ok(KernelFamily::SquaredExponential),
        "exponential" => Ok(KernelFamily::Exponential),
        "rational_quadratic" => Ok(KernelFamily::rational_quadratic()),
        "matern32" => Ok(KernelFamily::Matern32),
        other => Err(PyValueError::new_err(format!("unknown kernel '{other}'"))),
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Ok(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
}

/// Trained Gaussian-process emulator.
#[pyclass(name = "Emulator", frozen)]
struct PyEmulator {
    inner: TrainedEmulator,
}

#[pymethods]
impl PyEmulator {
    #[staticmethod]
    #[pyo3(signature = (x, y, basis = "pure_quadratic", kernel = "matern32"))]
    fn train(py: Python<'_>, x: Vec<Vec<f64>>, y: Vec<f64>, basis: &str, kernel: &str) -> PyResult<Self> {
        let (basis, family) = (parse_basis(basis)?, parse_kernel(kernel)?);
        let xm = to_matrix(&x)?;
        let yv = DVector::from_vec(y);
        py.detach(|| train(&xm, &yv, basis, family, &TrainOptions::default()))
            .map(|inner| PyEmulator { inner })
            .map_err(runtime_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        TrainedEmulator::from_json(text).map(|inner| PyEmulator { inner }).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn log_likelihood(&self) -> f64 {
        self.inner.log_likelihood
    }

    fn predict_mean(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.check(&x)?;
        Ok(self.inner.predict_mean_rows(&x))
    }

    #[pyo3(signature = (x, include_nugget = true))]
    fn predict_variance(&self, x: Vec<Vec<f64>>, include_nugget: bool) -> PyResult<Vec<f64>> {
        self.check(&x)?;
        Ok(x.iter().map(|r| self.inner.predict_variance(r, include_nugget)).collect())
    }
}

impl PyEmulator {
    fn check(&self, x: &[Vec<f64>]) -> PyResult<()> {
        let p = self.inner.n_inputs();
        match x.iter().find(|r| r.len() != p) {
            Some(r) => Err(PyValueError::new_err(format!("expected {p} inputs per row, got {}", r.len()))),
            None => Ok(()),
        }
    }
}

/// Runs the assessment described by a scenario file. `method` is "gpe" or
/// "mc"; returns summary statistics, margins and timing.
#[pyfunction]
#[pyo3(signature = (config_path, method = "gpe", n_mc = None, seed = None))]
fn run_assessment<'py>(
    py: Python<'py>,
    config_path: PathBuf,
    method: &str,
    n_mc: Option<usize>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = ScenarioConfig::load(&config_path).map_err(value_err)?;
    if let Some(n) = n_mc {
        cfg.n_mc = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let gpe = match method {
        "gpe" => true,
        "mc" => false,
        other => return Err(PyValueError::new_err(format!("unknown method '{other}'"))),
    };
    let result = py
        .detach(|| {
            let s = Scenario::prepare(&cfg)?;
            if gpe { s.run_assessment() } else { s.run_mc_benchmark() }
        })
        .map_err(runtime_err)?;
    let d = PyDict::new(py);
    let st = &result.stats;
    d.set_item("method", result.method.tag())?;
    d.set_item("mean", st.mean)?;
    d.set_item("std", st.std)?;
    d.set_item("q05", st.q05)?;
    d.set_item("q50", st.q50)?;
    d.set_item("q95", st.q95)?;
    d.set_item("margins", result.margins.clone())?;
    d.set_item("pdf_points", result.pdf_points.clone())?;
    d.set_item("excluded", result.excluded_rows.len())?;
    d.set_item("evaluation_digest", result.evaluation_digest.clone())?;
    let t = PyDict::new(py);
    t.set_item("t_train_cpf", result.timing.t_train_cpf)?;
    t.set_item("t_gpe_train", result.timing.t_gpe_train)?;
    t.set_item("t_gpe_eval", result.timing.t_gpe_eval)?;
    t.set_item("t_mc_cpf", result.timing.t_mc_cpf)?;
    t.set_item("t_total", result.timing.t_total)?;
    d.set_item("timing", t)?;
    Ok(d)
}

#[pymodule]
fn loadmargin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCase>()?;
    m.add_class::<PyPairCopula>()?;
    m.add_class::<PyVine>()?;
    m.add_class::<PyEmulator>()?;
    m.add_function(wrap_pyfunction!(lhs, m)?)?;
    m.add_function(wrap_pyfunction!(mc_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(run_assessment, m)?)?;
    Ok(())
}
