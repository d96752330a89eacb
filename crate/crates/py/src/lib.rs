//! Python bindings. Matrices cross the boundary as lists of rows;
//! verdicts and summaries as dicts.

use aqm2d_core::bessel_legendre::{bl_lower_bound as bl_bound, derivative_energy, PolyPath};
use aqm2d_core::lmi::Status;
use aqm2d_core::sim2d::summarize;
use aqm2d_core::{
    equilibrium, linearize, lmi, published as pubdata, BoundaryData, Ecn, GridSpec, Scenario,
    TauSensitivity,
};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Rows = Vec<Vec<f64>>;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(m: &DMatrix<f64>) -> Rows {
    aqm2d_core::matrix_serde::to_rows(m)
}

fn matrix(data: &Rows) -> PyResult<DMatrix<f64>> {
    let r = data.len();
    let c = data.first().map_or(0, Vec::len);
    aqm2d_core::matrix_serde::from_rows(r, c, data).map_err(err)
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Network and AQM parameters.
#[pyclass(name = "NetworkParams")]
struct PyParams(aqm2d_core::NetworkParams);

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (n_flows, lam, capacity, t_prop, q_ref, scenario = "A", ecn = "off"))]
    fn new(
        n_flows: f64,
        lam: f64,
        capacity: f64,
        t_prop: f64,
        q_ref: f64,
        scenario: &str,
        ecn: &str,
    ) -> PyResult<Self> {
        let scenario = match scenario {
            "A" | "a" => Scenario::A,
            "B" | "b" => Scenario::B,
            other => return Err(err(format!("unknown scenario {other:?}"))),
        };
        let ecn = match ecn {
            "on" => Ecn::On,
            "off" => Ecn::Off,
            other => return Err(err(format!("ecn must be 'on' or 'off', got {other:?}"))),
        };
        let p =
            aqm2d_core::NetworkParams::new(n_flows, lam, capacity, t_prop, q_ref, scenario, ecn);
        p.validate().map_err(err)?;
        Ok(Self(p))
    }

    #[staticmethod]
    fn capacity_from_bandwidth(bits_per_sec: f64, packet_bits: f64) -> f64 {
        aqm2d_core::NetworkParams::capacity_from_bandwidth(bits_per_sec, packet_bits)
    }

    #[getter]
    fn n_flows(&self) -> f64 {
        self.0.n_flows
    }

    #[getter]
    fn capacity(&self) -> f64 {
        self.0.capacity
    }

    fn rtt(&self, q: f64) -> f64 {
        self.0.rtt(q)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("NetworkParams({:?})", self.0)
    }
}

/// Operating point.
#[pyclass(name = "EquilibriumPoint")]
struct PyEquilibrium(aqm2d_core::EquilibriumPoint);

#[pymethods]
impl PyEquilibrium {
    #[getter]
    fn w_h(&self) -> f64 {
        self.0.w_h
    }
    #[getter]
    fn w_v(&self) -> f64 {
        self.0.w_v
    }
    #[getter]
    fn p(&self) -> f64 {
        self.0.p
    }
    #[getter]
    fn q_h(&self) -> f64 {
        self.0.q_h
    }
    #[getter]
    fn q_v(&self) -> f64 {
        self.0.q_v
    }
    #[getter]
    fn tau1(&self) -> f64 {
        self.0.tau1
    }
    #[getter]
    fn tau2(&self) -> f64 {
        self.0.tau2
    }

    /// `[W^h, q^h, W^v, q^v]`.
    fn state(&self) -> Vec<f64> {
        self.0.state().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("EquilibriumPoint({:?})", self.0)
    }
}

/// Roesser delay system `(A, A_tau, B, B_tau, tau1, tau2)`.
#[pyclass(name = "StateSpace2D")]
struct PyStateSpace(aqm2d_core::StateSpace2D);

#[pymethods]
impl PyStateSpace {
    #[new]
    #[pyo3(signature = (n_h, n_v, a, a_tau, b, b_tau, tau1, tau2))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n_h: usize,
        n_v: usize,
        a: Rows,
        a_tau: Rows,
        b: Rows,
        b_tau: Rows,
        tau1: f64,
        tau2: f64,
    ) -> PyResult<Self> {
        let n = n_h + n_v;
        let inputs = |m: &Rows| -> PyResult<DMatrix<f64>> {
            if m.iter().all(Vec::is_empty) {
                Ok(DMatrix::zeros(n, 0))
            } else {
                matrix(m)
            }
        };
        aqm2d_core::StateSpace2D::new(
            n_h,
            n_v,
            matrix(&a)?,
            matrix(&a_tau)?,
            inputs(&b)?,
            inputs(&b_tau)?,
            tau1,
            tau2,
        )
        .map(Self)
        .map_err(err)
    }

    #[getter]
    fn a(&self) -> Rows {
        rows(&self.0.a)
    }
    #[getter]
    fn a_tau(&self) -> Rows {
        rows(&self.0.a_tau)
    }
    #[getter]
    fn b(&self) -> Rows {
        rows(&self.0.b)
    }
    #[getter]
    fn b_tau(&self) -> Rows {
        rows(&self.0.b_tau)
    }
    #[getter]
    fn tau1(&self) -> f64 {
        self.0.tau1
    }
    #[getter]
    fn tau2(&self) -> f64 {
        self.0.tau2
    }
    #[getter]
    fn n_h(&self) -> usize {
        self.0.n_h
    }
    #[getter]
    fn n_v(&self) -> usize {
        self.0.n_v
    }

    fn closed_loop(&self, gain: Rows) -> PyResult<Self> {
        self.0.closed_loop(&matrix(&gain)?).map(Self).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(Self).map_err(err)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!(
            "StateSpace2D(n_h={}, n_v={}, m={}, tau1={}, tau2={})",
            self.0.n_h,
            self.0.n_v,
            self.0.m(),
            self.0.tau1,
            self.0.tau2
        )
    }
}

#[pyfunction]
fn solve_equilibrium(params: &PyParams) -> PyResult<PyEquilibrium> {
    equilibrium::solve_equilibrium(&params.0)
        .map(PyEquilibrium)
        .map_err(err)
}

/// Operating point from given `(W, p)` and optional delays.
#[pyfunction]
#[pyo3(signature = (params, w_h, p, w_v = None, tau1 = None, tau2 = None))]
fn equilibrium_override(
    params: &PyParams,
    w_h: f64,
    p: f64,
    w_v: Option<f64>,
    tau1: Option<f64>,
    tau2: Option<f64>,
) -> PyResult<PyEquilibrium> {
    let ov = equilibrium::EquilibriumOverride {
        w_h,
        w_v,
        p,
        tau1,
        tau2,
    };
    aqm2d_core::EquilibriumPoint::from_override(&params.0, &ov)
        .map(PyEquilibrium)
        .map_err(err)
}

#[pyfunction]
fn residual(eq: &PyEquilibrium, params: &PyParams) -> f64 {
    equilibrium::residual(&eq.0, &params.0)
}

/// Analytic linearization; `convention` is `"exact"` or `"inverted"`.
#[pyfunction]
#[pyo3(signature = (eq, params, convention = "exact"))]
fn jacobians(eq: &PyEquilibrium, params: &PyParams, convention: &str) -> PyResult<PyStateSpace> {
    let conv = match convention {
        "exact" => TauSensitivity::Exact,
        "inverted" => TauSensitivity::Inverted,
        other => return Err(err(format!("unknown convention {other:?}"))),
    };
    linearize::jacobians_with(&eq.0, &params.0, conv)
        .map(PyStateSpace)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (eq, params, step = 1e-5))]
fn fd_jacobians(eq: &PyEquilibrium, params: &PyParams, step: f64) -> PyResult<PyStateSpace> {
    linearize::fd_jacobians(&eq.0, &params.0, step)
        .map(PyStateSpace)
        .map_err(err)
}

fn options(balance: bool) -> lmi::AnalysisOptions {
    lmi::AnalysisOptions {
        balance,
        ..Default::default()
    }
}

/// Zero-input stability LMI. Returns the verdict as a dict.
#[pyfunction]
#[pyo3(signature = (ss, balance = true))]
fn analyze<'py>(py: Python<'py>, ss: &PyStateSpace, balance: bool) -> PyResult<Bound<'py, PyAny>> {
    let a = py
        .detach(|| lmi::analyze(&ss.0, &options(balance)))
        .map_err(err)?;
    to_py(py, &a.verdict)
}

/// Synthesis LMI. Returns `{"verdict": ..., "gain": rows or None}`.
#[pyfunction]
#[pyo3(signature = (ss, balance = true))]
fn synthesize<'py>(
    py: Python<'py>,
    ss: &PyStateSpace,
    balance: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let s = py
        .detach(|| lmi::synthesize(&ss.0, &options(balance)))
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("verdict", to_py(py, &s.verdict)?)?;
    out.set_item("gain", s.gain.as_ref().map(rows))?;
    Ok(out)
}

/// Linear grid simulation from constant boundary data. Returns the summary
/// dict with the decay profile under `"profile"`.
#[pyfunction]
#[pyo3(signature = (ss, boundary, h1, h2, m1, m2, gain = None, tail_fraction = 0.8, threshold = 1e-3))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    ss: &PyStateSpace,
    boundary: Vec<f64>,
    h1: f64,
    h2: f64,
    m1: usize,
    m2: usize,
    gain: Option<Rows>,
    tail_fraction: f64,
    threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    if boundary.len() != ss.0.n() {
        return Err(err(format!("boundary needs {} entries", ss.0.n())));
    }
    let k = gain.as_ref().map(matrix).transpose()?;
    let spec = GridSpec::new(h1, h2, m1, m2, ss.0.tau1, ss.0.tau2).map_err(err)?;
    let bdry = BoundaryData::from_state(&boundary, ss.0.n_h);
    let (summary, profile) = py
        .detach(|| {
            let traj = aqm2d_core::simulate_linear(&ss.0, k.as_ref(), &bdry, &spec)?;
            Ok::<_, aqm2d_core::Error>((
                summarize(&traj, tail_fraction, threshold),
                aqm2d_core::decay_profile(&traj),
            ))
        })
        .map_err(err)?;
    let out = to_py(py, &summary)?;
    out.set_item("profile", profile)?;
    Ok(out)
}

/// Right-hand side of the Bessel-Legendre inequality for the polynomial
/// path `sum_k coeffs[k] u^k`, together with the left-hand side.
#[pyfunction]
fn bessel_legendre_bound(
    coeffs: Vec<Vec<f64>>,
    z: Rows,
    a: f64,
    b: f64,
    order: usize,
) -> PyResult<(f64, f64)> {
    let path = PolyPath::new(coeffs.into_iter().map(DVector::from_vec).collect()).map_err(err)?;
    let z = matrix(&z)?;
    let lhs = derivative_energy(&path, &z, a, b).map_err(err)?;
    let rhs = bl_bound(&path, &z, a, b, order).map_err(err)?;
    Ok((lhs, rhs))
}

/// Published data of scenario `"A"` or `"B"`.
#[pyfunction]
fn published<'py>(py: Python<'py>, case: &str) -> PyResult<Bound<'py, PyDict>> {
    let c = match case {
        "A" | "a" => pubdata::scenario_a(),
        "B" | "b" => pubdata::scenario_b(),
        other => return Err(err(format!("unknown case {other:?}"))),
    };
    let eq =
        aqm2d_core::EquilibriumPoint::from_override(&c.params, &c.operating_point).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("params", PyParams(c.params))?;
    out.set_item("operating_point", PyEquilibrium(eq))?;
    out.set_item("system", PyStateSpace(c.system))?;
    out.set_item("gain", rows(&c.gain))?;
    out.set_item("x0", pubdata::X0.to_vec())?;
    Ok(out)
}

/// Status names used in verdict dicts.
#[pyfunction]
fn statuses() -> Vec<String> {
    [Status::Feasible, Status::Infeasible, Status::SolverUnknown]
        .iter()
        .map(|s| format!("{s:?}"))
        .collect()
}

#[pymodule]
fn aqm2d(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyEquilibrium>()?;
    m.add_class::<PyStateSpace>()?;
    m.add_function(wrap_pyfunction!(solve_equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(equilibrium_override, m)?)?;
    m.add_function(wrap_pyfunction!(residual, m)?)?;
    m.add_function(wrap_pyfunction!(jacobians, m)?)?;
    m.add_function(wrap_pyfunction!(fd_jacobians, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(bessel_legendre_bound, m)?)?;
    m.add_function(wrap_pyfunction!(published, m)?)?;
    m.add_function(wrap_pyfunction!(statuses, m)?)?;
    Ok(())
}
