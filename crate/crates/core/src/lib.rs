//! Two-dimensional fluid model of TCP/AQM congestion control.
//!
//! The TCP window and router queue evolve on separate time axes `t1`
//! (source) and `t2` (router). This crate evaluates the nonlinear model,
//! computes operating points, linearizes to a Roesser delay system, tests
//! stability and synthesizes state feedback with Bessel-Legendre
//! Lyapunov-Krasovskii LMIs, and simulates the result on a 2D grid.

// Links the system OpenBLAS used by the SDP backend.
use openblas_src as _;

pub mod bessel_legendre;
pub mod equilibrium;
pub mod error;
pub mod linearize;
pub mod lmi;
pub mod matrix_serde;
pub mod model;
pub mod published;
pub mod sim2d;

pub use equilibrium::{residual, solve_equilibrium, EquilibriumOverride, EquilibriumPoint};
pub use error::{Error, Result};
pub use linearize::{
    diff_report, diff_report_flagged, fd_jacobians, jacobians, jacobians_with, DiffReport,
    StateSpace2D, TauSensitivity,
};
pub use lmi::{
    analyze, build_theorem1, build_theorem2, extract_gain, solve, synthesize, AnalysisOptions,
    G1Form, LmiProblem, StabilityVerdict, Status,
};
pub use model::{Derivative4, Dim, Ecn, ModelPoint, NetworkParams, Scenario};
pub use sim2d::{
    decay_profile, simulate_linear, simulate_nonlinear, BoundaryData, GridSpec, Trajectory2D,
};
