//! Steady states of the fluid model.
//!
//! Queues are pinned at the AQM reference wherever the steady-state
//! equations leave them free. In scenario B the two window equations only
//! agree at `W^h = 1`; the horizontal queue then follows from its own rate
//! balance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rhs_all, Ecn, ModelPoint, NetworkParams, Scenario};

pub const FIXED_POINT_DAMPING: f64 = 0.5;
pub const FIXED_POINT_MAX_ITER: usize = 10_000;
pub const FIXED_POINT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumPoint {
    pub w_h: f64,
    pub w_v: f64,
    pub p: f64,
    pub q_h: f64,
    pub q_v: f64,
    pub tau1: f64,
    pub tau2: f64,
}

/// Operating point supplied directly instead of solved for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumOverride {
    pub w_h: f64,
    /// Defaults to `w_h`.
    #[serde(default)]
    pub w_v: Option<f64>,
    pub p: f64,
    /// Sets `q_h = (tau1 - T_p) C`; otherwise `q_h = q_ref`.
    #[serde(default)]
    pub tau1: Option<f64>,
    #[serde(default)]
    pub tau2: Option<f64>,
}

impl EquilibriumPoint {
    pub fn from_override(params: &NetworkParams, ov: &EquilibriumOverride) -> Result<Self> {
        let w_v = ov.w_v.unwrap_or(ov.w_h);
        if !(ov.w_h > 0.0 && w_v > 0.0) {
            return Err(Error::Config("override windows must be positive".into()));
        }
        if !(ov.p > 0.0 && ov.p <= 1.0) {
            return Err(Error::Config(format!(
                "override probability {} outside (0, 1]",
                ov.p
            )));
        }
        let queue = |tau: Option<f64>| -> Result<(f64, f64)> {
            match tau {
                Some(t) => {
                    let q = (t - params.t_prop) * params.capacity;
                    if q < 0.0 || t <= 0.0 {
                        return Err(Error::Config(format!(
                            "override delay {t} below propagation delay"
                        )));
                    }
                    Ok((q, t))
                }
                None => {
                    let t = params.rtt(params.q_ref);
                    if t <= 0.0 {
                        return Err(Error::Degenerate("zero round-trip time".into()));
                    }
                    Ok((params.q_ref, t))
                }
            }
        };
        let (q_h, tau1) = queue(ov.tau1)?;
        let (q_v, tau2) = queue(ov.tau2)?;
        Ok(Self {
            w_h: ov.w_h,
            w_v,
            p: ov.p,
            q_h,
            q_v,
            tau1,
            tau2,
        })
    }

    pub fn model_point(&self) -> ModelPoint {
        ModelPoint {
            w_h: self.w_h,
            w_h_del: self.w_h,
            w_v: self.w_v,
            q_h: self.q_h,
            q_h_del: self.q_h,
            q_v: self.q_v,
            p_v: self.p,
            p_v_del: self.p,
            tau2: self.tau2,
        }
    }

    /// State vector `[W^h, q^h, W^v, q^v]`.
    pub fn state(&self) -> [f64; 4] {
        [self.w_h, self.q_h, self.w_v, self.q_v]
    }
}

pub fn solve_equilibrium(params: &NetworkParams) -> Result<EquilibriumPoint> {
    params.validate()?;
    let tau = params.rtt(params.q_ref);
    if tau <= 0.0 {
        return Err(Error::Degenerate(format!(
            "round-trip time is zero (q_ref = {}, t_prop = {})",
            params.q_ref, params.t_prop
        )));
    }
    let n = params.n_flows;
    let lam = params.lambda;
    let c = params.capacity;
    match params.scenario {
        Scenario::A => {
            let (w, p) = match params.ecn {
                Ecn::On => {
                    let w = tau * c / n;
                    (w, 2.0 * n / (2.0 * n + lam * w))
                }
                Ecn::Off => scenario_a_off(n, lam, tau * c / n)?,
            };
            Ok(EquilibriumPoint {
                w_h: w,
                w_v: w,
                p,
                q_h: params.q_ref,
                q_v: params.q_ref,
                tau1: tau,
                tau2: tau,
            })
        }
        Scenario::B => {
            let w_h = 1.0;
            let p = 2.0 * n * n / (2.0 * n * n + lam * w_h * w_h);
            let admitted = match params.ecn {
                Ecn::On => 1.0,
                Ecn::Off => 1.0 - p,
            };
            let tau1 = n * w_h * admitted / c;
            let q_h = (tau1 - params.t_prop) * c;
            if q_h < 0.0 {
                return Err(Error::Domain(format!(
                    "scenario B has no nonnegative horizontal queue: rate balance needs tau1 = {tau1:e} s below t_prop = {:e} s",
                    params.t_prop
                )));
            }
            if tau1 <= 0.0 {
                return Err(Error::Degenerate("zero horizontal round-trip time".into()));
            }
            let w_v = tau * c / (n * admitted);
            Ok(EquilibriumPoint {
                w_h,
                w_v,
                p,
                q_h,
                q_v: params.q_ref,
                tau1,
                tau2: tau,
            })
        }
    }
}

/// Damped iteration on `p -> 2N / (2N + lambda W(p))` with
/// `W(p) = a / (1 - p)`. The undamped map has slope `p` at its fixed point.
fn scenario_a_off(n: f64, lam: f64, a: f64) -> Result<(f64, f64)> {
    let window = |p: f64| a / (1.0 - p);
    let target = |p: f64| 2.0 * n / (2.0 * n + lam * window(p));
    let mut p = 0.5;
    let mut res = f64::INFINITY;
    for _ in 0..FIXED_POINT_MAX_ITER {
        let next = target(p);
        res = (next - p).abs();
        if res <= FIXED_POINT_TOL {
            let p = next;
            return Ok((window(p), p));
        }
        p = (1.0 - FIXED_POINT_DAMPING) * p + FIXED_POINT_DAMPING * next;
    }
    Err(Error::NonConvergence {
        iterations: FIXED_POINT_MAX_ITER,
        residual: res,
    })
}

/// Largest right-hand side magnitude at `eq` with delayed values set to
/// current ones. Domain errors give infinity.
pub fn residual(eq: &EquilibriumPoint, params: &NetworkParams) -> f64 {
    match rhs_all(&eq.model_point(), params) {
        Ok(d) if d.max_abs().is_finite() => d.max_abs(),
        _ => f64::INFINITY,
    }
}
