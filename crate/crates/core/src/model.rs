//! Nonlinear fluid model of TCP/AQM on two time axes.
//!
//! `t1` is the TCP source time base (horizontal), `t2` the router time base
//! (vertical). Round-trip times are `q / C + T_p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// TCP operating regime of the sessions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Slow start or fast recovery.
    A,
    /// Congestion avoidance or fast recovery.
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ecn {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dim {
    H,
    V,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkParams {
    /// Number of TCP sessions `N`.
    pub n_flows: f64,
    /// Window distribution parameter, `1 <= lambda <= N`.
    pub lambda: f64,
    /// Link capacity in packets/s.
    pub capacity: f64,
    /// Propagation delay in seconds.
    pub t_prop: f64,
    /// Queue reference in packets.
    pub q_ref: f64,
    pub scenario: Scenario,
    pub ecn: Ecn,
    /// Packet size in bits; only used to convert a bandwidth given in bit/s.
    #[serde(default = "default_packet_bits")]
    pub packet_bits: f64,
    /// Window saturation used by the nonlinear simulator.
    #[serde(default)]
    pub w_max: Option<f64>,
    /// Buffer size used by the nonlinear simulator.
    #[serde(default)]
    pub q_max: Option<f64>,
}

fn default_packet_bits() -> f64 {
    1000.0
}

impl NetworkParams {
    pub fn new(
        n_flows: f64,
        lambda: f64,
        capacity: f64,
        t_prop: f64,
        q_ref: f64,
        scenario: Scenario,
        ecn: Ecn,
    ) -> Self {
        Self {
            n_flows,
            lambda,
            capacity,
            t_prop,
            q_ref,
            scenario,
            ecn,
            packet_bits: default_packet_bits(),
            w_max: None,
            q_max: None,
        }
    }

    /// Capacity in packets/s for a bandwidth in bit/s.
    pub fn capacity_from_bandwidth(bits_per_sec: f64, packet_bits: f64) -> f64 {
        bits_per_sec / packet_bits
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [
            self.n_flows,
            self.lambda,
            self.capacity,
            self.t_prop,
            self.q_ref,
            self.packet_bits,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Config("non-finite network parameter".into()));
        }
        if self.n_flows < 1.0 {
            return Err(Error::Config(format!(
                "n_flows must be >= 1, got {}",
                self.n_flows
            )));
        }
        if self.lambda < 1.0 || self.lambda > self.n_flows {
            return Err(Error::Config(format!(
                "lambda must lie in [1, n_flows], got {} with n_flows {}",
                self.lambda, self.n_flows
            )));
        }
        if self.capacity <= 0.0 {
            return Err(Error::Config(format!(
                "capacity must be positive, got {}",
                self.capacity
            )));
        }
        if self.t_prop < 0.0 || self.q_ref < 0.0 {
            return Err(Error::Config("t_prop and q_ref must be nonnegative".into()));
        }
        if self.packet_bits <= 0.0 {
            return Err(Error::Config("packet_bits must be positive".into()));
        }
        for (name, v) in [("w_max", self.w_max), ("q_max", self.q_max)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::Config(format!("{name} must be positive")));
                }
            }
        }
        Ok(())
    }

    /// Round-trip time for a queue length.
    pub fn rtt(&self, q: f64) -> f64 {
        q / self.capacity + self.t_prop
    }
}

/// Arguments of the right-hand sides at one grid node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub w_h: f64,
    /// `W^h(t1 - tau1, t2)`.
    pub w_h_del: f64,
    pub w_v: f64,
    pub q_h: f64,
    /// `q^h(t1 - tau1, t2)`; sets `tau1`.
    pub q_h_del: f64,
    pub q_v: f64,
    pub p_v: f64,
    /// `p^v(t1, t2 - tau2)`.
    pub p_v_del: f64,
    pub tau2: f64,
}

impl ModelPoint {
    /// Point with every delayed argument equal to its current value and
    /// `tau2` tied to `q_v`.
    pub fn steady(w_h: f64, q_h: f64, w_v: f64, q_v: f64, p: f64, params: &NetworkParams) -> Self {
        Self {
            w_h,
            w_h_del: w_h,
            w_v,
            q_h,
            q_h_del: q_h,
            q_v,
            p_v: p,
            p_v_del: p,
            tau2: params.rtt(q_v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Derivative4 {
    pub dwh_dt1: f64,
    pub dqh_dt1: f64,
    pub dwv_dt2: f64,
    pub dqv_dt2: f64,
}

impl Derivative4 {
    pub fn max_abs(&self) -> f64 {
        self.dwh_dt1
            .abs()
            .max(self.dqh_dt1.abs())
            .max(self.dwv_dt2.abs())
            .max(self.dqv_dt2.abs())
    }
}

fn nonzero_delay(tau: f64, what: &str) -> Result<f64> {
    if tau == 0.0 || !tau.is_finite() {
        return Err(Error::Domain(format!(
            "{what} must be nonzero and finite, got {tau}"
        )));
    }
    Ok(tau)
}

/// `dW^h/dt1`.
pub fn rhs_window_h(pt: &ModelPoint, params: &NetworkParams) -> Result<f64> {
    let tau1 = nonzero_delay(params.rtt(pt.q_h_del), "tau1")?;
    let n = params.n_flows;
    let growth = match params.scenario {
        Scenario::A => pt.w_h_del * (1.0 - pt.p_v_del),
        Scenario::B => {
            if pt.w_h == 0.0 {
                return Err(Error::Domain(
                    "scenario B window equation divides by W^h = 0".into(),
                ));
            }
            n * pt.w_h_del * (1.0 - pt.p_v_del) / pt.w_h
        }
    };
    let backoff = params.lambda * pt.w_h * pt.w_h_del * pt.p_v_del / (2.0 * n);
    Ok((growth - backoff) / tau1)
}

/// `dW^v/dt2`.
pub fn rhs_window_v(pt: &ModelPoint, params: &NetworkParams) -> Result<f64> {
    let tau2 = nonzero_delay(pt.tau2, "tau2")?;
    let n = params.n_flows;
    let lead = match params.scenario {
        Scenario::A => pt.w_h,
        Scenario::B => n * pt.w_h,
    };
    Ok((lead * (1.0 - pt.p_v) - params.lambda * pt.w_h * pt.w_h * pt.p_v / (2.0 * n)) / tau2)
}

/// `dq^h/dt1` or `dq^v/dt2`.
///
/// The horizontal queue sees the delayed probability, the vertical one the
/// current probability. Both ECN modes use the delay of their own dimension.
pub fn rhs_queue(pt: &ModelPoint, params: &NetworkParams, dim: Dim) -> Result<f64> {
    let (w, tau, p) = match dim {
        Dim::H => (pt.w_h, params.rtt(pt.q_h), pt.p_v_del),
        Dim::V => (pt.w_v, pt.tau2, pt.p_v),
    };
    let tau = nonzero_delay(tau, "round-trip time")?;
    let admitted = match params.ecn {
        Ecn::On => 1.0,
        Ecn::Off => 1.0 - p,
    };
    Ok(params.n_flows * w * admitted / tau - params.capacity)
}

pub fn rhs_all(pt: &ModelPoint, params: &NetworkParams) -> Result<Derivative4> {
    Ok(Derivative4 {
        dwh_dt1: rhs_window_h(pt, params)?,
        dqh_dt1: rhs_queue(pt, params, Dim::H)?,
        dwv_dt2: rhs_window_v(pt, params)?,
        dqv_dt2: rhs_queue(pt, params, Dim::V)?,
    })
}

/// One-dimensional window dynamics with a single round-trip time `tau`
/// (used for both the delay and the rate normalization).
pub fn rhs_1d(w: f64, w_del: f64, p_del: f64, tau: f64, params: &NetworkParams) -> Result<f64> {
    let tau = nonzero_delay(tau, "tau")?;
    let n = params.n_flows;
    Ok(w_del * (1.0 - p_del) / tau - params.lambda * w * w_del * p_del / (2.0 * n * tau))
}
