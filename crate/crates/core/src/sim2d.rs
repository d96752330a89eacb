//! Explicit marching of 2D delay systems on a rectangular `(t1, t2)` grid.
//!
//! Horizontal states advance along `i`, vertical states along `j`:
//!
//! ```text
//! x^h(i+1, j) = x^h(i, j) + h1 f^h(x(i, j), x_d(i, j))
//! x^v(i, j+1) = x^v(i, j) + h2 f^v(x(i, j), x_d(i, j))
//! x_d(i, j)   = [x^h(i - d1, j); x^v(i, j - d2)]
//! ```
//!
//! All nodes on an anti-diagonal `i + j = k` depend only on earlier
//! diagonals, so each diagonal is evaluated in parallel.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumPoint;
use crate::error::{Error, Result};
use crate::linearize::StateSpace2D;
use crate::matrix_serde;
use crate::model::{rhs_queue, rhs_window_h, rhs_window_v, Dim, ModelPoint, NetworkParams};

/// Growth of the sup-norm over the boundary data treated as divergence.
pub const DIVERGENCE_RATIO: f64 = 1e6;
const PARALLEL_MIN_DIAGONAL: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub h1: f64,
    pub h2: f64,
    pub m1: usize,
    pub m2: usize,
    pub d1: usize,
    pub d2: usize,
}

impl GridSpec {
    /// Grid whose delay offsets are `round(tau / h)`.
    pub fn new(h1: f64, h2: f64, m1: usize, m2: usize, tau1: f64, tau2: f64) -> Result<Self> {
        if !(h1 > 0.0 && h2 > 0.0) || !h1.is_finite() || !h2.is_finite() {
            return Err(Error::Domain(format!(
                "step sizes must be positive, got {h1}, {h2}"
            )));
        }
        if !(tau1 > 0.0 && tau2 > 0.0) {
            return Err(Error::Domain("delays must be positive".into()));
        }
        let d1 = (tau1 / h1).round() as usize;
        let d2 = (tau2 / h2).round() as usize;
        if d1 < 1 || d2 < 1 {
            return Err(Error::Domain(format!(
                "steps too coarse for the delays (d1 = {d1}, d2 = {d2})"
            )));
        }
        if m1 < 1 || m2 < 1 {
            return Err(Error::Domain(
                "grid needs at least one step per axis".into(),
            ));
        }
        Ok(Self {
            h1,
            h2,
            m1,
            m2,
            d1,
            d2,
        })
    }

    /// `h = tau / 20` on both axes with the given horizons in seconds.
    pub fn default_for(tau1: f64, tau2: f64, t1_end: f64, t2_end: f64) -> Result<Self> {
        let (h1, h2) = (tau1 / 20.0, tau2 / 20.0);
        Self::new(
            h1,
            h2,
            (t1_end / h1).round() as usize,
            (t2_end / h2).round() as usize,
            tau1,
            tau2,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h1 > 0.0 && self.h2 > 0.0)
            || self.d1 < 1
            || self.d2 < 1
            || self.m1 < 1
            || self.m2 < 1
        {
            return Err(Error::Domain("invalid grid".into()));
        }
        Ok(())
    }

    /// `|d h - tau| <= h / 2` on both axes.
    pub fn matches_delays(&self, tau1: f64, tau2: f64) -> bool {
        (self.d1 as f64 * self.h1 - tau1).abs() <= 0.5 * self.h1 + 1e-12
            && (self.d2 as f64 * self.h2 - tau2).abs() <= 0.5 * self.h2 + 1e-12
    }
}

/// Constant boundary bands: `x^h(i <= 0, j) = phi_h` for `t2 <= extent_v`
/// and `x^v(i, j <= 0) = phi_v` for `t1 <= extent_h`; zero beyond.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub phi_h: Vec<f64>,
    pub phi_v: Vec<f64>,
    /// Support of `phi_v` along `t1` (`None` for the full grid).
    #[serde(default)]
    pub extent_h: Option<f64>,
    /// Support of `phi_h` along `t2` (`None` for the full grid).
    #[serde(default)]
    pub extent_v: Option<f64>,
}

impl BoundaryData {
    pub fn constant(phi_h: &[f64], phi_v: &[f64]) -> Self {
        Self {
            phi_h: phi_h.to_vec(),
            phi_v: phi_v.to_vec(),
            extent_h: None,
            extent_v: None,
        }
    }

    /// Splits a full state vector into the two bands.
    pub fn from_state(x0: &[f64], n_h: usize) -> Self {
        Self::constant(&x0[..n_h], &x0[n_h..])
    }

    pub fn bound_h(&self) -> f64 {
        self.phi_h.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn bound_v(&self) -> f64 {
        self.phi_v.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn h_at(&self, t2: f64, k: usize) -> f64 {
        match self.extent_v {
            Some(e) if t2 > e => 0.0,
            _ => self.phi_h[k],
        }
    }

    fn v_at(&self, t1: f64, k: usize) -> f64 {
        match self.extent_h {
            Some(e) if t1 > e => 0.0,
            _ => self.phi_v[k],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Nonlinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub i: usize,
    pub j: usize,
    pub diagonal: usize,
}

/// State field over the grid. Horizontal components are stored for
/// `i in [-d1, m1], j in [0, m2]`, vertical ones for `i in [0, m1],
/// j in [-d2, m2]`. Nonlinear runs store deviations from the operating point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory2D {
    pub spec: GridSpec,
    pub n_h: usize,
    pub n_v: usize,
    pub kind: ModelKind,
    #[serde(with = "matrix_serde::option", default)]
    pub gain: Option<DMatrix<f64>>,
    pub divergence: Option<Divergence>,
    h: Vec<f64>,
    v: Vec<f64>,
}

impl Trajectory2D {
    fn alloc(
        spec: GridSpec,
        n_h: usize,
        n_v: usize,
        kind: ModelKind,
        gain: Option<DMatrix<f64>>,
    ) -> Self {
        let h = vec![0.0; (spec.m1 + spec.d1 + 1) * (spec.m2 + 1) * n_h];
        let v = vec![0.0; (spec.m1 + 1) * (spec.m2 + spec.d2 + 1) * n_v];
        Self {
            spec,
            n_h,
            n_v,
            kind,
            gain,
            divergence: None,
            h,
            v,
        }
    }

    #[inline]
    fn h_index(&self, i: isize, j: usize) -> usize {
        let ii = (i + self.spec.d1 as isize) as usize;
        (ii * (self.spec.m2 + 1) + j) * self.n_h
    }

    #[inline]
    fn v_index(&self, i: usize, j: isize) -> usize {
        let jj = (j + self.spec.d2 as isize) as usize;
        (i * (self.spec.m2 + self.spec.d2 + 1) + jj) * self.n_v
    }

    /// Horizontal block at `(i, j)`, `i >= -d1`.
    pub fn xh(&self, i: isize, j: usize) -> &[f64] {
        let k = self.h_index(i, j);
        &self.h[k..k + self.n_h]
    }

    /// Vertical block at `(i, j)`, `j >= -d2`.
    pub fn xv(&self, i: usize, j: isize) -> &[f64] {
        let k = self.v_index(i, j);
        &self.v[k..k + self.n_v]
    }

    /// Full state at an interior node.
    pub fn state(&self, i: usize, j: usize) -> DVector<f64> {
        let mut x = DVector::zeros(self.n_h + self.n_v);
        x.rows_mut(0, self.n_h)
            .copy_from_slice(self.xh(i as isize, j));
        x.rows_mut(self.n_h, self.n_v)
            .copy_from_slice(self.xv(i, j as isize));
        x
    }

    fn delayed(&self, i: usize, j: usize) -> DVector<f64> {
        let mut x = DVector::zeros(self.n_h + self.n_v);
        x.rows_mut(0, self.n_h)
            .copy_from_slice(self.xh(i as isize - self.spec.d1 as isize, j));
        x.rows_mut(self.n_h, self.n_v)
            .copy_from_slice(self.xv(i, j as isize - self.spec.d2 as isize));
        x
    }

    fn fill_boundary(&mut self, bdry: &BoundaryData) -> Result<()> {
        if bdry.phi_h.len() != self.n_h || bdry.phi_v.len() != self.n_v {
            return Err(Error::Dimension(
                "boundary data does not match the state blocks".into(),
            ));
        }
        let s = self.spec;
        for i in -(s.d1 as isize)..=0 {
            for j in 0..=s.m2 {
                let t2 = j as f64 * s.h2;
                let k = self.h_index(i, j);
                for c in 0..self.n_h {
                    self.h[k + c] = bdry.h_at(t2, c);
                }
            }
        }
        for i in 0..=s.m1 {
            let t1 = i as f64 * s.h1;
            for j in -(s.d2 as isize)..=0 {
                let k = self.v_index(i, j);
                for c in 0..self.n_v {
                    self.v[k + c] = bdry.v_at(t1, c);
                }
            }
        }
        Ok(())
    }

    fn poison_after(&mut self, diagonal: usize) {
        let s = self.spec;
        for i in 0..=s.m1 {
            for j in 0..=s.m2 {
                if i + j > diagonal {
                    let kh = self.h_index(i as isize, j);
                    let kv = self.v_index(i, j as isize);
                    if i > 0 {
                        self.h[kh..kh + self.n_h].fill(f64::NAN);
                    }
                    if j > 0 {
                        self.v[kv..kv + self.n_v].fill(f64::NAN);
                    }
                }
            }
        }
    }

    /// Marches the grid with a node update returning the increments
    /// `(f^h, f^v)` scaled by the steps, or `None` on a domain failure.
    fn march<F>(&mut self, limit: f64, post: impl Fn(&mut [f64], &mut [f64]) + Sync, update: F)
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> Option<DVector<f64>> + Sync,
    {
        let s = self.spec;
        let (n_h, n_v) = (self.n_h, self.n_v);
        for k in 0..=(s.m1 + s.m2) {
            let i_lo = k.saturating_sub(s.m2);
            let i_hi = k.min(s.m1);
            let node = |i: usize| {
                let j = k - i;
                let x = self.state(i, j);
                let xd = self.delayed(i, j);
                let f = update(&x, &xd);
                (i, j, x, f)
            };
            let results: Vec<_> = if i_hi - i_lo + 1 >= PARALLEL_MIN_DIAGONAL {
                (i_lo..=i_hi).into_par_iter().map(node).collect()
            } else {
                (i_lo..=i_hi).map(node).collect()
            };
            let mut failed: Option<(usize, usize)> = None;
            for (i, j, x, f) in results {
                let Some(f) = f else {
                    failed.get_or_insert((i, j));
                    continue;
                };
                let mut nh: Vec<f64> = (0..n_h).map(|c| x[c] + s.h1 * f[c]).collect();
                let mut nv: Vec<f64> = (0..n_v).map(|c| x[n_h + c] + s.h2 * f[n_h + c]).collect();
                post(&mut nh, &mut nv);
                let bad = |v: &[f64]| v.iter().any(|z| !z.is_finite() || z.abs() > limit);
                if i < s.m1 {
                    if bad(&nh) {
                        failed.get_or_insert((i + 1, j));
                    }
                    let kh = self.h_index(i as isize + 1, j);
                    self.h[kh..kh + n_h].copy_from_slice(&nh);
                }
                if j < s.m2 {
                    if bad(&nv) {
                        failed.get_or_insert((i, j + 1));
                    }
                    let kv = self.v_index(i, j as isize + 1);
                    self.v[kv..kv + n_v].copy_from_slice(&nv);
                }
            }
            if let Some((i, j)) = failed {
                self.divergence = Some(Divergence {
                    i,
                    j,
                    diagonal: i + j,
                });
                self.poison_after(i + j);
                return;
            }
        }
    }
}

/// Linear march of `(A + B K, A_tau + B_tau K)`, open loop without a gain.
pub fn simulate_linear(
    ss: &StateSpace2D,
    gain: Option<&DMatrix<f64>>,
    bdry: &BoundaryData,
    spec: &GridSpec,
) -> Result<Trajectory2D> {
    spec.validate()?;
    let (a, ad) = match gain {
        Some(k) => {
            let cl = ss.closed_loop(k)?;
            (cl.a, cl.a_tau)
        }
        None => (ss.a.clone(), ss.a_tau.clone()),
    };
    let mut traj = Trajectory2D::alloc(*spec, ss.n_h, ss.n_v, ModelKind::Linear, gain.cloned());
    traj.fill_boundary(bdry)?;
    let limit = DIVERGENCE_RATIO * bdry.bound_h().max(bdry.bound_v()).max(f64::MIN_POSITIVE);
    traj.march(limit, |_, _| {}, |x, xd| Some(&a * x + &ad * xd));
    Ok(traj)
}

/// Drop/mark probability applied by the router in nonlinear runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProbabilityInput {
    /// Held at the operating point.
    Equilibrium,
    /// Fixed value everywhere.
    Fixed(f64),
    /// `p = p_hat + (K dx)_{p^v}`.
    Feedback(#[serde(with = "matrix_serde")] DMatrix<f64>),
}

/// Nonlinear march in absolute coordinates with delay shifts frozen at the
/// operating point. Windows and queues are clamped to `[0, max]`,
/// probabilities to `[0, 1]`.
pub fn simulate_nonlinear(
    params: &NetworkParams,
    eq: &EquilibriumPoint,
    control: &ProbabilityInput,
    bdry: &BoundaryData,
    spec: &GridSpec,
) -> Result<Trajectory2D> {
    params.validate()?;
    spec.validate()?;
    let gain = match control {
        ProbabilityInput::Feedback(k) => {
            if k.nrows() != 2 || k.ncols() != 4 {
                return Err(Error::Dimension("gain must be 2x4".into()));
            }
            Some(k.clone())
        }
        _ => None,
    };
    let mut traj = Trajectory2D::alloc(*spec, 2, 2, ModelKind::Nonlinear, gain.clone());
    traj.fill_boundary(bdry)?;
    let x_eq = DVector::from_row_slice(&eq.state());
    let w_max = params.w_max.unwrap_or(f64::INFINITY);
    let q_max = params.q_max.unwrap_or(f64::INFINITY);
    let prob = |dx: &DVector<f64>| -> f64 {
        let p = match control {
            ProbabilityInput::Equilibrium => eq.p,
            ProbabilityInput::Fixed(p) => *p,
            ProbabilityInput::Feedback(k) => eq.p + (k.row(1) * dx)[(0, 0)],
        };
        p.clamp(0.0, 1.0)
    };
    let limit = DIVERGENCE_RATIO * (x_eq.amax() + bdry.bound_h().max(bdry.bound_v()));
    let post = |h: &mut [f64], v: &mut [f64]| {
        h[0] = (h[0] + x_eq[0]).clamp(0.0, w_max) - x_eq[0];
        h[1] = (h[1] + x_eq[1]).clamp(0.0, q_max) - x_eq[1];
        v[0] = (v[0] + x_eq[2]).clamp(0.0, w_max) - x_eq[2];
        v[1] = (v[1] + x_eq[3]).clamp(0.0, q_max) - x_eq[3];
    };
    traj.march(limit, post, |dx, dxd| {
        let x = dx + &x_eq;
        let xd = dxd + &x_eq;
        let pt = ModelPoint {
            w_h: x[0],
            q_h: x[1],
            w_v: x[2],
            q_v: x[3],
            w_h_del: xd[0],
            q_h_del: xd[1],
            p_v: prob(dx),
            p_v_del: prob(dxd),
            tau2: params.rtt(x[3]),
        };
        let f = [
            rhs_window_h(&pt, params).ok()?,
            rhs_queue(&pt, params, Dim::H).ok()?,
            rhs_window_v(&pt, params).ok()?,
            rhs_queue(&pt, params, Dim::V).ok()?,
        ];
        Some(DVector::from_row_slice(&f))
    });
    Ok(traj)
}

/// `s_k = max_{i + j = k} ||x(i, j)||_inf` over interior nodes, up to the
/// divergence diagonal when one is recorded.
pub fn decay_profile(traj: &Trajectory2D) -> Vec<f64> {
    let s = traj.spec;
    let last = traj.divergence.map_or(s.m1 + s.m2, |d| d.diagonal);
    let mut out = vec![0.0f64; last + 1];
    for i in 0..=s.m1 {
        for j in 0..=s.m2.min(last.saturating_sub(i)) {
            if i + j > last {
                continue;
            }
            let m = traj
                .xh(i as isize, j)
                .iter()
                .chain(traj.xv(i, j as isize))
                .fold(0.0f64, |m, v| {
                    if v.is_nan() {
                        f64::INFINITY
                    } else {
                        m.max(v.abs())
                    }
                });
            out[i + j] = out[i + j].max(m);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Stable,
    Divergent,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub outcome: Outcome,
    pub s0: f64,
    pub s_final: f64,
    /// Largest `s_k` for `k >= tail_fraction (m1 + m2)`; after a
    /// divergence, the largest finite `s_k` computed.
    pub tail_max: f64,
    pub tail_fraction: f64,
    pub final_ratio: f64,
    pub divergence: Option<Divergence>,
}

/// Stable when the tail stays below `threshold s_0`; divergent on a
/// divergence marker or a tail above `s_0`.
pub fn summarize(traj: &Trajectory2D, tail_fraction: f64, threshold: f64) -> SimSummary {
    let profile = decay_profile(traj);
    let s0 = profile[0];
    let total = traj.spec.m1 + traj.spec.m2;
    let start = (tail_fraction * total as f64).ceil() as usize;
    let finite = profile.iter().copied().filter(|v| v.is_finite());
    let tail_max = if traj.divergence.is_some() {
        finite.fold(0.0f64, f64::max)
    } else {
        profile[start.min(total)..]
            .iter()
            .fold(0.0f64, |m, v| m.max(*v))
    };
    let s_final = profile
        .iter()
        .rev()
        .copied()
        .find(|v| v.is_finite())
        .unwrap_or(0.0);
    let outcome = if traj.divergence.is_some() || tail_max > s0 {
        Outcome::Divergent
    } else if tail_max <= threshold * s0 {
        Outcome::Stable
    } else {
        Outcome::Inconclusive
    };
    SimSummary {
        outcome,
        s0,
        s_final,
        tail_max,
        tail_fraction,
        final_ratio: if s0 > 0.0 { s_final / s0 } else { 0.0 },
        divergence: traj.divergence,
    }
}

/// CSV export of interior nodes, every `stride`-th node on each axis.
pub fn write_csv<W: Write>(traj: &Trajectory2D, mut out: W, stride: usize) -> Result<()> {
    let stride = stride.max(1);
    let names: Vec<String> = if traj.n_h == 2 && traj.n_v == 2 {
        ["dWh", "dqh", "dWv", "dqv"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    } else {
        (0..traj.n_h)
            .map(|c| format!("dxh{c}"))
            .chain((0..traj.n_v).map(|c| format!("dxv{c}")))
            .collect()
    };
    writeln!(out, "t1,t2,{}", names.join(","))?;
    let s = traj.spec;
    for i in (0..=s.m1).step_by(stride) {
        for j in (0..=s.m2).step_by(stride) {
            let mut line = format!("{},{}", i as f64 * s.h1, j as f64 * s.h2);
            for v in traj.xh(i as isize, j).iter().chain(traj.xv(i, j as isize)) {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

pub fn write_profile_csv<W: Write>(profile: &[f64], mut out: W) -> Result<()> {
    writeln!(out, "k,s_k")?;
    for (k, v) in profile.iter().enumerate() {
        writeln!(out, "{k},{v}")?;
    }
    Ok(())
}
