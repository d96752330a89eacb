//! Roesser linearization around an operating point.
//!
//! State `[dW^h, dq^h | dW^v, dq^v]`, input `[dp^h, dp^v]`. Delayed states
//! are `[x^h(t1 - tau1, t2); x^v(t1, t2 - tau2)]`, delayed inputs likewise.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumPoint;
use crate::error::{Error, Result};
use crate::matrix_serde::{from_rows, to_rows};
use crate::model::{
    rhs_queue, rhs_window_h, rhs_window_v, Dim, Ecn, ModelPoint, NetworkParams, Scenario,
};

pub const STATE_NAMES: [&str; 4] = ["W_h", "q_h", "W_v", "q_v"];
pub const INPUT_NAMES: [&str; 2] = ["p_h", "p_v"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateSpaceRepr", into = "StateSpaceRepr")]
pub struct StateSpace2D {
    pub n_h: usize,
    pub n_v: usize,
    pub a: DMatrix<f64>,
    pub a_tau: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub b_tau: DMatrix<f64>,
    pub tau1: f64,
    pub tau2: f64,
}

impl StateSpace2D {
    pub fn new(
        n_h: usize,
        n_v: usize,
        a: DMatrix<f64>,
        a_tau: DMatrix<f64>,
        b: DMatrix<f64>,
        b_tau: DMatrix<f64>,
        tau1: f64,
        tau2: f64,
    ) -> Result<Self> {
        let n = n_h + n_v;
        let square = |m: &DMatrix<f64>| m.nrows() == n && m.ncols() == n;
        if !square(&a) || !square(&a_tau) {
            return Err(Error::Dimension(format!("A and A_tau must be {n}x{n}")));
        }
        if b.nrows() != n || b_tau.nrows() != n || b.ncols() != b_tau.ncols() {
            return Err(Error::Dimension(format!(
                "B and B_tau must be {n}xm with equal m"
            )));
        }
        if !(tau1 > 0.0 && tau2 > 0.0) {
            return Err(Error::Domain(format!(
                "delays must be positive, got {tau1}, {tau2}"
            )));
        }
        let finite = [&a, &a_tau, &b, &b_tau]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Domain("non-finite matrix entry".into()));
        }
        Ok(Self {
            n_h,
            n_v,
            a,
            a_tau,
            b,
            b_tau,
            tau1,
            tau2,
        })
    }

    /// Unforced system with no inputs.
    pub fn autonomous(
        n_h: usize,
        n_v: usize,
        a: DMatrix<f64>,
        a_tau: DMatrix<f64>,
        tau1: f64,
        tau2: f64,
    ) -> Result<Self> {
        let n = n_h + n_v;
        Self::new(
            n_h,
            n_v,
            a,
            a_tau,
            DMatrix::zeros(n, 0),
            DMatrix::zeros(n, 0),
            tau1,
            tau2,
        )
    }

    pub fn n(&self) -> usize {
        self.n_h + self.n_v
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `(A + B K, A_tau + B_tau K)` as an unforced system.
    pub fn closed_loop(&self, k: &DMatrix<f64>) -> Result<Self> {
        if k.nrows() != self.m() || k.ncols() != self.n() {
            return Err(Error::Dimension(format!(
                "gain must be {}x{}",
                self.m(),
                self.n()
            )));
        }
        Self::autonomous(
            self.n_h,
            self.n_v,
            &self.a + &self.b * k,
            &self.a_tau + &self.b_tau * k,
            self.tau1,
            self.tau2,
        )
    }

    pub fn max_abs(&self) -> f64 {
        [&self.a, &self.a_tau, &self.b, &self.b_tau]
            .iter()
            .map(|m| m.amax())
            .fold(0.0, f64::max)
    }

    fn state_names(&self) -> Vec<String> {
        if self.n_h == 2 && self.n_v == 2 {
            STATE_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.n_h)
                .map(|i| format!("x_h{i}"))
                .chain((0..self.n_v).map(|i| format!("x_v{i}")))
                .collect()
        }
    }

    fn input_names(&self) -> Vec<String> {
        if self.m() == 2 {
            INPUT_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.m()).map(|i| format!("u{i}")).collect()
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateSpaceRepr {
    n_h: usize,
    n_v: usize,
    m: usize,
    tau1: f64,
    tau2: f64,
    state_order: Vec<String>,
    input_order: Vec<String>,
    a: Vec<Vec<f64>>,
    a_tau: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    b_tau: Vec<Vec<f64>>,
}

impl From<StateSpace2D> for StateSpaceRepr {
    fn from(ss: StateSpace2D) -> Self {
        Self {
            n_h: ss.n_h,
            n_v: ss.n_v,
            m: ss.m(),
            tau1: ss.tau1,
            tau2: ss.tau2,
            state_order: ss.state_names(),
            input_order: ss.input_names(),
            a: to_rows(&ss.a),
            a_tau: to_rows(&ss.a_tau),
            b: to_rows(&ss.b),
            b_tau: to_rows(&ss.b_tau),
        }
    }
}

impl TryFrom<StateSpaceRepr> for StateSpace2D {
    type Error = String;

    fn try_from(r: StateSpaceRepr) -> std::result::Result<Self, String> {
        let n = r.n_h + r.n_v;
        let ss = StateSpace2D::new(
            r.n_h,
            r.n_v,
            from_rows(n, n, &r.a)?,
            from_rows(n, n, &r.a_tau)?,
            from_rows(n, r.m, &r.b)?,
            from_rows(n, r.m, &r.b_tau)?,
            r.tau1,
            r.tau2,
        )
        .map_err(|e| e.to_string())?;
        if r.state_order.len() != n || r.input_order.len() != r.m {
            return Err("ordering metadata does not match dimensions".into());
        }
        Ok(ss)
    }
}

/// Sign convention for derivatives taken through the round-trip time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauSensitivity {
    /// `d(1/tau)/dq = -1 / (tau^2 C)`; agrees with finite differences.
    #[default]
    Exact,
    /// Opposite sign on every queue column, as in the published matrices.
    Inverted,
}

/// Analytic linearization with the exact sign convention.
pub fn jacobians(eq: &EquilibriumPoint, params: &NetworkParams) -> Result<StateSpace2D> {
    jacobians_with(eq, params, TauSensitivity::Exact)
}

pub fn jacobians_with(
    eq: &EquilibriumPoint,
    params: &NetworkParams,
    conv: TauSensitivity,
) -> Result<StateSpace2D> {
    let n = params.n_flows;
    let lam = params.lambda;
    let c = params.capacity;
    let (w, wv, p, t1, t2) = (eq.w_h, eq.w_v, eq.p, eq.tau1, eq.tau2);
    if !(t1 > 0.0 && t2 > 0.0) {
        return Err(Error::Domain(
            "operating point delays must be positive".into(),
        ));
    }
    if params.scenario == Scenario::B && w == 0.0 {
        return Err(Error::Domain(
            "scenario B linearization divides by W^h = 0".into(),
        ));
    }

    let mut a = DMatrix::zeros(4, 4);
    let mut a_tau = DMatrix::zeros(4, 4);
    let mut b = DMatrix::zeros(4, 2);
    let mut b_tau = DMatrix::zeros(4, 2);
    let backoff = lam * w / (2.0 * n);

    // Horizontal window: growth / tau1(q_h delayed).
    let (g_h, dg_dw, dg_dwd, dg_dpd) = match params.scenario {
        Scenario::A => (
            w * (1.0 - p) - backoff * w * p,
            -backoff * p,
            (1.0 - p) - backoff * p,
            -w - backoff * w,
        ),
        Scenario::B => (
            n * (1.0 - p) - backoff * w * p,
            -n * (1.0 - p) / w - backoff * p,
            n * (1.0 - p) / w - backoff * p,
            -n - backoff * w,
        ),
    };
    a[(0, 0)] = dg_dw / t1;
    a_tau[(0, 0)] = dg_dwd / t1;
    a_tau[(0, 1)] = -g_h / (t1 * t1 * c);
    b_tau[(0, 1)] = dg_dpd / t1;

    // Horizontal queue: N W^h (1 - p delayed) / tau1(q_h) - C.
    let admitted = match params.ecn {
        Ecn::On => 1.0,
        Ecn::Off => 1.0 - p,
    };
    a[(1, 0)] = n * admitted / t1;
    a[(1, 1)] = -n * w * admitted / (t1 * t1 * c);
    if params.ecn == Ecn::Off {
        b_tau[(1, 1)] = -n * w / t1;
    }

    // Vertical window: G_v(W^h, p) / tau2(q_v).
    let lead = match params.scenario {
        Scenario::A => 1.0,
        Scenario::B => n,
    };
    let g_v = lead * w * (1.0 - p) - backoff * w * p;
    a[(2, 0)] = (lead * (1.0 - p) - 2.0 * backoff * p) / t2;
    a[(2, 3)] = -g_v / (t2 * t2 * c);
    b[(2, 1)] = (-lead * w - backoff * w) / t2;

    // Vertical queue: N W^v (1 - p) / tau2(q_v) - C.
    a[(3, 2)] = n * admitted / t2;
    a[(3, 3)] = -n * wv * admitted / (t2 * t2 * c);
    if params.ecn == Ecn::Off {
        b[(3, 1)] = -n * wv / t2;
    }

    if conv == TauSensitivity::Inverted {
        for col in [1, 3] {
            a.column_mut(col).neg_mut();
            a_tau.column_mut(col).neg_mut();
        }
    }
    StateSpace2D::new(2, 2, a, a_tau, b, b_tau, t1, t2)
}

/// Central finite differences of the nonlinear right-hand sides, with
/// per-variable step `step * max(|z|, 1)`; queues use `step * (|q| + T_p C)`.
pub fn fd_jacobians(
    eq: &EquilibriumPoint,
    params: &NetworkParams,
    step: f64,
) -> Result<StateSpace2D> {
    if !(1e-8..=1e-3).contains(&step) {
        return Err(Error::Domain(format!(
            "finite-difference step {step} outside [1e-8, 1e-3]"
        )));
    }
    // z = [x (4), x delayed (4), u (2), u delayed (2)]
    let mut z0 = [0.0; 12];
    z0[..4].copy_from_slice(&eq.state());
    z0[4..8].copy_from_slice(&eq.state());
    z0[8..10].copy_from_slice(&[eq.p, eq.p]);
    z0[10..12].copy_from_slice(&[eq.p, eq.p]);

    let eval = |z: &[f64; 12]| -> Result<[f64; 4]> {
        let pt = ModelPoint {
            w_h: z[0],
            q_h: z[1],
            w_v: z[2],
            q_v: z[3],
            w_h_del: z[4],
            q_h_del: z[5],
            p_v: z[9],
            p_v_del: z[11],
            tau2: params.rtt(z[3]),
        };
        Ok([
            rhs_window_h(&pt, params)?,
            rhs_queue(&pt, params, Dim::H)?,
            rhs_window_v(&pt, params)?,
            rhs_queue(&pt, params, Dim::V)?,
        ])
    };

    // Queues enter only through tau = q / C + T_p, so their natural scale
    // is tau C rather than the queue itself.
    let queue_scale = |q: f64| {
        let s = q.abs() + params.t_prop * params.capacity;
        if s > 0.0 {
            s
        } else {
            1.0
        }
    };
    let mut jac = DMatrix::zeros(4, 12);
    for k in 0..12 {
        let scale = match k {
            1 | 3 | 5 | 7 => queue_scale(z0[k]),
            _ => z0[k].abs().max(1.0),
        };
        let dz = step * scale;
        let mut zp = z0;
        let mut zm = z0;
        zp[k] += dz;
        zm[k] -= dz;
        let (fp, fm) = (eval(&zp)?, eval(&zm)?);
        for i in 0..4 {
            jac[(i, k)] = (fp[i] - fm[i]) / (2.0 * dz);
        }
    }
    StateSpace2D::new(
        2,
        2,
        jac.columns(0, 4).into_owned(),
        jac.columns(4, 4).into_owned(),
        jac.columns(8, 2).into_owned(),
        jac.columns(10, 2).into_owned(),
        eq.tau1,
        eq.tau2,
    )
}

/// Largest entrywise error between two linearizations, each entry measured
/// relative to `max(|reference|, 1e-2 * row scale)` where the row scale is
/// the largest reference entry of that row over all four matrices.
pub fn jacobian_rel_error(reference: &StateSpace2D, other: &StateSpace2D) -> f64 {
    let refs = [
        &reference.a,
        &reference.a_tau,
        &reference.b,
        &reference.b_tau,
    ];
    let others = [&other.a, &other.a_tau, &other.b, &other.b_tau];
    let mut worst = 0.0f64;
    for i in 0..reference.n() {
        let row_scale = refs.iter().map(|m| m.row(i).amax()).fold(0.0, f64::max);
        let floor = (1e-2 * row_scale).max(f64::MIN_POSITIVE);
        for (r, o) in refs.iter().zip(&others) {
            for j in 0..r.ncols() {
                let err = (r[(i, j)] - o[(i, j)]).abs() / r[(i, j)].abs().max(floor);
                worst = worst.max(err);
            }
        }
    }
    worst
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixName {
    A,
    ATau,
    B,
    BTau,
}

impl fmt::Display for MatrixName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixName::A => "A",
            MatrixName::ATau => "A_tau",
            MatrixName::B => "B",
            MatrixName::BTau => "B_tau",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiffKind {
    /// Outside tolerance.
    Mismatch,
    /// Within tolerance, but exactly one side is structurally zero.
    Structural,
    /// Within tolerance; listed because the caller asked for it.
    Flagged,
}

/// 1-based matrix entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryRef {
    pub matrix: MatrixName,
    pub row: usize,
    pub col: usize,
}

impl EntryRef {
    pub const fn new(matrix: MatrixName, row: usize, col: usize) -> Self {
        Self { matrix, row, col }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub matrix: MatrixName,
    /// 1-based.
    pub row: usize,
    /// 1-based.
    pub col: usize,
    pub computed: f64,
    pub printed: f64,
    pub symbol: String,
    pub kind: DiffKind,
}

impl DiffEntry {
    pub fn position(&self) -> String {
        format!("{}({},{})", self.matrix, self.row, self.col)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Entries outside `max(rel_tol |printed|, abs_tol)`.
    pub entries: Vec<DiffEntry>,
    /// In-tolerance entries where one side is zero and the other is not.
    pub structural: Vec<DiffEntry>,
    /// Remaining requested entries, reported whatever their agreement.
    #[serde(default)]
    pub flagged: Vec<DiffEntry>,
}

impl DiffReport {
    pub fn is_clean(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mentions(&self, position: &str) -> bool {
        self.entries
            .iter()
            .chain(&self.structural)
            .chain(&self.flagged)
            .any(|e| e.position() == position)
    }
}

impl fmt::Display for DiffReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "tolerance: max({} * |printed|, {})",
            self.rel_tol, self.abs_tol
        )?;
        if self.entries.is_empty() && self.structural.is_empty() && self.flagged.is_empty() {
            return writeln!(f, "no differences");
        }
        writeln!(
            f,
            "{:<12} {:>14} {:>14}  {:<10} partial",
            "entry", "computed", "printed", "kind"
        )?;
        for e in self
            .entries
            .iter()
            .chain(&self.structural)
            .chain(&self.flagged)
        {
            let kind = match e.kind {
                DiffKind::Mismatch => "mismatch",
                DiffKind::Structural => "structural",
                DiffKind::Flagged => "flagged",
            };
            writeln!(
                f,
                "{:<12} {:>14.6e} {:>14.6e}  {:<10} {}",
                e.position(),
                e.computed,
                e.printed,
                kind,
                e.symbol
            )?;
        }
        Ok(())
    }
}

/// Name of the partial derivative at a matrix position (0-based indices).
pub fn entry_symbol(matrix: MatrixName, row: usize, col: usize, n_h: usize, n_v: usize) -> String {
    let standard = n_h == 2 && n_v == 2;
    let rows = ["f_W^h", "f_q^h", "f_W^v", "f_q^v"];
    let states = ["W^h", "q^h", "W^v", "q^v"];
    let inputs = ["p^h", "p^v"];
    let f = if standard && row < 4 {
        rows[row].to_string()
    } else {
        format!("f_{row}")
    };
    let var = match matrix {
        MatrixName::A if standard => states[col].to_string(),
        MatrixName::ATau if standard => format!("{}_tau", states[col]),
        MatrixName::B if col < 2 => inputs[col].to_string(),
        MatrixName::BTau if col < 2 => format!("{}_tau", inputs[col]),
        MatrixName::A => format!("x_{col}"),
        MatrixName::ATau => format!("x_{col}_tau"),
        MatrixName::B => format!("u_{col}"),
        MatrixName::BTau => format!("u_{col}_tau"),
    };
    format!("d{f}/d{var}")
}

pub fn diff_report(
    computed: &StateSpace2D,
    printed: &StateSpace2D,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<DiffReport> {
    diff_report_flagged(computed, printed, rel_tol, abs_tol, &[])
}

/// Entrywise comparison with tolerance `max(rel_tol |printed|, abs_tol)`.
/// Entries in `flag` are always listed.
pub fn diff_report_flagged(
    computed: &StateSpace2D,
    printed: &StateSpace2D,
    rel_tol: f64,
    abs_tol: f64,
    flag: &[EntryRef],
) -> Result<DiffReport> {
    if computed.n_h != printed.n_h || computed.n_v != printed.n_v || computed.m() != printed.m() {
        return Err(Error::Dimension(
            "state spaces have different block sizes".into(),
        ));
    }
    let mut entries = Vec::new();
    let mut structural = Vec::new();
    let pairs = [
        (MatrixName::A, &computed.a, &printed.a),
        (MatrixName::ATau, &computed.a_tau, &printed.a_tau),
        (MatrixName::B, &computed.b, &printed.b),
        (MatrixName::BTau, &computed.b_tau, &printed.b_tau),
    ];
    for (name, c, p) in pairs {
        for j in 0..c.ncols() {
            for i in 0..c.nrows() {
                let (cv, pv) = (c[(i, j)], p[(i, j)]);
                let entry = |kind| DiffEntry {
                    matrix: name,
                    row: i + 1,
                    col: j + 1,
                    computed: cv,
                    printed: pv,
                    symbol: entry_symbol(name, i, j, computed.n_h, computed.n_v),
                    kind,
                };
                if (cv - pv).abs() > (rel_tol * pv.abs()).max(abs_tol) {
                    entries.push(entry(DiffKind::Mismatch));
                } else if (cv == 0.0) != (pv == 0.0) {
                    structural.push(entry(DiffKind::Structural));
                }
            }
        }
    }
    let mut flagged = Vec::new();
    for r in flag {
        let (c, p) = match r.matrix {
            MatrixName::A => (&computed.a, &printed.a),
            MatrixName::ATau => (&computed.a_tau, &printed.a_tau),
            MatrixName::B => (&computed.b, &printed.b),
            MatrixName::BTau => (&computed.b_tau, &printed.b_tau),
        };
        if r.row == 0 || r.col == 0 || r.row > c.nrows() || r.col > c.ncols() {
            return Err(Error::Dimension(format!(
                "flagged entry {}({},{}) out of range",
                r.matrix, r.row, r.col
            )));
        }
        let listed = entries
            .iter()
            .chain(&structural)
            .chain(&flagged)
            .any(|e: &DiffEntry| e.matrix == r.matrix && e.row == r.row && e.col == r.col);
        if !listed {
            flagged.push(DiffEntry {
                matrix: r.matrix,
                row: r.row,
                col: r.col,
                computed: c[(r.row - 1, r.col - 1)],
                printed: p[(r.row - 1, r.col - 1)],
                symbol: entry_symbol(r.matrix, r.row - 1, r.col - 1, computed.n_h, computed.n_v),
                kind: DiffKind::Flagged,
            });
        }
    }
    let order = |e: &DiffEntry| (e.matrix as u8, e.row, e.col);
    entries.sort_by_key(order);
    structural.sort_by_key(order);
    flagged.sort_by_key(order);
    Ok(DiffReport {
        rel_tol,
        abs_tol,
        entries,
        structural,
        flagged,
    })
}
