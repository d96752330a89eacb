//! Lyapunov-Krasovskii LMIs for the 2D delay system and their SDP backend.
//!
//! The augmented vector is `xi = [x; x_d; phi_0; phi_1; dx]` where `x_d`
//! holds the delayed states, `phi_0, phi_1` the normalized Legendre moments
//! of the state over the delay window and `dx` the directional derivatives.
//! Every block is ordered horizontal first.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bessel_legendre::gamma_rows;
use crate::error::{Error, Result};
use crate::linearize::StateSpace2D;
use crate::matrix_serde;

pub const BL_ORDER: usize = 2;
pub const MAX_H_CONDITION: f64 = 1e8;
/// Minimum common eigenvalue margin, in units of the trace normalization.
pub const DEFAULT_MARGIN_FLOOR: f64 = 1e-8;
pub const DEFAULT_INFEASIBILITY_FLOOR: f64 = 1e-6;
pub const DEFAULT_CERTIFICATE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Symmetric,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarBlock {
    pub name: String,
    pub kind: VarKind,
    pub rows: usize,
    pub cols: usize,
    /// First scalar index.
    pub offset: usize,
}

impl VarBlock {
    pub fn scalar_count(&self) -> usize {
        match self.kind {
            VarKind::Symmetric => self.rows * (self.rows + 1) / 2,
            VarKind::Full => self.rows * self.cols,
        }
    }

    /// Matrix position of the `s`-th scalar.
    fn position(&self, s: usize) -> (usize, usize) {
        match self.kind {
            VarKind::Symmetric => {
                let mut j = 0;
                while (j + 1) * (j + 2) / 2 <= s {
                    j += 1;
                }
                (s - j * (j + 1) / 2, j)
            }
            VarKind::Full => (s % self.rows, s / self.rows),
        }
    }

    fn is_diagonal(&self, s: usize) -> bool {
        let (i, j) = self.position(s);
        self.kind == VarKind::Symmetric && i == j
    }

    /// `L^T B_s R` for the basis matrix of scalar `s`.
    fn basis_product(&self, s: usize, l: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
        let (i, j) = self.position(s);
        let mut out = l.row(i).transpose() * r.row(j);
        if self.kind == VarKind::Symmetric && i != j {
            out += l.row(j).transpose() * r.row(i);
        }
        out
    }

    pub fn extract(&self, values: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for s in 0..self.scalar_count() {
            let (i, j) = self.position(s);
            let v = values[self.offset + s];
            m[(i, j)] = v;
            if self.kind == VarKind::Symmetric {
                m[(j, i)] = v;
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub var: usize,
    #[serde(with = "matrix_serde")]
    pub coef: DMatrix<f64>,
}

/// `F(x) = F_0 + sum_k x_k F_k` over scalar decision variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineExpr {
    pub dim: usize,
    #[serde(with = "matrix_serde")]
    pub constant: DMatrix<f64>,
    pub terms: Vec<Term>,
}

impl AffineExpr {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            constant: DMatrix::zeros(dim, dim),
            terms: Vec::new(),
        }
    }

    fn term_mut(&mut self, var: usize) -> &mut DMatrix<f64> {
        let idx = match self.terms.binary_search_by_key(&var, |t| t.var) {
            Ok(i) => i,
            Err(i) => {
                self.terms.insert(
                    i,
                    Term {
                        var,
                        coef: DMatrix::zeros(self.dim, self.dim),
                    },
                );
                i
            }
        };
        &mut self.terms[idx].coef
    }

    pub fn add_constant(&mut self, m: &DMatrix<f64>) {
        self.constant += m;
    }

    /// Adds `scale * L^T X L`.
    pub fn add_quadratic(&mut self, var: &VarBlock, l: &DMatrix<f64>, scale: f64) {
        for s in 0..var.scalar_count() {
            let c = var.basis_product(s, l, l) * scale;
            *self.term_mut(var.offset + s) += c;
        }
    }

    /// Adds `scale * (L^T X R + R^T X^T L)`.
    pub fn add_he(&mut self, var: &VarBlock, l: &DMatrix<f64>, r: &DMatrix<f64>, scale: f64) {
        for s in 0..var.scalar_count() {
            let c = var.basis_product(s, l, r) * scale;
            *self.term_mut(var.offset + s) += &c + c.transpose();
        }
    }

    pub fn symmetrize(&mut self) {
        let sym = |m: &DMatrix<f64>| (m + m.transpose()) * 0.5;
        self.constant = sym(&self.constant);
        for t in &mut self.terms {
            t.coef = sym(&t.coef);
        }
        self.terms.retain(|t| t.coef.amax() != 0.0);
    }

    pub fn evaluate(&self, values: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for t in &self.terms {
            m += &t.coef * values[t.var];
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sense {
    /// `F > 0`.
    PositiveDefinite,
    /// `F < 0`.
    NegativeDefinite,
}

impl Sense {
    fn sign(self) -> f64 {
        match self {
            Sense::PositiveDefinite => 1.0,
            Sense::NegativeDefinite => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmiConstraint {
    pub label: String,
    pub sense: Sense,
    pub expr: AffineExpr,
}

impl LmiConstraint {
    /// Smallest eigenvalue of `F` (or of `-F` for negative definite).
    pub fn slack(&self, values: &[f64]) -> f64 {
        let f = self.expr.evaluate(values);
        let f = match self.sense {
            Sense::PositiveDefinite => f,
            Sense::NegativeDefinite => -f,
        };
        if f.nrows() == 0 {
            return f64::INFINITY;
        }
        SymmetricEigen::new((&f + f.transpose()) * 0.5)
            .eigenvalues
            .min()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LmiProblem {
    pub variables: Vec<VarBlock>,
    pub constraints: Vec<LmiConstraint>,
    /// Diagonal state scaling `x = D x_scaled` the problem was built in.
    #[serde(default)]
    pub scaling: Option<Vec<f64>>,
}

impl LmiProblem {
    pub fn add_variable(
        &mut self,
        name: &str,
        kind: VarKind,
        rows: usize,
        cols: usize,
    ) -> VarBlock {
        let offset = self.scalar_count();
        let cols = if kind == VarKind::Symmetric {
            rows
        } else {
            cols
        };
        let v = VarBlock {
            name: name.to_string(),
            kind,
            rows,
            cols,
            offset,
        };
        self.variables.push(v.clone());
        v
    }

    pub fn add_constraint(&mut self, label: &str, sense: Sense, mut expr: AffineExpr) {
        expr.symmetrize();
        self.constraints.push(LmiConstraint {
            label: label.to_string(),
            sense,
            expr,
        });
    }

    pub fn scalar_count(&self) -> usize {
        self.variables.iter().map(|v| v.scalar_count()).sum()
    }

    pub fn variable(&self, name: &str) -> Option<&VarBlock> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn block(&self, name: &str, values: &[f64]) -> Option<DMatrix<f64>> {
        self.variable(name).map(|v| v.extract(values))
    }

    /// Smallest slack over all constraints.
    pub fn verify(&self, values: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.slack(values))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Feasible,
    Infeasible,
    SolverUnknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub status: Status,
    /// Re-verified smallest eigenvalue slack at the returned assignment.
    pub margin: Option<f64>,
    /// Common margin reported by the backend.
    pub solver_margin: Option<f64>,
    pub assignment: Option<Vec<f64>>,
    pub diagnostics: Vec<String>,
}

impl StabilityVerdict {
    pub fn is_feasible(&self) -> bool {
        self.status == Status::Feasible
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub margin_floor: f64,
    /// Margin demanded by the second solve. Kept well above the solver's
    /// feasibility tolerance so that a near-zero optimum is not mistaken
    /// for a feasible point.
    #[serde(default = "default_infeasibility_floor")]
    pub infeasibility_floor: f64,
    /// Largest relative residual accepted for a dual infeasibility certificate.
    #[serde(default = "default_certificate_tol")]
    pub certificate_tol: f64,
    pub max_iter: u32,
}

fn default_infeasibility_floor() -> f64 {
    DEFAULT_INFEASIBILITY_FLOOR
}

fn default_certificate_tol() -> f64 {
    DEFAULT_CERTIFICATE_TOL
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            margin_floor: DEFAULT_MARGIN_FLOOR,
            infeasibility_floor: DEFAULT_INFEASIBILITY_FLOOR,
            certificate_tol: DEFAULT_CERTIFICATE_TOL,
            max_iter: 200,
        }
    }
}

pub fn solve(problem: &LmiProblem) -> StabilityVerdict {
    solve_with(problem, &SolveOptions::default())
}

/// Maximizes a common margin `t` with `F_c(x) - t I >= 0` for positive
/// definite constraints and `-F_c(x) - t I >= 0` for negative definite ones,
/// under `sum tr(symmetric blocks) <= 1` and `|x_k| <= 1`. A margin below
/// the floor triggers a second solve with `t >= infeasibility_floor` whose infeasibility
/// certificate decides the verdict.
pub fn solve_with(problem: &LmiProblem, opts: &SolveOptions) -> StabilityVerdict {
    let nvars = problem.scalar_count();
    if problem.constraints.is_empty() {
        return StabilityVerdict {
            status: Status::Feasible,
            margin: None,
            solver_margin: None,
            assignment: Some(vec![0.0; nvars]),
            diagnostics: vec!["no constraints".into()],
        };
    }
    let mut diagnostics = Vec::new();
    let first = run_backend(problem, opts, None);
    diagnostics.push(format!("margin maximization: {:?}", first.status));
    let unknown = |diagnostics| StabilityVerdict {
        status: Status::SolverUnknown,
        margin: None,
        solver_margin: None,
        assignment: None,
        diagnostics,
    };
    let Some((x, t)) = first.solution else {
        return unknown(diagnostics);
    };
    if t >= opts.margin_floor {
        return verified(problem, x, t, diagnostics);
    }
    diagnostics.push(format!(
        "best margin {t:e} below floor {:e}",
        opts.margin_floor
    ));
    if let Some(duals) = &first.duals {
        let res = alternative_residual(problem, duals);
        diagnostics.push(format!("alternative certificate residual {res:e}"));
        if res <= opts.certificate_tol {
            return StabilityVerdict {
                status: Status::Infeasible,
                margin: None,
                solver_margin: Some(t),
                assignment: None,
                diagnostics,
            };
        }
    }
    let demand = opts.infeasibility_floor.max(opts.margin_floor);
    let second = run_backend(problem, opts, Some(demand));
    diagnostics.push(format!(
        "feasibility at margin {demand:e}: {:?}",
        second.status
    ));
    match (second.status, second.solution) {
        (BackendStatus::PrimalInfeasible, _) => StabilityVerdict {
            status: Status::Infeasible,
            margin: None,
            solver_margin: Some(t),
            assignment: None,
            diagnostics,
        },
        (BackendStatus::Solved, Some((x, t))) => verified(problem, x, t, diagnostics),
        _ => unknown(diagnostics),
    }
}

fn verified(
    problem: &LmiProblem,
    x: Vec<f64>,
    t: f64,
    mut diagnostics: Vec<String>,
) -> StabilityVerdict {
    let margin = problem.verify(&x);
    let status = if margin > 0.0 {
        Status::Feasible
    } else {
        diagnostics.push(format!(
            "eigenvalue re-verification failed: slack {margin:e}"
        ));
        Status::SolverUnknown
    };
    StabilityVerdict {
        status,
        margin: Some(margin),
        solver_margin: Some(t),
        assignment: Some(x),
        diagnostics,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BackendStatus {
    Solved,
    PrimalInfeasible,
    Other(&'static str),
}

struct BackendResult {
    status: BackendStatus,
    solution: Option<(Vec<f64>, f64)>,
    /// Dual blocks of the semidefinite constraints, one per constraint.
    duals: Option<Vec<DMatrix<f64>>>,
}

fn svec(m: &DMatrix<f64>, out: &mut Vec<f64>) {
    let s2 = std::f64::consts::SQRT_2;
    for j in 0..m.ncols() {
        for i in 0..=j {
            out.push(if i == j {
                m[(i, j)]
            } else {
                s2 * 0.5 * (m[(i, j)] + m[(j, i)])
            });
        }
    }
}

fn unsvec(v: &[f64], n: usize) -> DMatrix<f64> {
    let s2 = std::f64::consts::SQRT_2;
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            let x = if i == j { v[k] } else { v[k] / s2 };
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

/// Checks a theorem-of-alternatives certificate for strict infeasibility:
/// `Y_c >= 0` with unit total trace, `sum_c s_c <F_c,k, Y_c> = 0` for every
/// scalar `k` and `sum_c s_c <F_c,0, Y_c> <= 0`. Returns the worst relative
/// residual after projecting the blocks onto the semidefinite cone.
pub(crate) fn alternative_residual(problem: &LmiProblem, duals: &[DMatrix<f64>]) -> f64 {
    let mut blocks: Vec<DMatrix<f64>> = duals
        .iter()
        .map(|y| {
            let e = y.clone().symmetric_eigen();
            let d = e.eigenvalues.map(|l| l.max(0.0));
            &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
        })
        .collect();
    let total: f64 = blocks.iter().map(|y| y.trace()).sum();
    if !(total > 0.0) {
        return f64::INFINITY;
    }
    for y in &mut blocks {
        *y /= total;
    }
    let n = problem.scalar_count();
    let mut r = vec![0.0; n];
    let mut scale = vec![0.0; n];
    let mut r0 = 0.0;
    let mut scale0 = 0.0f64;
    for (c, y) in problem.constraints.iter().zip(&blocks) {
        let s = c.sense.sign();
        r0 += s * c.expr.constant.dot(y);
        scale0 = scale0.max(c.expr.constant.norm());
        for term in &c.expr.terms {
            r[term.var] += s * term.coef.dot(y);
            scale[term.var] += term.coef.norm();
        }
    }
    let worst = r
        .iter()
        .zip(&scale)
        .filter(|(_, s)| **s > 0.0)
        .map(|(r, s)| r.abs() / s)
        .fold(0.0, f64::max);
    let constant = if scale0 > 0.0 {
        (r0 / scale0).max(0.0)
    } else {
        0.0
    };
    worst.max(constant)
}

fn run_backend(problem: &LmiProblem, opts: &SolveOptions, floor: Option<f64>) -> BackendResult {
    use clarabel::algebra::CscMatrix;
    use clarabel::solver::{
        DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
    };

    let nvars = problem.scalar_count();
    let ncols = nvars + 1;
    let t_col = nvars;
    // Dense column storage; problems here are small.
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ncols];
    let mut b = Vec::new();
    let mut cones = Vec::new();

    let mut nonneg = 0;
    // Trace normalization.
    for v in &problem.variables {
        for s in 0..v.scalar_count() {
            if v.is_diagonal(s) {
                cols[v.offset + s].push((b.len(), 1.0));
            }
        }
    }
    b.push(1.0);
    nonneg += 1;
    // Box on every scalar.
    for k in 0..nvars {
        cols[k].push((b.len(), 1.0));
        b.push(1.0);
        cols[k].push((b.len(), -1.0));
        b.push(1.0);
        nonneg += 2;
    }
    cones.push(SupportedConeT::NonnegativeConeT(nonneg));
    if let Some(f) = floor {
        // Pure feasibility problem with the margin pinned at `f`.
        cols[t_col].push((b.len(), 1.0));
        b.push(f);
        cones.push(SupportedConeT::ZeroConeT(1));
    }

    let mut psd_rows = Vec::with_capacity(problem.constraints.len());
    for c in &problem.constraints {
        let sign = c.sense.sign();
        let row0 = b.len();
        psd_rows.push(row0);
        let mut tmp = Vec::new();
        svec(&(&c.expr.constant * sign), &mut tmp);
        b.extend_from_slice(&tmp);
        for term in &c.expr.terms {
            tmp.clear();
            svec(&term.coef, &mut tmp);
            for (r, v) in tmp.iter().enumerate() {
                if *v != 0.0 {
                    cols[term.var].push((row0 + r, -sign * v));
                }
            }
        }
        tmp.clear();
        svec(&DMatrix::identity(c.expr.dim, c.expr.dim), &mut tmp);
        for (r, v) in tmp.iter().enumerate() {
            if *v != 0.0 {
                cols[t_col].push((row0 + r, *v));
            }
        }
        cones.push(SupportedConeT::PSDTriangleConeT(c.expr.dim));
    }

    let nrows = b.len();
    let mut colptr = vec![0];
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    for col in &mut cols {
        col.sort_by_key(|e| e.0);
        for (r, v) in col.iter() {
            rowval.push(*r);
            nzval.push(*v);
        }
        colptr.push(rowval.len());
    }
    let a = CscMatrix::new(nrows, ncols, colptr, rowval, nzval);
    let p = CscMatrix::zeros((ncols, ncols));
    let mut q = vec![0.0; ncols];
    if floor.is_none() {
        q[t_col] = -1.0;
    }

    let settings = match DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(opts.max_iter)
        .build()
    {
        Ok(s) => s,
        Err(_) => {
            return BackendResult {
                status: BackendStatus::Other("invalid settings"),
                solution: None,
                duals: None,
            }
        }
    };
    let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, settings) {
        Ok(s) => s,
        Err(_) => {
            return BackendResult {
                status: BackendStatus::Other("setup failed"),
                solution: None,
                duals: None,
            }
        }
    };
    solver.solve();
    let sol = &solver.solution;
    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            let x = sol.x[..nvars].to_vec();
            let duals = psd_rows
                .iter()
                .zip(&problem.constraints)
                .map(|(&r0, c)| unsvec(&sol.z[r0..], c.expr.dim))
                .collect();
            BackendResult {
                status: BackendStatus::Solved,
                solution: Some((x, sol.x[t_col])),
                duals: Some(duals),
            }
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => BackendResult {
            status: BackendStatus::PrimalInfeasible,
            solution: None,
            duals: None,
        },
        other => {
            let label = match other {
                SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                    "dual infeasible"
                }
                SolverStatus::MaxIterations => "iteration limit",
                SolverStatus::MaxTime => "time limit",
                SolverStatus::NumericalError => "numerical error",
                SolverStatus::InsufficientProgress => "insufficient progress",
                _ => "unsolved",
            };
            BackendResult {
                status: BackendStatus::Other(label),
                solution: None,
                duals: None,
            }
        }
    }
}

/// Block selectors `e_1..e_5` over `xi` for block sizes `(n_h, n_v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorBasis {
    pub n_h: usize,
    pub n_v: usize,
    pub e: Vec<DMatrix<f64>>,
}

impl SelectorBasis {
    pub fn new(n_h: usize, n_v: usize) -> Self {
        let n = n_h + n_v;
        let e = (0..5)
            .map(|k| {
                let mut m = DMatrix::zeros(n, 5 * n);
                m.view_mut((0, k * n), (n, n)).fill_with_identity();
                m
            })
            .collect();
        Self { n_h, n_v, e }
    }

    pub fn dim(&self) -> usize {
        5 * (self.n_h + self.n_v)
    }

    /// `e_i` (1-based), full.
    pub fn full(&self, i: usize) -> &DMatrix<f64> {
        &self.e[i - 1]
    }

    /// `e_i^h` (1-based).
    pub fn h(&self, i: usize) -> DMatrix<f64> {
        self.e[i - 1].rows(0, self.n_h).into_owned()
    }

    /// `e_i^v` (1-based).
    pub fn v(&self, i: usize) -> DMatrix<f64> {
        self.e[i - 1].rows(self.n_h, self.n_v).into_owned()
    }

    pub fn part(&self, i: usize, horizontal: bool) -> DMatrix<f64> {
        if horizontal {
            self.h(i)
        } else {
            self.v(i)
        }
    }
}

fn vstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks[0].ncols();
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Handles to the decision variables of a theorem problem.
#[derive(Clone, Debug, PartialEq)]
pub struct LmiVariables {
    pub p_h: VarBlock,
    pub p_v: VarBlock,
    pub q_h: VarBlock,
    pub q_v: VarBlock,
    pub r_h: VarBlock,
    pub r_v: VarBlock,
    pub h_h: VarBlock,
    pub h_v: VarBlock,
    pub v: Option<VarBlock>,
}

impl LmiVariables {
    fn declare(problem: &mut LmiProblem, n_h: usize, n_v: usize, m: Option<usize>) -> Self {
        let n = n_h + n_v;
        Self {
            p_h: problem.add_variable("P_h", VarKind::Symmetric, 3 * n_h, 3 * n_h),
            p_v: problem.add_variable("P_v", VarKind::Symmetric, 3 * n_v, 3 * n_v),
            q_h: problem.add_variable("Q_h", VarKind::Symmetric, n_h, n_h),
            q_v: problem.add_variable("Q_v", VarKind::Symmetric, n_v, n_v),
            r_h: problem.add_variable("R_h", VarKind::Symmetric, n_h, n_h),
            r_v: problem.add_variable("R_v", VarKind::Symmetric, n_v, n_v),
            h_h: problem.add_variable("H_h", VarKind::Full, n_h, n_h),
            h_v: problem.add_variable("H_v", VarKind::Full, n_v, n_v),
            v: m.map(|m| problem.add_variable("V", VarKind::Full, m, n)),
        }
    }
}

/// Quadratic-form part of the functional derivative, affine in `(P, Q, R)`.
pub fn build_pi(ss: &StateSpace2D, sel: &SelectorBasis, vars: &LmiVariables) -> Result<AffineExpr> {
    if sel.n_h != ss.n_h || sel.n_v != ss.n_v {
        return Err(Error::Dimension(
            "selector basis does not match the system".into(),
        ));
    }
    let mut pi = AffineExpr::zeros(sel.dim());
    for (horizontal, tau, p, q, r) in [
        (true, ss.tau1, &vars.p_h, &vars.q_h, &vars.r_h),
        (false, ss.tau2, &vars.p_v, &vars.q_v, &vars.r_v),
    ] {
        let e = |i| sel.part(i, horizontal);
        let big_e = vstack(&[e(1), e(3) * tau, e(4) * tau]);
        let big_a = vstack(&[e(5), e(1) - e(2), e(1) + e(2) - e(3) * 2.0]);
        pi.add_he(p, &big_e, &big_a, 1.0);
        pi.add_quadratic(q, &e(1), 1.0);
        pi.add_quadratic(q, &e(2), -1.0);
        pi.add_quadratic(r, &e(5), tau * tau);
    }
    Ok(pi)
}

/// Subtracts `Gamma^T diag(R, 3R, 5R) Gamma` for both dimensions.
fn add_bessel_legendre_terms(
    expr: &mut AffineExpr,
    sel: &SelectorBasis,
    vars: &LmiVariables,
) -> Result<()> {
    for (horizontal, r) in [(true, &vars.r_h), (false, &vars.r_v)] {
        let e = |i| sel.part(i, horizontal);
        let (e1, e2, e3, e4) = (e(1), e(2), e(3), e(4));
        let gamma = gamma_rows(BL_ORDER, &[&e1, &e2, &e3, &e4])?;
        let nb = r.rows;
        for k in 0..=BL_ORDER {
            let g = gamma.rows(k * nb, nb).into_owned();
            expr.add_quadratic(r, &g, -((2 * k + 1) as f64));
        }
    }
    Ok(())
}

fn selector_rows(n_h: usize, n_v: usize, horizontal: bool) -> DMatrix<f64> {
    let n = n_h + n_v;
    let (start, len) = if horizontal { (0, n_h) } else { (n_h, n_v) };
    let mut j = DMatrix::zeros(len, n);
    j.view_mut((0, start), (len, len)).fill_with_identity();
    j
}

fn positivity_constraints(problem: &mut LmiProblem, vars: &LmiVariables) {
    for v in [
        &vars.p_h, &vars.p_v, &vars.q_h, &vars.q_v, &vars.r_h, &vars.r_v,
    ] {
        let mut e = AffineExpr::zeros(v.rows);
        e.add_quadratic(v, &DMatrix::identity(v.rows, v.rows), 1.0);
        problem.add_constraint(&format!("{} > 0", v.name), Sense::PositiveDefinite, e);
    }
}

fn check_dims(ss: &StateSpace2D, sel: &SelectorBasis, vars: &LmiVariables) -> Result<()> {
    let ok = sel.dim() == 5 * ss.n()
        && vars.p_h.rows == 3 * ss.n_h
        && vars.p_v.rows == 3 * ss.n_v
        && vars.h_h.rows == ss.n_h
        && vars.h_v.rows == ss.n_v;
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension(
            "LMI blocks do not match the system dimensions".into(),
        ))
    }
}

/// Zero-input stability LMI.
pub fn build_theorem1(ss: &StateSpace2D) -> Result<LmiProblem> {
    let sel = SelectorBasis::new(ss.n_h, ss.n_v);
    let mut problem = LmiProblem::default();
    let vars = LmiVariables::declare(&mut problem, ss.n_h, ss.n_v, None);
    check_dims(ss, &sel, &vars)?;
    positivity_constraints(&mut problem, &vars);

    let mut main = build_pi(ss, &sel, &vars)?;
    add_bessel_legendre_terms(&mut main, &sel, &vars)?;
    let m = sel.full(1) + sel.full(2) + sel.full(5);
    let g0 = &ss.a * sel.full(1) + &ss.a_tau * sel.full(2) - sel.full(5);
    for (horizontal, h) in [(true, &vars.h_h), (false, &vars.h_v)] {
        let j = selector_rows(ss.n_h, ss.n_v, horizontal);
        main.add_he(h, &(&j * &m), &(&j * &g0), 1.0);
    }
    problem.add_constraint("main < 0", Sense::NegativeDefinite, main);
    Ok(problem)
}

/// Form of the derivative term in the synthesis zero-equation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum G1Form {
    /// `-H e_5`, from the change of coordinates `x = H L`.
    #[default]
    HScaled,
    /// `-e_5` as printed.
    Literal,
}

/// State-feedback synthesis LMI in `(P, Q, R, H, V)`, with `K = V H^{-1}`.
pub fn build_theorem2(ss: &StateSpace2D, g1: G1Form) -> Result<LmiProblem> {
    let sel = SelectorBasis::new(ss.n_h, ss.n_v);
    let mut problem = LmiProblem::default();
    let vars = LmiVariables::declare(&mut problem, ss.n_h, ss.n_v, Some(ss.m()));
    check_dims(ss, &sel, &vars)?;
    positivity_constraints(&mut problem, &vars);

    let mut main = build_pi(ss, &sel, &vars)?;
    add_bessel_legendre_terms(&mut main, &sel, &vars)?;
    let m = sel.full(1) + sel.full(2) + sel.full(5);
    for (horizontal, h) in [(true, &vars.h_h), (false, &vars.h_v)] {
        let j = selector_rows(ss.n_h, ss.n_v, horizontal);
        // M^T A H e1 = (J A^T M)^T H_j (J e1) with H = sum_j J^T H_j J.
        main.add_he(h, &(&j * ss.a.transpose() * &m), &(&j * sel.full(1)), 1.0);
        main.add_he(
            h,
            &(&j * ss.a_tau.transpose() * &m),
            &(&j * sel.full(2)),
            1.0,
        );
        if g1 == G1Form::HScaled {
            main.add_he(h, &(&j * &m), &(&j * sel.full(5)), -1.0);
        }
    }
    if g1 == G1Form::Literal {
        let c = m.transpose() * sel.full(5);
        main.add_constant(&(-(&c + c.transpose())));
    }
    let v = vars.v.as_ref().expect("declared with inputs");
    if ss.m() > 0 {
        main.add_he(v, &(ss.b.transpose() * &m), sel.full(1), 1.0);
        main.add_he(v, &(ss.b_tau.transpose() * &m), sel.full(2), 1.0);
    }
    problem.add_constraint("main < 0", Sense::NegativeDefinite, main);
    Ok(problem)
}

/// `K = V H^{-1}`, rejecting `cond(H) > 1e8`.
pub fn extract_gain(h: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !h.is_square() || v.ncols() != h.nrows() {
        return Err(Error::Dimension(
            "H must be square with as many columns as V".into(),
        ));
    }
    let sv = h.clone().svd(false, false).singular_values;
    let (max, min) = (sv.max(), sv.min());
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(cond <= MAX_H_CONDITION) {
        return Err(Error::IllConditioned(cond));
    }
    let inv = h
        .clone()
        .try_inverse()
        .ok_or(Error::IllConditioned(f64::INFINITY))?;
    Ok(v * inv)
}

/// Block-diagonal `H = diag(H_h, H_v)`.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    m.view_mut((0, 0), a.shape()).copy_from(a);
    m.view_mut(a.shape(), b.shape()).copy_from(b);
    m
}

/// Diagonal similarity (powers of two) equalizing row and column norms of
/// `|A| + |A_tau|`. Returns the scaled system and `d` with `x = diag(d) x_s`.
pub fn balance(ss: &StateSpace2D) -> (StateSpace2D, DVector<f64>) {
    let n = ss.n();
    let mut m = ss.a.abs() + ss.a_tau.abs();
    let mut d = DVector::from_element(n, 1.0);
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let c: f64 = (0..n).filter(|&j| j != i).map(|j| m[(j, i)]).sum();
            let r: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)]).sum();
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let f = 2f64.powi(((r / c).sqrt().log2()).round() as i32);
            if f != 1.0 && (c * f + r / f) < 0.95 * (c + r) {
                d[i] *= f;
                m.column_mut(i).scale_mut(f);
                m.row_mut(i).scale_mut(1.0 / f);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (scale_system(ss, &d), d)
}

pub fn scale_system(ss: &StateSpace2D, d: &DVector<f64>) -> StateSpace2D {
    let dm = DMatrix::from_diagonal(d);
    let dinv = DMatrix::from_diagonal(&d.map(|v| 1.0 / v));
    StateSpace2D {
        a: &dinv * &ss.a * &dm,
        a_tau: &dinv * &ss.a_tau * &dm,
        b: &dinv * &ss.b,
        b_tau: &dinv * &ss.b_tau,
        ..ss.clone()
    }
}

/// Decision variables at a solution, in the coordinates the problem was
/// built in (see `scaling`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCertificate {
    #[serde(with = "matrix_serde")]
    pub p_h: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub p_v: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub q_h: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub q_v: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub r_h: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub r_v: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub h: DMatrix<f64>,
    #[serde(with = "matrix_serde::option", default)]
    pub v: Option<DMatrix<f64>>,
    pub scaling: Option<Vec<f64>>,
}

impl LyapunovCertificate {
    pub fn from_assignment(problem: &LmiProblem, values: &[f64]) -> Option<Self> {
        let get = |n: &str| problem.block(n, values);
        Some(Self {
            p_h: get("P_h")?,
            p_v: get("P_v")?,
            q_h: get("Q_h")?,
            q_v: get("Q_v")?,
            r_h: get("R_h")?,
            r_v: get("R_v")?,
            h: block_diag(&get("H_h")?, &get("H_v")?),
            v: get("V"),
            scaling: problem.scaling.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub balance: bool,
    pub g1: G1Form,
    pub solve: SolveOptions,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            balance: true,
            g1: G1Form::HScaled,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub verdict: StabilityVerdict,
    pub certificate: Option<LyapunovCertificate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Synthesis {
    pub verdict: StabilityVerdict,
    pub certificate: Option<LyapunovCertificate>,
    /// Gain in the original coordinates.
    #[serde(with = "matrix_serde::option", default)]
    pub gain: Option<DMatrix<f64>>,
}

fn prepared(ss: &StateSpace2D, balance_it: bool) -> (StateSpace2D, Option<DVector<f64>>) {
    if balance_it {
        let (s, d) = balance(ss);
        (s, Some(d))
    } else {
        (ss.clone(), None)
    }
}

/// Zero-input stability test.
pub fn analyze(ss: &StateSpace2D, opts: &AnalysisOptions) -> Result<Analysis> {
    let (work, d) = prepared(ss, opts.balance);
    let mut problem = build_theorem1(&work)?;
    problem.scaling = d.map(|d| d.iter().copied().collect());
    let verdict = solve_with(&problem, &opts.solve);
    let certificate = match (&verdict.status, &verdict.assignment) {
        (Status::Feasible, Some(x)) => LyapunovCertificate::from_assignment(&problem, x),
        _ => None,
    };
    Ok(Analysis {
        verdict,
        certificate,
    })
}

/// Feedback synthesis; the gain is mapped back through the balancing.
/// Gain extraction errors are returned after a feasible verdict.
pub fn synthesize(ss: &StateSpace2D, opts: &AnalysisOptions) -> Result<Synthesis> {
    let (work, d) = prepared(ss, opts.balance);
    let mut problem = build_theorem2(&work, opts.g1)?;
    problem.scaling = d.as_ref().map(|d| d.iter().copied().collect());
    let verdict = solve_with(&problem, &opts.solve);
    let (certificate, gain) = match (&verdict.status, &verdict.assignment) {
        (Status::Feasible, Some(x)) => {
            let cert =
                LyapunovCertificate::from_assignment(&problem, x).expect("theorem variables");
            let v = cert.v.clone().expect("synthesis has V");
            let k_scaled = extract_gain(&cert.h, &v)?;
            let k = match &d {
                Some(d) => k_scaled * DMatrix::from_diagonal(&d.map(|v| 1.0 / v)),
                None => k_scaled,
            };
            (Some(cert), Some(k))
        }
        _ => (None, None),
    };
    Ok(Synthesis {
        verdict,
        certificate,
        gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decoupled() -> StateSpace2D {
        StateSpace2D::autonomous(
            2,
            2,
            -DMatrix::identity(4, 4),
            DMatrix::identity(4, 4) * 0.1,
            0.1,
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn symmetric_positions_round_trip() {
        let mut p = LmiProblem::default();
        let v = p.add_variable("X", VarKind::Symmetric, 3, 3);
        assert_eq!(v.scalar_count(), 6);
        let pos: Vec<_> = (0..6).map(|s| v.position(s)).collect();
        assert_eq!(pos, vec![(0, 0), (0, 1), (1, 1), (0, 2), (1, 2), (2, 2)]);
        let m = v.extract(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(m, m.transpose());
        assert_eq!(m[(2, 1)], 5.0);
    }

    #[test]
    fn empty_problem_is_feasible() {
        assert!(solve(&LmiProblem::default()).is_feasible());
    }

    #[test]
    fn negative_identity_is_infeasible() {
        let mut p = LmiProblem::default();
        let mut e = AffineExpr::zeros(3);
        e.add_constant(&-DMatrix::identity(3, 3));
        p.add_constraint("-I > 0", Sense::PositiveDefinite, e);
        assert_eq!(solve(&p).status, Status::Infeasible);
    }

    #[test]
    fn zero_assignment_gives_zero_pi() {
        let ss = decoupled();
        let sel = SelectorBasis::new(2, 2);
        let mut p = LmiProblem::default();
        let vars = LmiVariables::declare(&mut p, 2, 2, None);
        let pi = build_pi(&ss, &sel, &vars).unwrap();
        let z = pi.evaluate(&vec![0.0; p.scalar_count()]);
        assert_eq!(z.amax(), 0.0);
        let x: Vec<f64> = (0..p.scalar_count())
            .map(|i| (i as f64 * 0.37).sin())
            .collect();
        let m = pi.evaluate(&x);
        assert!((&m - m.transpose()).amax() < 1e-14);
    }

    #[test]
    fn dimensions() {
        let p = build_theorem1(&decoupled()).unwrap();
        let main = p.constraints.last().unwrap();
        assert_eq!(main.expr.dim, 20);
        assert_eq!(p.variable("P_h").unwrap().rows, 6);
        assert_eq!(p.variable("P_v").unwrap().rows, 6);
    }

    #[test]
    fn decoupled_system_is_feasible() {
        let a = analyze(&decoupled(), &AnalysisOptions::default()).unwrap();
        assert!(a.verdict.is_feasible(), "{:?}", a.verdict.diagnostics);
        assert!(a.verdict.margin.unwrap() > 0.0);
    }

    #[test]
    fn gain_extraction() {
        let v = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(extract_gain(&DMatrix::identity(4, 4), &v).unwrap(), v);
        assert_eq!(
            extract_gain(&DMatrix::identity(4, 4), &DMatrix::zeros(2, 4)).unwrap(),
            DMatrix::zeros(2, 4)
        );
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 1.0, 1e-9]));
        assert!(matches!(
            extract_gain(&bad, &v),
            Err(Error::IllConditioned(_))
        ));
    }

    #[test]
    fn balancing_is_a_similarity() {
        let ss = crate::published::scenario_b().system;
        let (s, d) = balance(&ss);
        let back = scale_system(&s, &d.map(|v| 1.0 / v));
        assert!((back.a - &ss.a).amax() < 1e-9);
        assert!(d.iter().all(|v| v.log2().fract() == 0.0));
    }

    #[test]
    fn problem_json_round_trip() {
        let p = build_theorem1(&decoupled()).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: LmiProblem = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
