//! Bessel-Legendre integral inequality of order `N <= 2`.
//!
//! For `x` continuously differentiable on `[a, b]`, `tau = b - a` and `Z > 0`:
//!
//! ```text
//! integral_a^b x'(u)^T Z x'(u) du >= (1/tau) sum_{k=0}^{N} (2k+1) Omega_k^T Z Omega_k
//! ```
//!
//! with `Omega_k = pi_N(k) Gamma_N`, `Gamma_N = [x(b); x(a); chi_0/tau; ...; chi_{N-1}/tau]`
//! and `chi_i = integral_a^b F_i(u) x(u) du` against shifted Legendre polynomials.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 2;
pub const GAUSS_NODES: usize = 64;

/// Gauss-Legendre rule on `[-1, 1]`.
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on `P_n` from Chebyshev initial guesses.
    pub fn new(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre_with_derivative(n, x);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn standard() -> &'static GaussLegendre {
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        RULE.get_or_init(|| GaussLegendre::new(GAUSS_NODES))
    }

    /// Composite rule with `panels` equal subintervals of `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, panels: usize, mut f: F) -> f64 {
        let h = (b - a) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let lo = a + h * p as f64;
            let mid = lo + 0.5 * h;
            let mut s = 0.0;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                s += w * f(mid + 0.5 * h * x);
            }
            total += 0.5 * h * s;
        }
        total
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn check_interval(a: f64, b: f64) -> Result<()> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!("invalid interval [{a}, {b}]")));
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shifted Legendre polynomial `F_i` on `[a, b]`, with `F_i(b) = 1`.
pub fn legendre_weight(i: usize, u: f64, a: f64, b: f64) -> Result<f64> {
    check_interval(a, b)?;
    if !(a..=b).contains(&u) {
        return Err(Error::Domain(format!("u = {u} outside [{a}, {b}]")));
    }
    Ok(shifted_legendre(i, (u - a) / (b - a)))
}

fn shifted_legendre(i: usize, s: f64) -> f64 {
    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
    let mut acc = 0.0;
    let mut sl = 1.0;
    for l in 0..=i {
        let term_sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        acc += term_sign * binomial(i, l) * binomial(i + l, l) * sl;
        sl *= s;
    }
    sign * acc
}

/// Coefficient tables of the inequality for one order.
#[derive(Clone, Debug, PartialEq)]
pub struct BLBasis {
    pub order: usize,
    pub block_dim: usize,
    /// `theta[k][j]` for `k = 0..=N`, `j = 0..N`.
    pub theta: Vec<Vec<f64>>,
    /// Scalar coefficients of `pi_N(k)` over `[x(b), x(a), chi_0/tau, ..., chi_{N-1}/tau]`.
    pub pi_rows: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl BLBasis {
    pub fn new(order: usize, block_dim: usize) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::Domain(format!("order {order} above {MAX_ORDER}")));
        }
        let pow = |e: usize| if e % 2 == 0 { 1.0 } else { -1.0 };
        let theta: Vec<Vec<f64>> = (0..=order)
            .map(|k| {
                (0..order)
                    .map(|j| {
                        if j <= k {
                            -((2 * j + 1) as f64) * (1.0 - pow(k + j))
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let pi_rows = (0..=order)
            .map(|k| {
                let mut row = vec![1.0, -pow(k)];
                row.extend_from_slice(&theta[k]);
                row
            })
            .collect();
        let weights = (0..=order).map(|k| (2 * k + 1) as f64).collect();
        Ok(Self {
            order,
            block_dim,
            theta,
            pi_rows,
            weights,
        })
    }

    /// Block row `pi_N(k)` as an `n x (N+2)n` matrix.
    pub fn pi_row(&self, k: usize) -> DMatrix<f64> {
        let n = self.block_dim;
        let row = &self.pi_rows[k];
        let mut m = DMatrix::zeros(n, row.len() * n);
        for (c, v) in row.iter().enumerate() {
            for i in 0..n {
                m[(i, c * n + i)] = *v;
            }
        }
        m
    }

    /// `sum_k (2k+1) pi_N(k)^T Z pi_N(k)`.
    pub fn weighted_gram(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let size = (self.order + 2) * self.block_dim;
        let mut g = DMatrix::zeros(size, size);
        for (k, w) in self.weights.iter().enumerate() {
            let p = self.pi_row(k);
            g += *w * p.transpose() * z * p;
        }
        g
    }
}

/// A vector-valued function with its derivative.
pub trait SmoothPath {
    fn dim(&self) -> usize;
    fn value(&self, u: f64) -> DVector<f64>;
    fn derivative(&self, u: f64) -> DVector<f64>;

    /// Number of smooth pieces; one quadrature panel is used per piece.
    fn pieces(&self) -> usize {
        1
    }
}

/// `x(u) = sum_k c_k u^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyPath {
    pub coeffs: Vec<DVector<f64>>,
}

impl PolyPath {
    pub fn new(coeffs: Vec<DVector<f64>>) -> Result<Self> {
        let Some(first) = coeffs.first() else {
            return Err(Error::Dimension(
                "polynomial needs at least one coefficient".into(),
            ));
        };
        if coeffs.iter().any(|c| c.len() != first.len()) {
            return Err(Error::Dimension(
                "coefficient vectors differ in length".into(),
            ));
        }
        Ok(Self { coeffs })
    }
}

impl SmoothPath for PolyPath {
    fn dim(&self) -> usize {
        self.coeffs[0].len()
    }

    fn value(&self, u: f64) -> DVector<f64> {
        self.coeffs
            .iter()
            .rev()
            .fold(DVector::zeros(self.dim()), |acc, c| acc * u + c)
    }

    fn derivative(&self, u: f64) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dim());
        for (k, c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * u + c * k as f64;
        }
        acc
    }
}

/// Piecewise-linear interpolation of dense samples with matching
/// piecewise-constant derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPath {
    pub a: f64,
    pub b: f64,
    pub samples: Vec<DVector<f64>>,
}

impl SampledPath {
    fn locate(&self, u: f64) -> (usize, f64, f64) {
        let segs = self.samples.len() - 1;
        let h = (self.b - self.a) / segs as f64;
        let pos = ((u - self.a) / h).clamp(0.0, segs as f64);
        let i = (pos.floor() as usize).min(segs - 1);
        (i, pos - i as f64, h)
    }
}

impl SmoothPath for SampledPath {
    fn dim(&self) -> usize {
        self.samples[0].len()
    }

    fn value(&self, u: f64) -> DVector<f64> {
        let (i, t, _) = self.locate(u);
        &self.samples[i] * (1.0 - t) + &self.samples[i + 1] * t
    }

    fn derivative(&self, u: f64) -> DVector<f64> {
        let (i, _, h) = self.locate(u);
        (&self.samples[i + 1] - &self.samples[i]) / h
    }

    fn pieces(&self) -> usize {
        self.samples.len() - 1
    }
}

fn panels_for<P: SmoothPath + ?Sized>(path: &P) -> usize {
    path.pieces().max(1)
}

fn finite(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Quadrature(format!("non-finite {what}")))
    }
}

/// Moments `chi_i = integral_a^b F_i(u) x(u) du` for `i < count`.
pub fn moments<P: SmoothPath + ?Sized>(
    path: &P,
    a: f64,
    b: f64,
    count: usize,
) -> Result<Vec<DVector<f64>>> {
    check_interval(a, b)?;
    let rule = GaussLegendre::standard();
    let panels = panels_for(path);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut chi = DVector::zeros(path.dim());
        for c in 0..path.dim() {
            chi[c] = rule.integrate(a, b, panels, |u| {
                shifted_legendre(i, (u - a) / (b - a)) * path.value(u)[c]
            });
        }
        finite(&chi, "moment")?;
        out.push(chi);
    }
    Ok(out)
}

/// `integral_a^b x'(u)^T Z x'(u) du`.
pub fn derivative_energy<P: SmoothPath + ?Sized>(
    path: &P,
    z: &DMatrix<f64>,
    a: f64,
    b: f64,
) -> Result<f64> {
    check_interval(a, b)?;
    check_weight(path.dim(), z)?;
    let v = GaussLegendre::standard().integrate(a, b, panels_for(path), |u| {
        let d = path.derivative(u);
        (d.transpose() * z * &d)[(0, 0)]
    });
    if !v.is_finite() {
        return Err(Error::Quadrature("non-finite derivative energy".into()));
    }
    Ok(v)
}

fn check_weight(n: usize, z: &DMatrix<f64>) -> Result<()> {
    if z.nrows() != n || z.ncols() != n {
        return Err(Error::Dimension(format!("weight must be {n}x{n}")));
    }
    Ok(())
}

/// `Gamma_N = [x(b); x(a); chi_0/tau; ...; chi_{N-1}/tau]`.
pub fn gamma_vector<P: SmoothPath + ?Sized>(
    path: &P,
    a: f64,
    b: f64,
    order: usize,
) -> Result<DVector<f64>> {
    let n = path.dim();
    let tau = b - a;
    let chis = moments(path, a, b, order)?;
    let xb = path.value(b);
    let xa = path.value(a);
    finite(&xb, "endpoint")?;
    finite(&xa, "endpoint")?;
    let mut g = DVector::zeros((order + 2) * n);
    g.rows_mut(0, n).copy_from(&xb);
    g.rows_mut(n, n).copy_from(&xa);
    for (i, chi) in chis.iter().enumerate() {
        g.rows_mut((i + 2) * n, n).copy_from(&(chi / tau));
    }
    Ok(g)
}

/// Right-hand side of the inequality for `N = order`.
pub fn bl_lower_bound<P: SmoothPath + ?Sized>(
    path: &P,
    z: &DMatrix<f64>,
    a: f64,
    b: f64,
    order: usize,
) -> Result<f64> {
    check_interval(a, b)?;
    check_weight(path.dim(), z)?;
    let basis = BLBasis::new(order, path.dim())?;
    let g = gamma_vector(path, a, b, order)?;
    Ok((g.transpose() * basis.weighted_gram(z) * &g)[(0, 0)] / (b - a))
}

/// Stacked rows `[pi_N(0); ...; pi_N(N)]` applied to selectors
/// `[e_b, e_a, e_chi0, ..., e_chi{N-1}]` of one dimension.
pub fn gamma_rows(order: usize, selectors: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    if selectors.len() != order + 2 {
        return Err(Error::Dimension(format!(
            "order {order} needs {} selectors",
            order + 2
        )));
    }
    let (n, cols) = selectors[0].shape();
    if selectors.iter().any(|s| s.shape() != (n, cols)) {
        return Err(Error::Dimension("selectors differ in shape".into()));
    }
    let basis = BLBasis::new(order, n)?;
    let mut out = DMatrix::zeros((order + 1) * n, cols);
    for (k, row) in basis.pi_rows.iter().enumerate() {
        let mut block = out.rows_mut(k * n, n);
        for (c, sel) in row.iter().zip(selectors) {
            if *c != 0.0 {
                block += *sel * *c;
            }
        }
    }
    Ok(out)
}
