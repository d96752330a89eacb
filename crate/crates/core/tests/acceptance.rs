//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use aqm2d_core::bessel_legendre::{bl_lower_bound, PolyPath};
use aqm2d_core::linearize::jacobian_rel_error;
use aqm2d_core::published::{self, X0};
use aqm2d_core::sim2d::{summarize, Outcome, ProbabilityInput};
use aqm2d_core::{
    analyze, decay_profile, diff_report, diff_report_flagged, fd_jacobians, jacobians,
    jacobians_with, residual, simulate_linear, simulate_nonlinear, solve_equilibrium, synthesize,
    AnalysisOptions, BoundaryData, Ecn, EquilibriumPoint, GridSpec, NetworkParams, Scenario,
    StateSpace2D, Status, TauSensitivity, Trajectory2D,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Golden linearization.
const GOLDEN_REL_A: f64 = 0.01;
const GOLDEN_ABS_A: f64 = 0.02;
const GOLDEN_REL_B: f64 = 0.005;
const GOLDEN_RUNTIME: Duration = Duration::from_secs(1);
// Jacobian oracle.
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-6;
const FD_POINTS: usize = 100;
const FD_RUNTIME: Duration = Duration::from_secs(10);
// Integral inequality.
const BL_SAMPLES: usize = 1000;
const BL_MAX_DEGREE: usize = 5;
const BL_TOL: f64 = 1e-10;
const BL_ORACLE_REL: f64 = 1e-9;
const BL_RUNTIME: Duration = Duration::from_secs(30);
// Stability analysis.
const THM1_RUNTIME: Duration = Duration::from_secs(60);
const THM2_RUNTIME: Duration = Duration::from_secs(120);
const TAIL_FRACTION: f64 = 0.8;
const TAIL_THRESHOLD: f64 = 1e-3;
const MIN_GRID: usize = 200;
// Simulator properties.
const SUPERPOSITION_TOL: f64 = 1e-10;
const HALVING_TOL: f64 = 0.05;
const SMALL_SIGNAL_AMPLITUDE: f64 = 1e-3;
const SMALL_SIGNAL_TOL: f64 = 0.05;
// Equilibrium sweep.
const SWEEP_POINTS: usize = 50;
const RESIDUAL_TOL: f64 = 1e-9;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run(id: u32, title: &str, f: fn() -> Verdict) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {id} [{title}]: {tag} in {secs:.2}s; {detail}");
    result.is_ok()
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 8] = [
        (1, "linearization golden, scenario A", golden_a),
        (2, "linearization golden, scenario B", golden_b),
        (
            3,
            "analytic vs finite-difference Jacobians",
            jacobian_oracle,
        ),
        (4, "Bessel-Legendre inequality suite", bessel_legendre_suite),
        (5, "zero-input stability LMI", stability_lmi),
        (6, "feedback synthesis LMI and closed loops", synthesis_lmi),
        (7, "simulator properties", simulator_properties),
        (8, "equilibrium residual sweep", equilibrium_sweep),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, title, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|s| title.contains(s.as_str())) {
            continue;
        }
        ran += 1;
        if !run(id, title, f) {
            failed += 1;
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn published_linearization(case: &published::PublishedCase, conv: TauSensitivity) -> StateSpace2D {
    let eq = EquilibriumPoint::from_override(&case.params, &case.operating_point).unwrap();
    jacobians_with(&eq, &case.params, conv).unwrap()
}

fn golden_a() -> Verdict {
    let start = Instant::now();
    let case = published::scenario_a();
    let ss = published_linearization(&case, TauSensitivity::Inverted);
    let report =
        diff_report_flagged(&ss, &case.system, GOLDEN_REL_A, GOLDEN_ABS_A, &case.flagged).unwrap();
    let elapsed = start.elapsed();
    let exact = published_linearization(&case, TauSensitivity::Exact);
    let exact_report = diff_report(&exact, &case.system, GOLDEN_REL_A, GOLDEN_ABS_A).unwrap();
    println!("queue-sign convention as printed:\n{report}");
    println!("exact queue-sign convention:\n{exact_report}");

    // Every printed nonzero in A, A_tau and the p^v columns must agree,
    // except at the two documented placements.
    let documented = ["B(2,1)", "B_tau(2,2)"];
    let undocumented: Vec<String> = report
        .entries
        .iter()
        .map(|e| e.position())
        .filter(|p| !documented.contains(&p.as_str()))
        .collect();
    let tol = |p: f64| (GOLDEN_REL_A * p.abs()).max(GOLDEN_ABS_A);
    let mut unmatched = Vec::new();
    for (name, c, p, cols) in [
        ("A", &ss.a, &case.system.a, 0..4),
        ("A_tau", &ss.a_tau, &case.system.a_tau, 0..4),
        ("B", &ss.b, &case.system.b, 1..2),
        ("B_tau", &ss.b_tau, &case.system.b_tau, 1..2),
    ] {
        for j in cols {
            for i in 0..4 {
                let pv = p[(i, j)];
                let pos = format!("{name}({},{})", i + 1, j + 1);
                if pv != 0.0
                    && (c[(i, j)] - pv).abs() > tol(pv)
                    && !documented.contains(&pos.as_str())
                {
                    unmatched.push(pos);
                }
            }
        }
    }
    let listed = documented.iter().all(|p| report.mentions(p));
    check(
        undocumented.is_empty() && unmatched.is_empty() && listed && elapsed < GOLDEN_RUNTIME,
        format!(
            "undocumented mismatches {undocumented:?}, unmatched printed entries {unmatched:?}, \
             documented placements listed: {listed}, {:.1} ms",
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn golden_b() -> Verdict {
    let case = published::scenario_b();
    let ss = published_linearization(&case, TauSensitivity::Inverted);
    let report =
        diff_report_flagged(&ss, &case.system, GOLDEN_REL_B, GOLDEN_ABS_A, &case.flagged).unwrap();
    println!("{report}");
    let golden = [
        ("A(2,1)", ss.a[(1, 0)], 933.8),
        ("A_tau(1,2)", ss.a_tau[(0, 1)], 0.4669),
        ("B(3,2)", ss.b[(2, 1)], -5287.4),
        ("B(4,2)", ss.b[(3, 1)], -5286.4),
    ];
    let bad: Vec<String> = golden
        .iter()
        .filter(|(_, c, p)| (c - p).abs() > GOLDEN_REL_B * p.abs())
        .map(|(n, c, p)| format!("{n}: {c} vs {p}"))
        .collect();
    let flagged = ["A(3,2)", "A(3,4)", "A_tau(3,4)"];
    let missing: Vec<&str> = flagged
        .iter()
        .copied()
        .filter(|p| !report.mentions(p))
        .collect();
    check(
        bad.is_empty() && missing.is_empty(),
        format!("golden entries off: {bad:?}; flagged entries missing from report: {missing:?}"),
    )
}

/// Parameters whose equilibrium exists: scenario B needs `tau1 >= t_prop`.
fn random_params(rng: &mut ChaCha8Rng, scenario: Scenario, ecn: Ecn) -> NetworkParams {
    let n: f64 = rng.gen_range(10.0..1000.0);
    let lambda = rng.gen_range(1.0..n.min(10.0));
    let c = rng.gen_range(1e3..5e4);
    let q_ref = rng.gen_range(10.0..5000.0);
    let t_prop = match scenario {
        Scenario::A => rng.gen_range(1e-3..0.2),
        Scenario::B => {
            let p = 2.0 * n * n / (2.0 * n * n + lambda);
            let admitted = if ecn == Ecn::On { 1.0 } else { 1.0 - p };
            rng.gen_range(0.0..0.9) * n * admitted / c
        }
    };
    NetworkParams::new(n, lambda, c, t_prop, q_ref, scenario, ecn)
}

const COMBOS: [(Scenario, Ecn); 4] = [
    (Scenario::A, Ecn::On),
    (Scenario::A, Ecn::Off),
    (Scenario::B, Ecn::On),
    (Scenario::B, Ecn::Off),
];

fn jacobian_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut count = 0;
    for (scenario, ecn) in COMBOS {
        for _ in 0..FD_POINTS {
            let params = random_params(&mut rng, scenario, ecn);
            let eq =
                solve_equilibrium(&params).map_err(|e| format!("{scenario:?}/{ecn:?}: {e}"))?;
            let an = jacobians(&eq, &params).unwrap();
            let fd = fd_jacobians(&eq, &params, FD_STEP).unwrap();
            worst = worst.max(jacobian_rel_error(&an, &fd));
            count += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= FD_TOL && elapsed < FD_RUNTIME,
        format!(
            "{count} equilibria, worst relative error {worst:.2e}, {:.1} ms",
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

/// Exact evaluation of the inequality for a polynomial path, written in the
/// normalized variable `s = (u - a) / (b - a)` with monomial integrals.
struct ExactPoly {
    /// `x(a + L s) = sum_j d_j s^j`.
    d: Vec<DVector<f64>>,
    len: f64,
}

impl ExactPoly {
    fn new(coeffs: &[DVector<f64>], a: f64, b: f64) -> Self {
        let len = b - a;
        let binom =
            |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
        let dim = coeffs[0].len();
        let d = (0..coeffs.len())
            .map(|j| {
                let mut v = DVector::zeros(dim);
                for (k, c) in coeffs.iter().enumerate().skip(j) {
                    v += c * (binom(k, j) * a.powi((k - j) as i32) * len.powi(j as i32));
                }
                v
            })
            .collect();
        Self { d, len }
    }

    fn lhs(&self, z: &DMatrix<f64>) -> f64 {
        let mut acc = 0.0;
        for (j, dj) in self.d.iter().enumerate().skip(1) {
            for (l, dl) in self.d.iter().enumerate().skip(1) {
                acc += (j * l) as f64 * (dj.transpose() * z * dl)[(0, 0)] / (j + l - 1) as f64;
            }
        }
        acc / self.len
    }

    /// `integral_a^b F_i(u) x(u) du` with `F_0 = 1`, `F_1 = 2s - 1`,
    /// `F_2 = 6s^2 - 6s + 1`.
    fn moment(&self, i: usize) -> DVector<f64> {
        let f: &[f64] = match i {
            0 => &[1.0],
            1 => &[-1.0, 2.0],
            _ => &[1.0, -6.0, 6.0],
        };
        let mut out = DVector::zeros(self.d[0].len());
        for (m, fm) in f.iter().enumerate() {
            for (j, dj) in self.d.iter().enumerate() {
                out += dj * (fm / (j + m + 1) as f64);
            }
        }
        out * self.len
    }

    fn bound(&self, z: &DMatrix<f64>, order: usize) -> f64 {
        let xa = self.d[0].clone();
        let xb = self
            .d
            .iter()
            .fold(DVector::zeros(xa.len()), |acc, d| acc + d);
        let chi0 = self.moment(0) / self.len;
        let chi1 = self.moment(1) / self.len;
        let omega = [&xb - &xa, &xb + &xa - chi0 * 2.0, &xb - &xa - chi1 * 6.0];
        let mut acc = 0.0;
        for (k, w) in omega.iter().enumerate().take(order + 1) {
            acc += (2 * k + 1) as f64 * (w.transpose() * z * w)[(0, 0)];
        }
        acc / self.len
    }
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &l * l.transpose() + DMatrix::identity(n, n) * 0.1
}

fn bessel_legendre_suite() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dim = 2;
    let mut worst_gap = f64::INFINITY;
    let mut worst_order = f64::INFINITY;
    let mut worst_oracle = 0.0f64;
    let mut worst_affine = 0.0f64;
    for sample in 0..BL_SAMPLES {
        let degree = rng.gen_range(0..=BL_MAX_DEGREE);
        let coeffs: Vec<DVector<f64>> = (0..=degree)
            .map(|_| DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let a = rng.gen_range(-2.0..2.0);
        let b = a + rng.gen_range(0.1..3.0);
        let z = random_pd(&mut rng, dim);
        let exact = ExactPoly::new(&coeffs, a, b);
        let path = PolyPath::new(coeffs).unwrap();
        let lhs = exact.lhs(&z);
        let scale = lhs.abs().max(1.0);
        let bounds: Vec<f64> = (0..=2)
            .map(|n| bl_lower_bound(&path, &z, a, b, n).unwrap())
            .collect();
        for (n, bound) in bounds.iter().enumerate() {
            worst_gap = worst_gap.min((lhs - bound) / scale);
            let oracle = exact.bound(&z, n);
            worst_oracle = worst_oracle.max((bound - oracle).abs() / oracle.abs().max(1.0));
        }
        worst_order = worst_order
            .min((bounds[1] - bounds[0]) / scale)
            .min((bounds[2] - bounds[1]) / scale);

        // Affine path on the same interval: N = 0 is tight.
        if sample % 10 == 0 {
            let affine = PolyPath::new(vec![
                DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0)),
                DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0)),
            ])
            .unwrap();
            let ex = ExactPoly::new(&affine.coeffs, a, b);
            let l = ex.lhs(&z);
            let bound = bl_lower_bound(&affine, &z, a, b, 0).unwrap();
            worst_affine = worst_affine.max((l - bound).abs() / l.abs().max(1.0));
        }
    }
    let elapsed = start.elapsed();
    check(
        worst_gap >= -BL_TOL
            && worst_order >= -BL_TOL
            && worst_affine <= BL_TOL
            && worst_oracle <= BL_ORACLE_REL
            && elapsed < BL_RUNTIME,
        format!(
            "{BL_SAMPLES} polynomials: min (LHS - bound) {worst_gap:.2e}, min hierarchy step {worst_order:.2e}, \
             affine tightness {worst_affine:.2e}, bound vs exact oracle {worst_oracle:.2e}, {:.1} ms",
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

/// Principal branch of Lambert W for `z > -1/e`.
fn lambert_w0(z: f64) -> f64 {
    let mut w = if z < 1.0 { z } else { z.ln() };
    for _ in 0..100 {
        let ew = w.exp();
        let step = (w * ew - z) / (ew * (w + 1.0));
        w -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    w
}

/// Rightmost root of `s - a - b e^{-s tau}` for real `b > 0`, from the
/// principal Lambert branch, with its characteristic residual.
fn rightmost_root(a: f64, b: f64, tau: f64) -> (f64, f64) {
    let s = a + lambert_w0(b * tau * (-a * tau).exp()) / tau;
    (s, (s - a - b * (-s * tau).exp()).abs())
}

fn decoupled_stable() -> StateSpace2D {
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

fn stability_lmi() -> Verdict {
    let start = Instant::now();
    let opts = AnalysisOptions::default();
    let mut details = Vec::new();
    let mut ok = true;
    for (name, case) in [
        ("A", published::scenario_a()),
        ("B", published::scenario_b()),
    ] {
        let v = analyze(&case.system, &opts).unwrap().verdict;
        ok &= v.status == Status::Infeasible;
        details.push(format!("open loop {name}: {:?}", v.status));
    }
    let (root, res) = rightmost_root(-1.0, 0.1, 0.1);
    // |s + 1| >= 1 > 0.1 >= |0.1 e^{-0.1 s}| whenever Re s >= 0.
    let delay_independent = 0.1 < 1.0;
    let oracle_stable = root < 0.0 && res < 1e-12 && delay_independent;
    let v = analyze(&decoupled_stable(), &opts).unwrap().verdict;
    let margin = v.margin.unwrap_or(f64::NAN);
    ok &= oracle_stable && v.status == Status::Feasible && margin > 0.0;
    details.push(format!(
        "decoupled test system: {:?}, re-verified margin {margin:.2e}, rightmost root {root:.6} (residual {res:.1e})",
        v.status
    ));
    let elapsed = start.elapsed();
    ok &= elapsed < THM1_RUNTIME;
    check(
        ok,
        format!(
            "{}; {:.1} ms",
            details.join("; "),
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn published_grid(name: &str) -> GridSpec {
    // Explicit Euler needs h |lambda| small; scenario B has entries near 1e3.
    let h = if name == "A" { 0.01 } else { 0.001 };
    GridSpec::new(h, h, 2000, 2000, published::TAU1, published::TAU2).unwrap()
}

fn synthesis_lmi() -> Verdict {
    let start = Instant::now();
    let opts = AnalysisOptions::default();
    let bdry = BoundaryData::from_state(&X0, 2);
    let mut ok = true;
    let mut details = Vec::new();
    for (name, case) in [
        ("A", published::scenario_a()),
        ("B", published::scenario_b()),
    ] {
        let spec = published_grid(name);
        ok &= spec.m1 >= MIN_GRID && spec.m2 >= MIN_GRID;
        let syn = synthesize(&case.system, &opts).unwrap();
        ok &= syn.verdict.status == Status::Feasible;
        let Some(k) = syn.gain else {
            details.push(format!("{name}: synthesis {:?}", syn.verdict.status));
            ok = false;
            continue;
        };
        let run = |gain: Option<&DMatrix<f64>>| {
            let traj = simulate_linear(&case.system, gain, &bdry, &spec).unwrap();
            summarize(&traj, TAIL_FRACTION, TAIL_THRESHOLD)
        };
        let synth = run(Some(&k));
        let printed = run(Some(&case.gain));
        let open = run(None);
        ok &= synth.outcome == Outcome::Stable
            && printed.outcome == Outcome::Stable
            && open.divergence.is_some();
        details.push(format!(
            "{name}: synthesis {:?} (margin {:.1e}), synthesized-gain tail/s0 {:.1e} {:?}, \
             printed-gain tail/s0 {:.1e} {:?}, open loop divergence at {:?}",
            syn.verdict.status,
            syn.verdict.margin.unwrap_or(f64::NAN),
            synth.tail_max / synth.s0,
            synth.outcome,
            printed.tail_max / printed.s0,
            printed.outcome,
            open.divergence.map(|d| (d.i, d.j)),
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < THM2_RUNTIME;
    check(
        ok,
        format!(
            "{}; {:.1} ms",
            details.join("; "),
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn max_abs_diff(
    a: &Trajectory2D,
    b: &Trajectory2D,
    m1: usize,
    m2: usize,
    scale: f64,
) -> (f64, f64) {
    let mut diff = 0.0f64;
    let mut norm = 0.0f64;
    for i in 0..=m1 {
        for j in 0..=m2 {
            let (x, y) = (a.state(i, j), b.state(i, j));
            diff = diff.max((&x - &y * scale).amax());
            norm = norm.max((&y * scale).amax());
        }
    }
    (diff, norm)
}

fn simulator_properties() -> Verdict {
    let case = published::scenario_a();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut details = Vec::new();
    let mut ok = true;

    // Superposition of boundary data.
    let spec = GridSpec::new(0.01, 0.01, 300, 300, published::TAU1, published::TAU2).unwrap();
    let rand_vec =
        |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect() };
    let (b1, b2) = (rand_vec(&mut rng), rand_vec(&mut rng));
    let sum: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| x + y).collect();
    let sim = |x0: &[f64]| {
        simulate_linear(
            &case.system,
            Some(&case.gain),
            &BoundaryData::from_state(x0, 2),
            &spec,
        )
        .unwrap()
    };
    let (t1, t2, t12) = (sim(&b1), sim(&b2), sim(&sum));
    let mut worst = 0.0f64;
    let mut norm = 0.0f64;
    for i in 0..=spec.m1 {
        for j in 0..=spec.m2 {
            let s = t1.state(i, j) + t2.state(i, j);
            worst = worst.max((t12.state(i, j) - &s).amax());
            norm = norm.max(s.amax());
        }
    }
    let superposition = worst / norm;
    ok &= superposition <= SUPERPOSITION_TOL;
    details.push(format!("superposition error {superposition:.1e}"));

    // Step halving on the printed-gain closed loop over a fixed horizon.
    let horizon = 3.0;
    let final_norm = |h: f64| {
        let m = (horizon / h).round() as usize;
        let spec = GridSpec::new(h, h, m, m, published::TAU1, published::TAU2).unwrap();
        let traj = simulate_linear(
            &case.system,
            Some(&case.gain),
            &BoundaryData::from_state(&X0, 2),
            &spec,
        )
        .unwrap();
        *decay_profile(&traj).last().unwrap()
    };
    let (coarse, fine) = (final_norm(0.01), final_norm(0.005));
    let halving = (coarse - fine).abs() / fine;
    ok &= halving <= HALVING_TOL;
    details.push(format!(
        "step halving changes final norm by {:.2}%",
        100.0 * halving
    ));

    // Nonlinear vs linear deviations at small amplitude.
    let params = case.params.clone();
    let eq = solve_equilibrium(&params).unwrap();
    let ss = jacobians(&eq, &params).unwrap();
    let m = 400;
    let spec = GridSpec::new(0.01, 0.01, m, m, eq.tau1, eq.tau2).unwrap();
    let x0: Vec<f64> = eq
        .state()
        .iter()
        .map(|v| SMALL_SIGNAL_AMPLITUDE * v)
        .collect();
    let bdry = BoundaryData::from_state(&x0, 2);
    let lin = simulate_linear(&ss, None, &bdry, &spec).unwrap();
    let nl =
        simulate_nonlinear(&params, &eq, &ProbabilityInput::Equilibrium, &bdry, &spec).unwrap();
    let (diff, norm) = max_abs_diff(&nl, &lin, m / 4, m / 4, 1.0);
    let small_signal = diff / norm;
    ok &= small_signal <= SMALL_SIGNAL_TOL;
    details.push(format!(
        "nonlinear vs linear over first quarter {small_signal:.2e} relative (deviation scale {norm:.2e})"
    ));

    check(ok, details.join("; "))
}

fn equilibrium_sweep() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for (scenario, ecn) in COMBOS {
        for _ in 0..SWEEP_POINTS {
            let params = random_params(&mut rng, scenario, ecn);
            let eq =
                solve_equilibrium(&params).map_err(|e| format!("{scenario:?}/{ecn:?}: {e}"))?;
            worst = worst.max(residual(&eq, &params) / params.capacity.max(1.0));
        }
    }
    check(
        worst <= RESIDUAL_TOL,
        format!(
            "{} points, worst residual / max(1, C) = {worst:.2e}",
            4 * SWEEP_POINTS
        ),
    )
}
