//! Property tests over random parameters, operating points and paths.

use aqm2d_core::bessel_legendre::{bl_lower_bound, derivative_energy, PolyPath};
use aqm2d_core::linearize::jacobian_rel_error;
use aqm2d_core::lmi::SelectorBasis;
use aqm2d_core::model::{rhs_1d, rhs_queue, rhs_window_h, rhs_window_v};
use aqm2d_core::{
    decay_profile, fd_jacobians, jacobians, residual, simulate_linear, solve_equilibrium,
    BoundaryData, Dim, Ecn, GridSpec, ModelPoint, NetworkParams, Scenario, StateSpace2D,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn scenario() -> impl Strategy<Value = Scenario> {
    prop_oneof![Just(Scenario::A), Just(Scenario::B)]
}

fn ecn() -> impl Strategy<Value = Ecn> {
    prop_oneof![Just(Ecn::On), Just(Ecn::Off)]
}

/// Parameters with an equilibrium: scenario B needs `tau1 >= t_prop`.
fn params() -> impl Strategy<Value = NetworkParams> {
    (
        scenario(),
        ecn(),
        10.0..1000.0f64,
        0.0..1.0f64,
        1e3..5e4f64,
        10.0..5000.0f64,
        0.0..1.0f64,
    )
        .prop_map(|(s, e, n, lam_u, c, q_ref, tp_u)| {
            let lambda = 1.0 + lam_u * (n.min(10.0) - 1.0);
            let t_prop = match s {
                Scenario::A => 1e-3 + tp_u * 0.2,
                Scenario::B => {
                    let p = 2.0 * n * n / (2.0 * n * n + lambda);
                    let admitted = if e == Ecn::On { 1.0 } else { 1.0 - p };
                    0.9 * tp_u * n * admitted / c
                }
            };
            NetworkParams::new(n, lambda, c, t_prop, q_ref, s, e)
        })
}

fn point() -> impl Strategy<Value = (f64, f64, f64, f64, f64, f64)> {
    (
        0.1..50.0f64,
        0.1..50.0f64,
        0.0..5000.0f64,
        0.0..5000.0f64,
        0.0..1.0f64,
        0.01..0.5f64,
    )
}

fn base_params(s: Scenario, e: Ecn) -> NetworkParams {
    NetworkParams::new(200.0, 2.0, 10_000.0, 0.001, 2000.0, s, e)
}

proptest! {
    #[test]
    fn raising_probability_slows_windows(
        s in scenario(),
        (w, wd, q, qd, p, tau2) in point(),
        dp in 1e-3..0.5f64,
    ) {
        let params = base_params(s, Ecn::Off);
        let pt = ModelPoint { w_h: w, w_h_del: wd, w_v: w, q_h: q, q_h_del: qd, q_v: q, p_v: p, p_v_del: p, tau2 };
        let hi = ModelPoint { p_v: (p + dp).min(1.0), p_v_del: (p + dp).min(1.0), ..pt };
        prop_assume!(hi.p_v > p);
        prop_assert!(rhs_window_h(&hi, &params).unwrap() < rhs_window_h(&pt, &params).unwrap());
        prop_assert!(rhs_window_v(&hi, &params).unwrap() < rhs_window_v(&pt, &params).unwrap());
    }

    #[test]
    fn marking_admits_at_least_as_much_as_dropping(
        (w, wd, q, qd, p, tau2) in point(),
    ) {
        let on = base_params(Scenario::A, Ecn::On);
        let off = base_params(Scenario::A, Ecn::Off);
        let pt = ModelPoint { w_h: w, w_h_del: wd, w_v: w, q_h: q, q_h_del: qd, q_v: q, p_v: p, p_v_del: p, tau2 };
        for dim in [Dim::H, Dim::V] {
            prop_assert!(rhs_queue(&pt, &off, dim).unwrap() <= rhs_queue(&pt, &on, dim).unwrap());
        }
    }

    #[test]
    fn scenarios_agree_when_window_equals_flow_count(
        (_, wd, _, qd, p, tau2) in point(),
    ) {
        let a = base_params(Scenario::A, Ecn::Off);
        let b = base_params(Scenario::B, Ecn::Off);
        let n = a.n_flows;
        let pt = ModelPoint { w_h: n, w_h_del: wd, w_v: n, q_h: qd, q_h_del: qd, q_v: qd, p_v: p, p_v_del: p, tau2 };
        let (ra, rb) = (rhs_window_h(&pt, &a).unwrap(), rhs_window_h(&pt, &b).unwrap());
        prop_assert!((ra - rb).abs() <= 1e-12 * ra.abs().max(1.0));
    }

    #[test]
    fn one_dimensional_reduction(
        (w, wd, _, qd, p, _) in point(),
    ) {
        let params = base_params(Scenario::A, Ecn::Off);
        let tau = params.rtt(qd);
        let pt = ModelPoint { w_h: w, w_h_del: wd, w_v: w, q_h: qd, q_h_del: qd, q_v: qd, p_v: p, p_v_del: p, tau2: tau };
        let two_d = rhs_window_h(&pt, &params).unwrap();
        let one_d = rhs_1d(w, wd, p, tau, &params).unwrap();
        prop_assert!((two_d - one_d).abs() <= 1e-12 * one_d.abs().max(1.0));
    }

    #[test]
    fn equilibria_are_steady_and_consistent(params in params()) {
        let eq = solve_equilibrium(&params).unwrap();
        prop_assert!(residual(&eq, &params) <= 1e-9 * params.capacity.max(1.0));
        prop_assert!(eq.p > 0.0 && eq.p <= 1.0);
        prop_assert!(eq.w_h > 0.0 && eq.w_v > 0.0);
        for (q, tau) in [(eq.q_h, eq.tau1), (eq.q_v, eq.tau2)] {
            prop_assert!((tau - params.rtt(q)).abs() <= 1e-12 * tau.max(1e-9));
        }
    }

    #[test]
    fn analytic_jacobians_match_finite_differences(params in params()) {
        let eq = solve_equilibrium(&params).unwrap();
        let an = jacobians(&eq, &params).unwrap();
        let fd = fd_jacobians(&eq, &params, 1e-5).unwrap();
        prop_assert!(jacobian_rel_error(&an, &fd) <= 1e-6);
    }

    #[test]
    fn horizontal_rows_ignore_vertical_states(params in params()) {
        let eq = solve_equilibrium(&params).unwrap();
        let ss = jacobians(&eq, &params).unwrap();
        for i in 0..2 {
            for j in 2..4 {
                prop_assert_eq!(ss.a[(i, j)], 0.0);
                prop_assert_eq!(ss.a_tau[(i, j)], 0.0);
            }
        }
        // No vertical window or queue term depends on the horizontal queue,
        // and nothing depends on the horizontal probability.
        prop_assert_eq!(ss.a[(2, 1)], 0.0);
        prop_assert_eq!(ss.a[(3, 1)], 0.0);
        prop_assert_eq!(ss.b.column(0).amax(), 0.0);
        prop_assert_eq!(ss.b_tau.column(0).amax(), 0.0);
    }

    #[test]
    fn capacity_rescaling_keeps_delay_only_entries(params in params(), k in 0.5..4.0f64) {
        let eq = solve_equilibrium(&params).unwrap();
        let ss = jacobians(&eq, &params).unwrap();
        let mut scaled = params.clone();
        scaled.capacity *= k;
        scaled.t_prop = 0.0;
        let mut eq2 = eq;
        eq2.q_h = eq.tau1 * scaled.capacity;
        eq2.q_v = eq.tau2 * scaled.capacity;
        let ss2 = jacobians(&eq2, &scaled).unwrap();
        for (i, j) in [(0, 0), (2, 0)] {
            prop_assert!((ss.a[(i, j)] - ss2.a[(i, j)]).abs() <= 1e-12 * ss.a[(i, j)].abs().max(1e-12));
        }
        prop_assert!((ss.a_tau[(0, 0)] - ss2.a_tau[(0, 0)]).abs() <= 1e-12 * ss.a_tau[(0, 0)].abs().max(1e-12));
    }

    #[test]
    fn integral_inequality_and_hierarchy(
        coeffs in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 2), 1..7),
        a in -3.0..3.0f64,
        len in 0.05..4.0f64,
        l in prop::collection::vec(-1.0..1.0f64, 4),
    ) {
        let path = PolyPath::new(coeffs.iter().map(|c| DVector::from_vec(c.clone())).collect()).unwrap();
        let lm = DMatrix::from_vec(2, 2, l);
        let z = &lm * lm.transpose() + DMatrix::identity(2, 2) * 0.05;
        let b = a + len;
        let lhs = derivative_energy(&path, &z, a, b).unwrap();
        let tol = 1e-10 * lhs.abs().max(z.norm());
        let mut prev = f64::NEG_INFINITY;
        for n in 0..=2 {
            let bound = bl_lower_bound(&path, &z, a, b, n).unwrap();
            prop_assert!(lhs - bound >= -tol);
            prop_assert!(bound >= prev - tol);
            prev = bound;
        }
    }

    #[test]
    fn low_degree_paths_are_tight(
        coeffs in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 2), 4),
        a in -3.0..3.0f64,
        len in 0.05..4.0f64,
    ) {
        let z = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        for n in 0..=2usize {
            let path = PolyPath::new(coeffs[..n + 2].iter().map(|c| DVector::from_vec(c.clone())).collect()).unwrap();
            let lhs = derivative_energy(&path, &z, a, a + len).unwrap();
            let bound = bl_lower_bound(&path, &z, a, a + len, n).unwrap();
            prop_assert!((lhs - bound).abs() <= 1e-10 * lhs.abs().max(1.0), "N = {}: {} vs {}", n, lhs, bound);
        }
    }

    #[test]
    fn selectors_partition_the_extended_state(n_h in 1..4usize, n_v in 1..4usize) {
        let sel = SelectorBasis::new(n_h, n_v);
        let stacked = DMatrix::from_fn(5 * (n_h + n_v), sel.dim(), |r, c| {
            sel.full(r / (n_h + n_v) + 1)[(r % (n_h + n_v), c)]
        });
        prop_assert_eq!(stacked, DMatrix::identity(sel.dim(), sel.dim()));
        for i in 1..=5 {
            for j in 1..=5 {
                let prod = sel.full(i) * sel.full(j).transpose();
                let expect = if i == j { DMatrix::identity(n_h + n_v, n_h + n_v) } else { DMatrix::zeros(n_h + n_v, n_h + n_v) };
                prop_assert_eq!(prod, expect);
            }
        }
    }

    #[test]
    fn state_space_json_round_trip(
        vals in prop::collection::vec(-1e3..1e3f64, 48),
        tau1 in 0.01..1.0f64,
        tau2 in 0.01..1.0f64,
    ) {
        let m = |k: usize, r: usize, c: usize| DMatrix::from_row_slice(r, c, &vals[k..k + r * c]);
        let ss = StateSpace2D::new(2, 2, m(0, 4, 4), m(16, 4, 4), m(32, 4, 2), m(40, 4, 2), tau1, tau2).unwrap();
        let back: StateSpace2D = serde_json::from_str(&serde_json::to_string(&ss).unwrap()).unwrap();
        prop_assert_eq!(back, ss);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn linear_march_is_additive(
        x in prop::collection::vec(-5.0..5.0f64, 4),
        y in prop::collection::vec(-5.0..5.0f64, 4),
        diag in prop::collection::vec(-2.0..-0.5f64, 4),
        coupling in -0.3..0.3f64,
    ) {
        let mut a = DMatrix::from_diagonal(&DVector::from_vec(diag));
        a[(2, 0)] = coupling;
        let ss = StateSpace2D::autonomous(2, 2, a, DMatrix::identity(4, 4) * 0.1, 0.1, 0.1).unwrap();
        let spec = GridSpec::new(0.01, 0.01, 60, 60, 0.1, 0.1).unwrap();
        let run = |v: &[f64]| simulate_linear(&ss, None, &BoundaryData::from_state(v, 2), &spec).unwrap();
        let sum: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p + q).collect();
        let (tx, ty, ts) = (run(&x), run(&y), run(&sum));
        for i in 0..=spec.m1 {
            for j in 0..=spec.m2 {
                let expect = tx.state(i, j) + ty.state(i, j);
                prop_assert!((ts.state(i, j) - &expect).amax() <= 1e-10 * expect.amax().max(1.0));
            }
        }
    }

    #[test]
    fn zero_boundary_gives_zero_profile(diag in prop::collection::vec(-2.0..2.0f64, 4)) {
        let a = DMatrix::from_diagonal(&DVector::from_vec(diag));
        let ss = StateSpace2D::autonomous(2, 2, a, DMatrix::identity(4, 4) * 0.1, 0.1, 0.1).unwrap();
        let spec = GridSpec::new(0.01, 0.01, 40, 40, 0.1, 0.1).unwrap();
        let traj = simulate_linear(&ss, None, &BoundaryData::from_state(&[0.0; 4], 2), &spec).unwrap();
        prop_assert!(decay_profile(&traj).iter().all(|s| *s == 0.0));
    }
}
