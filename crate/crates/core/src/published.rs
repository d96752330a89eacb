//! Published operating points, linearized matrices and gains for the two
//! reference scenarios (N = 800 slow start, N = 200 congestion avoidance).
//!
//! Common data: C = 10 Mbit/s with 1000-bit packets, Q_ref = 2000 packets,
//! T_p = 1 ms, tau1 = 0.2 s, tau2 = 0.201 s.

use nalgebra::{dmatrix, DMatrix};

use crate::equilibrium::EquilibriumOverride;
use crate::linearize::{EntryRef, MatrixName, StateSpace2D};
use crate::model::{Ecn, NetworkParams, Scenario};

pub const CAPACITY_BPS: f64 = 10e6;
pub const PACKET_BITS: f64 = 1000.0;
pub const Q_REF: f64 = 2000.0;
pub const T_PROP: f64 = 0.001;
pub const TAU1: f64 = 0.2;
pub const TAU2: f64 = 0.201;
const FLAGGED_A: [EntryRef; 2] = [
    EntryRef::new(MatrixName::B, 2, 1),
    EntryRef::new(MatrixName::BTau, 2, 2),
];

const FLAGGED_B: [EntryRef; 3] = [
    EntryRef::new(MatrixName::A, 3, 2),
    EntryRef::new(MatrixName::A, 3, 4),
    EntryRef::new(MatrixName::ATau, 3, 4),
];

/// Initial condition `[dW^h, dq^h, dW^v, dq^v]`.
pub const X0: [f64; 4] = [-1.0, -20.0, -1.0, -20.0];

#[derive(Clone, Debug)]
pub struct PublishedCase {
    pub params: NetworkParams,
    pub operating_point: EquilibriumOverride,
    pub system: StateSpace2D,
    pub gain: DMatrix<f64>,
    /// Printed entries whose placement or sign is questionable.
    pub flagged: Vec<EntryRef>,
}

fn params(scenario: Scenario, n: f64, lambda: f64) -> NetworkParams {
    let mut p = NetworkParams::new(
        n,
        lambda,
        NetworkParams::capacity_from_bandwidth(CAPACITY_BPS, PACKET_BITS),
        T_PROP,
        Q_REF,
        scenario,
        Ecn::Off,
    );
    p.packet_bits = PACKET_BITS;
    p
}

fn point(w: f64, p: f64) -> EquilibriumOverride {
    EquilibriumOverride {
        w_h: w,
        w_v: None,
        p,
        tau1: Some(TAU1),
        tau2: Some(TAU2),
    }
}

pub fn scenario_a() -> PublishedCase {
    #[rustfmt::skip]
    let a = dmatrix![
        -0.0024941, -1.6563e-06, 0.0, 0.0;
        1596.4, 1.0602, 0.0, 0.0;
        1.9831, 0.0, 0.0, 0.0;
        0.0, 0.0, 1588.5, 1.0496
    ];
    #[rustfmt::skip]
    let a_tau = dmatrix![
        1.993, 0.0013252, 0.0, 0.0;
        0.0, 0.0, 0.0, 0.0;
        0.0, 0.0, 0.0, 0.0013104;
        0.0, 0.0, 0.0, 0.0
    ];
    let b = dmatrix![0.0, 0.0; -5312.8, 0.0; 0.0, -6.6465; 0.0, -5286.4];
    let b_tau = dmatrix![0.0, -6.6465; 0.0, 0.0; 0.0, 0.0; 0.0, 0.0];
    #[rustfmt::skip]
    let gain = dmatrix![
        1.409040145867033, 0.001050302085212, -0.442659495007931, -0.000665182278239;
        0.261050119747904, 0.000106642597102, 0.377269799513580, 0.000536355427763
    ];
    PublishedCase {
        params: params(Scenario::A, 800.0, 1.0),
        operating_point: point(1.3282, 0.6001),
        system: StateSpace2D::new(2, 2, a, a_tau, b, b_tau, TAU1, TAU2)
            .expect("valid published system"),
        gain,
        flagged: FLAGGED_A.to_vec(),
    }
}

pub fn scenario_b() -> PublishedCase {
    #[rustfmt::skip]
    let a = dmatrix![
        -175.8330, 0.0, 0.0, 0.0;
        933.8, 2.4805, 0.0, 0.0;
        929.1285, -2.4564, 0.0, 2.4554;
        0.0, 0.0, 929.1542, 2.4559
    ];
    #[rustfmt::skip]
    let a_tau = dmatrix![
        175.7512, 0.4669, 0.0, 0.0;
        0.0, 0.0, 0.0, 0.0;
        0.0, 0.0, 0.0, 0.0122;
        0.0, 0.0, 0.0, 0.0
    ];
    let b = 1e3 * dmatrix![0.0, 0.0; -5.3128, 0.0; 0.0, -5.2874; 0.0, -5.2864];
    let b_tau = 1e3 * dmatrix![0.0, -1.0010; 0.0, 0.0; 0.0, 0.0; 0.0, 0.0];
    #[rustfmt::skip]
    let gain = dmatrix![
        0.194800805211746, 0.067127479835209, -0.000657956320659, -0.000033555865312;
        0.167303800511358, -0.000437270587770, 0.017422461138873, 0.000880352801977
    ];
    PublishedCase {
        params: params(Scenario::B, 200.0, 2.945),
        operating_point: point(5.3128, 0.0662),
        system: StateSpace2D::new(2, 2, a, a_tau, b, b_tau, TAU1, TAU2)
            .expect("valid published system"),
        gain,
        flagged: FLAGGED_B.to_vec(),
    }
}
