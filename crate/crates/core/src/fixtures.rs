//! The macroeconomic multiplier-accelerator benchmark: three economic regimes
//! (normal, boom, slump), a drifting income target band and the published
//! pre-stabilizing solution.

use nalgebra::{DMatrix, DVector};

use crate::chance::{ChanceMode, ChanceSpec};
use crate::lmi::SynthesisResult;
use crate::model::{PolyhedronSchedule, SdjlsModel, TransitionLaw};
use crate::rhc::{InputSet, RhcWeights};

/// Published gains `K_1, K_2, K_3`.
pub const BENCHMARK_GAINS: [[f64; 2]; 3] = [[2.5, -3.2], [4.3, -4.5], [-5.3, 5.2]];

pub const BENCHMARK_X: [[f64; 2]; 3] = [[1.3146, 0.7534], [1.9255, 0.7628], [1.1393, 0.1044]];
pub const BENCHMARK_Y: [[f64; 2]; 3] = [[3.2866, -2.4108], [8.2797, -3.4325], [-6.0384, 0.5429]];

pub const BENCHMARK_X0: [f64; 2] = [2.0, 2.0];
pub const BENCHMARK_XI: f64 = 0.85;
pub const BENCHMARK_STEPS: usize = 20;
pub const BENCHMARK_NU_BOUND: f64 = 100.0;
pub const BENCHMARK_ALPHA: f64 = 1000.0;

fn m2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[a, b, c, d])
}

pub fn benchmark_model() -> SdjlsModel {
    let a = vec![
        m2(0.0, 1.0, -2.5, 3.2),
        m2(0.0, 1.0, -4.3, 4.5),
        m2(0.0, 1.0, 5.3, -5.2),
    ];
    let b = vec![DMatrix::from_column_slice(2, 1, &[0.0, 1.0]); 3];
    let lambda = DMatrix::from_row_slice(3, 3, &[0.6, 0.3, 0.1, 0.25, 0.55, 0.2, 0.35, 0.15, 0.5]);
    let mu = DMatrix::from_row_slice(
        3,
        3,
        &[0.67, 0.17, 0.16, 0.30, 0.47, 0.23, 0.26, 0.10, 0.64],
    );
    SdjlsModel {
        a,
        b,
        law: TransitionLaw { lambda, mu },
        region: benchmark_region(),
    }
}

/// `G = [0 -1; 0 1]`, `H(k) = [-2 - 0.5k; 5 + 0.5k]`.
pub fn benchmark_region() -> PolyhedronSchedule {
    PolyhedronSchedule::new(
        m2(0.0, -1.0, 0.0, 1.0),
        DVector::from_column_slice(&[-2.0, 5.0]),
        DVector::from_column_slice(&[-0.5, 0.5]),
    )
}

pub fn benchmark_x_y() -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let x = BENCHMARK_X
        .iter()
        .map(|d| m2(d[0], 0.0, 0.0, d[1]))
        .collect();
    let y = BENCHMARK_Y
        .iter()
        .map(|r| DMatrix::from_row_slice(1, 2, r))
        .collect();
    (x, y)
}

pub fn benchmark_gain_table() -> Vec<DMatrix<f64>> {
    BENCHMARK_GAINS
        .iter()
        .map(|r| DMatrix::from_row_slice(1, 2, r))
        .collect()
}

/// Published `X`, `Y` with the published (rounded) gain table and `P_i = X_i⁻¹`.
pub fn benchmark_gains() -> SynthesisResult {
    let (x, y) = benchmark_x_y();
    SynthesisResult::from_parts(x, y, benchmark_gain_table(), f64::NAN)
        .expect("published X is invertible")
}

pub fn benchmark_weights() -> RhcWeights {
    let eye = DMatrix::<f64>::identity(2, 2);
    RhcWeights {
        q: vec![eye.clone(), &eye * 1.1, &eye * 1.2],
        r: vec![
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.2),
            DMatrix::from_element(1, 1, 1.3),
        ],
        psi: vec![eye.clone(), &eye * 2.0, &eye * 3.0],
        alpha: BENCHMARK_ALPHA,
    }
}

pub fn benchmark_input_set() -> InputSet {
    InputSet::symmetric(1, BENCHMARK_NU_BOUND)
}

pub fn benchmark_chance(xi: f64, mode: ChanceMode) -> ChanceSpec {
    ChanceSpec { xi, mode }
}

pub fn benchmark_x0() -> DVector<f64> {
    DVector::from_column_slice(&BENCHMARK_X0)
}
