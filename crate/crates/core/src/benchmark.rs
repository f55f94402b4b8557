//! The quadruple-tank benchmark: plant parameters, split-ratio cycle, the
//! 5 s linearized model and the economic stage cost.

use alloc::vec;

use nalgebra::{DMatrix, DVector, Vector2, Vector4};

use crate::model::AffineModel;
use crate::plant::TankParams;
use crate::pma::{DrtoBounds, EconomicCost};

/// Columns `(gamma_a, gamma_b)` of the split-ratio cycle, one per hour.
pub const GAMMA_CYCLE: [[f64; 2]; 7] = [
    [0.3, 0.6],
    [0.4, 0.5],
    [0.5, 0.4],
    [0.7, 0.2],
    [0.6, 0.3],
    [0.4, 0.5],
    [0.2, 0.7],
];

pub const LINEARIZATION_LEVELS: [f64; 4] = [0.7293, 0.8102, 0.6594, 0.9408];
pub const LINEARIZATION_FLOWS: [f64; 2] = [1.948, 2.00];
pub const LINEARIZATION_SPLIT: [f64; 2] = [0.3, 0.4];

#[rustfmt::skip]
pub const MODEL_A: [f64; 16] = [
    0.945, 0.0,   0.040, 0.0,
    0.0,   0.940, 0.0,   0.032,
    0.0,   0.0,   0.959, 0.0,
    0.0,   0.0,   0.0,   0.967,
];

#[rustfmt::skip]
pub const MODEL_B: [f64; 8] = [
    0.0135, 0.0006,
    0.0005, 0.0180,
    0.0,    0.0272,
    0.0319, 0.0,
];

pub const MODEL_DT: f64 = 5.0;
pub const STEP_SECONDS: f64 = 3600.0;

pub fn tank_params() -> TankParams {
    TankParams {
        area: 0.03,
        discharge: Vector4::new(1.31e-4, 1.51e-4, 0.927e-4, 0.882e-4),
        h_min: Vector4::repeat(0.2),
        h_max: Vector4::new(1.36, 1.36, 1.30, 1.30),
        q_min: Vector2::new(0.0, 0.0),
        q_max: Vector2::new(3.6, 4.0),
        gravity: 9.81,
        gamma_cycle: GAMMA_CYCLE
            .iter()
            .map(|g| Vector2::new(g[0], g[1]))
            .collect(),
        step_seconds: STEP_SECONDS,
        substep: 5.0,
    }
}

/// The published 5 s model, linearized at [`LINEARIZATION_LEVELS`].
pub fn linear_model() -> AffineModel {
    AffineModel {
        a: DMatrix::from_row_slice(4, 4, &MODEL_A),
        b: DMatrix::from_row_slice(4, 2, &MODEL_B),
        x_lin: DVector::from_column_slice(&LINEARIZATION_LEVELS),
        u_lin: DVector::from_column_slice(&LINEARIZATION_FLOWS),
        dt: MODEL_DT,
    }
}

/// Stage cost with `c = 1`, `p = 20`.
pub fn economic_cost() -> EconomicCost {
    EconomicCost {
        c: 1.0,
        p: 20.0,
        area: 0.03,
    }
}

pub fn bounds(params: &TankParams) -> DrtoBounds {
    DrtoBounds {
        x_min: DVector::from_column_slice(params.h_min.as_slice()),
        x_max: DVector::from_column_slice(params.h_max.as_slice()),
        u_min: DVector::from_column_slice(params.q_min.as_slice()),
        u_max: DVector::from_column_slice(params.q_max.as_slice()),
    }
}

pub fn linearization_state() -> DVector<f64> {
    DVector::from_vec(vec![
        LINEARIZATION_LEVELS[0],
        LINEARIZATION_LEVELS[1],
        LINEARIZATION_LEVELS[2],
        LINEARIZATION_LEVELS[3],
    ])
}
