//! Periodic modifier-adaptation (P-MA) for dynamic real-time optimization.
//!
//! The crate is organised along the control hierarchy:
//!
//! - [`plant`]: the true periodic plant (quadruple tank with a cyclic split
//!   ratio), integrated with RK4 and differentiated by forward sensitivities.
//! - [`model`]: the affine prediction model and its lifted (one period)
//!   matrices.
//! - [`gradients`]: lifted Jacobians of plant and model.
//! - [`solver`]: dense active-set QP, SQP and an independent KKT residual.
//! - [`pma`]: the modified DRTO, modifier updates and filtering.
//! - [`stto`] and [`mpc`]: the steady trajectory target optimization and the
//!   offset-free periodic MPC with its disturbance estimator.
//! - [`experiment`]: the two-rate loops and the plant-true oracle.
//!
//! Everything here is pure computation over `alloc`; file formats and the
//! command line live in the `pma-cli` crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod benchmark;
pub mod error;
pub mod experiment;
pub mod gradients;
pub mod linalg;
pub mod model;
pub mod mpc;
pub mod plant;
pub mod pma;
pub mod solver;
pub mod stto;

pub use error::{Error, Result};
pub use gradients::{JacobianSource, LiftedJacobian, Theta};
pub use model::{AffineModel, AffineStep, LiftedLinearModel, StepBridge};
pub use plant::{FourTankPlant, PeriodicPlant, TankParams};
pub use pma::{EconomicCost, EconomicReference, Modifiers, PeriodicTrajectory};
pub use solver::{Multipliers, NlpProblem, NlpSolution, SolveStatus, SolverOptions};
