//! Receding-horizon control of discrete-time systems: single-shooting
//! optimal control, closed-loop simulation, optimal steady states, strict
//! dissipativity certificates and terminal-cost conditions.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64` (and `f32` with a `32` suffix).

// `!(a < b)` is used on purpose so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dissipativity;
pub mod error;
pub mod linalg;
pub mod lq;
pub mod model;
pub mod mpc;
pub mod ocp;
pub mod optim;
pub mod scalar;
pub mod steady_state;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type Model = model::SystemModel<f64>;
pub type Model32 = model::SystemModel<f32>;
pub type Trajectory = model::Trajectory<f64>;
pub type TerminalCost = model::TerminalCost<f64>;
pub type StorageFunction = model::StorageFunction<f64>;
pub type Equilibrium = steady_state::Equilibrium<f64>;
pub type Equilibrium32 = steady_state::Equilibrium<f32>;
pub type LqProblem = lq::LqProblem<f64>;
pub type LqStorage = lq::LqStorage<f64>;
pub type KFunctionFit = dissipativity::KFunctionFit<f64>;
pub type RectGrid = dissipativity::RectGrid<f64>;
