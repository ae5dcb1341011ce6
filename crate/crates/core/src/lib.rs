//! Minimum restraint functions on grids.
//!
//! The crate solves exit-time Hamilton-Jacobi-Bellman problems by
//! semi-Lagrangian value iteration, checks the decrease condition and the
//! structural properties a candidate function needs, synthesizes trajectories
//! with certified cost and descent bounds by level halving, and builds the
//! objects of the converse construction (strip sequences, the running-cost
//! augmentation `ell`, and the augmented functional `J`).
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod catalog;
pub mod certificate;
pub mod comparators;
pub mod converse;
pub mod error;
pub mod grid;
pub mod hjb;
pub mod kl;
pub mod scalar;
pub mod synth;
pub mod system;
pub mod tables;
pub mod trajectory;
pub mod verify;

pub use certificate::MrfCertificate;
pub use comparators::{ComparatorPair, MonotoneFn};
pub use error::{MrfError, Result};
pub use grid::{interpolate, GridField, GridShape};
pub use hjb::{solve_min_time, solve_value_function, supersolution_residual, SolverParams};
pub use kl::KlFunction;
pub use scalar::Real;
pub use system::ControlSystem;
pub use tables::{Extrapolation, MonotoneTable};
pub use trajectory::{integrate_trajectory, ControlSchedule, TerminalFlag, Trajectory};
pub use verify::BracketPair;

pub type ControlSystem64 = ControlSystem<f64>;
pub type GridShape64 = GridShape<f64>;
pub type GridField64 = GridField<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type ComparatorPair64 = ComparatorPair<f64>;
pub type KlFunction64 = KlFunction<f64>;
pub type BracketPair64 = BracketPair<f64>;
pub type MonotoneTable64 = MonotoneTable<f64>;
pub type SolverParams64 = SolverParams<f64>;
pub type MrfCertificate64 = MrfCertificate<f64>;

pub type ControlSystem32 = ControlSystem<f32>;
pub type GridField32 = GridField<f32>;
