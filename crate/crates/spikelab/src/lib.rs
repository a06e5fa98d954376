//! Spike self-replication and nucleation thresholds for one-dimensional
//! Schnakenberg, Brusselator and Gierer–Meinhardt reaction–diffusion systems.
//!
//! The crate is organised bottom-up:
//!
//! * [`models`] — the three systems, their outer reductions and regime prediction;
//! * [`core_problem`] — the half-line inner spike problem, its fold and far-field data;
//! * [`spectrum`] — the linearised core eigenvalue problem;
//! * [`outer`] — matching conditions, thresholds and phase diagrams;
//! * [`pde`] — growing-domain time integration and event detection;
//! * [`continuation`] — steady-state continuation in the domain half-length;
//! * [`verify`] — the reference checks shared by tests and the command line.

// `!(x > 0.0)` is used on purpose so that NaN fails the check; banded
// triangular sweeps read most clearly with explicit index loops.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod continuation;
pub mod core_problem;
pub mod error;
pub mod grid;
pub mod io;
pub mod models;
pub mod numerics;
pub mod outer;
pub mod pde;
pub mod spectrum;
pub mod verify;

pub use error::{Result, SpikeError};
pub use models::{Model, ModelKind, ModelSpec};
