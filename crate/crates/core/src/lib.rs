//! Data-driven continuous-time LQR.
//!
//! This crate solves the infinite-horizon LQR problem for a continuous-time
//! LTI system `x' = A x + B u` from a single batch of input-state data,
//! without identifying `(A, B)`:
//!
//! * [`excitation`] designs piecewise-constant persistently exciting (PCPE)
//!   input sequences and certifies their Hankel-matrix rank.
//! * [`simulator`] propagates the plant exactly under piecewise-constant
//!   inputs and carries exact inter-sample integrals.
//! * [`data_pipeline`] assembles the integrated data matrices, checks the
//!   rank condition they inherit from the excitation, and selects a
//!   well-conditioned square submatrix.
//! * [`matrix_equations`] provides the Lyapunov, generalized
//!   Sylvester-transpose, and Riccati solvers the iterations rest on.
//! * [`kleinman`] implements the model-based reference iterations used as
//!   equivalence oracles.
//! * [`learner`] runs the data-based off-policy policy iteration that
//!   produces the optimal gain from the recorded data alone.
//! * [`init_gain`] constructs a stabilizing initial gain directly from data.
//! * [`bench`] reproduces the SYL-vs-KRO solver timing comparison on random
//!   stable plants.

pub mod bench;
pub mod data_pipeline;
pub mod error;
pub mod excitation;
pub mod init_gain;
pub mod kleinman;
pub mod learner;
pub mod linalg;
pub mod matrix_equations;
pub mod simulator;

pub use error::{Error, Result};
pub use nalgebra::{Complex, DMatrix, DVector};
