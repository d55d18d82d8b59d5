//! Numerical core for recirculating quantum photonic networks: nonlinear
//! cavities coupled all-to-all through a closed linear mixing circuit, driven
//! by piecewise-constant controls.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches files,
//! threads or the command line lives in the `rqpn` companion crate.
//!
//! Units: ħ = 1, rates in units of the nonlinear rate Γ_NL (χ₃ for
//! self-phase modulation, g for emitters) and times in 1/Γ_NL.
//!
//! Mode and emitter indices are zero-based throughout the API.

#![no_std]
#![warn(missing_debug_implementations)]
// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bounds;
pub mod controls;
mod error;
pub mod hilbert;
mod linalg;
pub mod mixing;
pub mod model;
pub mod objective;
pub mod optimize;
pub mod propagate;
pub mod tasks;

pub use error::{Error, Result};

pub use num_complex::Complex64;

/// Dense complex matrix used for operators and propagators.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
/// Dense complex column vector used for state amplitudes.
pub type CVector = nalgebra::DVector<Complex64>;
/// Dense real matrix.
pub type RMatrix = nalgebra::DMatrix<f64>;
