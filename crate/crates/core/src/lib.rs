//! Numerics for fidelity out-of-time-order correlators (FOTOCs) in the
//! extended Lipkin-Meshkov-Glick model.
//!
//! The crate is split along the physics pipeline:
//!
//! - [`spin_model`]: finite-j operators, Hamiltonian, coherent states and the
//!   classical limit.
//! - [`dynamics`]: exact spectral propagation, FOTOC, Loschmidt echo and
//!   Lyapunov fits.
//! - [`effective`]: thermodynamic-limit quadratic Hamiltonians, Heisenberg
//!   quadrature flow, Bogoliubov transforms and the perturbed Gaussian state.
//! - [`complexity`]: Nielsen complexity of the FOTOC operator on the
//!   Heisenberg group.
//! - [`geometry`]: quantum information metric of the perturbed state, its
//!   curvature and geodesics.

// `!(x > 0.0)` is used on purpose so that NaN is rejected with the bad values;
// tensor code indexes several arrays with the same loop variable.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod complexity;
pub mod dynamics;
pub mod effective;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod spin_model;

/// Complex scalar used throughout.
pub type Complex64 = nalgebra::Complex<f64>;

pub use error::{Error, Result};
pub use spin_model::{BlochPoint, CollectiveSpinOps, ModelParams, Spin};
