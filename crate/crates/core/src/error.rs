use thiserror::Error;

/// Errors raised by the numerics library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A phase-specific quantity was requested outside that phase.
    #[error("{phase} phase requires {inequality} (got omega_x = {omega_x}, xi_y = {xi_y})")]
    PhaseDomain {
        phase: &'static str,
        inequality: &'static str,
        omega_x: f64,
        xi_y: f64,
    },

    /// Inputs are individually valid but inconsistent with each other.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A resource guard (matrix dimension, grid size) was exceeded.
    #[error("resource guard: {0}")]
    Resource(String),

    /// A numerical routine failed to converge or lost accuracy.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Fit window is empty or contains non-positive samples.
    #[error("fit window error: {0}")]
    Window(String),

    /// Two eigenstates overlap the reference state almost equally.
    #[error("eigenstate selection is ambiguous: overlaps {first:.6} and {second:.6}")]
    Selection { first: f64, second: f64 },

    /// Fock truncation discards too much norm.
    #[error("Fock truncation at n_max = {n_max} leaves tail {tail:e}")]
    Truncation { n_max: usize, tail: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
