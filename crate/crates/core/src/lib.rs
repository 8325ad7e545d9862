//! Numerical toolkit for low-rank extremal PPT entangled states of bipartite
//! quantum systems, built around generalized unextendible product bases.
//!
//! The crate provides dense hermitian-matrix machinery ([`herm`]), bipartite
//! state diagnostics ([`bipartite`]), the analytic icosahedron family of
//! 3x3 states ([`ico`]), kernel UPB extraction and projection-form checks
//! ([`upb`]), the iterative searches ([`search`]), perturbation-based
//! dimension and extremality probes ([`geometry`]), and file formats for the
//! CLI ([`io`]).

pub mod bipartite;
pub mod geometry;
pub mod herm;
pub mod ico;
pub mod io;
pub mod search;
pub mod upb;

use thiserror::Error;

/// Centralized numerical tolerances.
pub mod tol {
    /// Maximum allowed element-wise deviation from hermiticity at construction.
    pub const HERMITICITY: f64 = 1e-12;
    /// Relative residual bound for eigendecompositions.
    pub const EIGEN_RESIDUAL: f64 = 1e-10;
    /// Relative eigenvalue cutoff for rank counting.
    pub const RANK_CUTOFF: f64 = 1e-8;
    /// Spectral gap below which a rank count is reported as untrusted.
    pub const DEGENERACY_GAP: f64 = 1e-4;
    /// Half-width of the window around 1 used when counting unit eigenvalues.
    pub const UNIT_EIGEN_WINDOW: f64 = 1e-6;
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("matrix is not hermitian (max |A - A^dag| = {0:.3e})")]
    NotHermitian(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("construction failed: {0}")]
    Construction(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
