//! Whitening, regularized correlation, symmetric eigendecomposition and
//! null-space projectors.

mod eigen;
mod matrix;
mod projector;
mod whiten;

pub use eigen::{
    regularized_correlation, regularized_correlation_with, sym_eig, sym_eig_with, EigenBasis,
    EigenMethod, Ridge, JACOBI_MAX_ORDER, QL_MAX_ITERATIONS,
    SymmetricMatrix, MAX_ORDER, MAX_SWEEPS, OFF_DIAGONAL_TOL, SYMMETRY_TOL,
};
pub use matrix::Matrix;
pub use projector::{nullspace_projector, project, projector_from_basis, Projector, ThresholdPolicy};
pub use whiten::{whiten, whiten_columns, ChannelStats, WhitenedMatrix};
