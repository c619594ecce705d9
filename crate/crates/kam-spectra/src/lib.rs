//! Numerical toolkit for the spectral stability of perturbed diagonal
//! operators T + eps V on truncated Z^d lattices.
//!
//! The crate provides the lattice windows and sequence algebra the norms
//! live on, eigenvalue models with certified gap constants, banded operator
//! kernels, the closed-form admissibility constants, the iterative
//! diagonalization engine with its per-step ledger, and an independent
//! dense eigensolver used to cross-validate every spectral claim.

pub mod band;
pub mod constants;
pub mod dense;
pub mod engine;
pub mod error;
pub mod lattice;
pub mod oracle;
pub mod perturbation;
pub mod sequence;
pub mod spectrum;

pub use band::BandOperator;
pub use constants::KamConstants;
pub use dense::DenseMatrix;
pub use error::{KamError, Result};
pub use lattice::{MultiIndex, Window, WindowGrid, WindowShape};
pub use sequence::TSequence;
pub use spectrum::{SpectrumModel, SpectrumParams, Transform};
