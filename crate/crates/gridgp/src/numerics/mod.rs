//! Shared numerical kernels: dense and sparse linear algebra, unitary 2-D
//! Fourier transforms, k-d tree neighbor search, and derivative-free
//! optimizers.
//!
//! Everything here is a pure function of immutable inputs; factors and trees
//! are safe to share across worker threads once built.

pub mod dense;
pub mod fft;
pub mod kdtree;
pub mod optim;
pub mod sparse;

pub use dense::{dot, solve_spd, DenseMatrix};
pub use fft::{dft2, ComplexGrid};
pub use kdtree::KdTree;
pub use optim::{golden_section, nelder_mead, SimplexResult};
pub use sparse::{sparse_cholesky, SparseFactor, SparseMatrix};
