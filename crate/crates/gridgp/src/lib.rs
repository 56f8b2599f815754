//! Scalable Gaussian-process methods for large gridded spatial data.
//!
//! The crate implements a catalog of approximations to the exact Gaussian
//! process — low-rank basis expansions, covariance tapering, nearest-neighbor
//! (Vecchia-type) likelihoods, local approximate GPs, spectral imputation on
//! an expanded lattice, and divide-and-combine ensembles — together with a
//! competition harness that fits each method to the same training set,
//! predicts a sequestered test set, and scores the predictions with proper
//! scoring rules.
//!
//! The exact model in [`gpcore`] doubles as the brute-force oracle: every
//! approximation is tested against it in the regime where the approximation
//! becomes exact.
//!
//! See the guide under `book/` for a narrative tour; its code snippets are
//! compiled and run as doc-tests from this crate.

pub mod basis;
pub mod ensemble;
pub mod error;
pub mod gpcore;
pub mod harness;
pub mod localgp;
pub mod numerics;
pub mod scoring;
pub mod vecchia;
pub mod spectral;
pub mod taper;

pub use error::{Error, Result};
