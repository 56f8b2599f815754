//! Low-rank basis-expansion methods: multiresolution fixed-rank kriging,
//! lattice kriging with Markov-random-field coefficient priors, and modified
//! predictive processes, all fitted through the same Woodbury machinery.

pub mod frk;
pub mod kernels;
pub mod latticekrig;
pub mod lowrank;
pub mod pp;
pub mod system;

pub use frk::{frk_fit, frk_predict, FrkFit, FrkParams};
pub use kernels::{eval_bisquare, eval_wendland};
pub use latticekrig::{lk_fit, lk_predict, LkFit, LkParams};
pub use lowrank::{lowrank_loglik, lowrank_posterior, LowRankLik, LowRankPosterior, PriorPrecision};
pub use pp::{make_knots, pp_build, pp_fit, pp_loglik, pp_predict, KnotSet, PpFit, PpParams};
pub use system::{build_basis, BasisFamily, BasisSystem, Resolution};
