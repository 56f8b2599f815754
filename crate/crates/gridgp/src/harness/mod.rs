//! Competition harness: data files, train/test splits, the method registry,
//! sequential execution with timing, scoring, and artifact export. The
//! command-line binary is a thin wrapper over this module.

pub mod io;
pub mod run;
pub mod split;

pub use io::{load_dataset, parse_dataset, save_dataset, write_pgm};
pub use run::{
    export, resolve_dataset, resolve_split, run_competition, run_method, CompetitionArtifacts,
    DataConfig, MethodOutcome, MethodSpec, RunConfig, SimulateConfig, SplitConfig, METHOD_IDS,
};
pub use split::{split_with_clouds, split_with_mask, CloudConfig, Split};
