//! Pipeline orchestration for `mcdm-core`: configuration, run directories, stages,
//! the loss-weight ablation and report rendering.

pub mod ablation;
pub mod config;
pub mod report;
pub mod run;
pub mod stages;

pub use ablation::{run_ablation, AblationGrid, AblationTable};
pub use config::RunConfig;
pub use run::{cache_root, RunContext, Stage};
pub use stages::{run_if_needed, run_pipeline, StageOutcome};
