//! Run configuration and on-disk artifacts.

mod config;
mod files;

use serde::{Deserialize, Serialize};

pub(crate) use files::csv_error;
pub use config::{DiscretizationSection, OptimizerSection, OutputSection, ProblemSection, RunConfig};
pub use files::{
    design_image, design_to_string, heatmap_image, parse_design, pixel_value, read_design, read_history, read_json,
    write_design, write_indicator_csv, write_json, HistoryWriter, Image,
};

use crate::optimizer::IterationRecord;

pub const SUMMARY_SCHEMA: u32 = 1;

/// Contents of `summary.json` for a single optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: u32,
    pub config: RunConfig,
    pub iterations: usize,
    pub converged: bool,
    pub phi_h: f64,
    pub e_apost: f64,
    pub phi_c: f64,
    pub volume: f64,
    pub qm: f64,
    /// Compliance and estimator of the final design on the fine verification grid.
    pub fine: Option<FineEvaluation>,
    /// CG relative residual target (direct solves are exact).
    pub solver_tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineEvaluation {
    pub n: usize,
    pub phi_h: f64,
    pub e_apost: f64,
}

impl RunSummary {
    pub fn new(config: &RunConfig, last: &IterationRecord, converged: bool, fine: Option<FineEvaluation>) -> Self {
        RunSummary {
            schema: SUMMARY_SCHEMA,
            config: config.clone(),
            iterations: last.iter,
            converged,
            phi_h: last.phi_h,
            e_apost: last.e_apost,
            phi_c: last.phi_c,
            volume: last.volume,
            qm: last.qm,
            fine,
            solver_tolerance: config.optimizer.solver.rel_tol,
        }
    }
}
