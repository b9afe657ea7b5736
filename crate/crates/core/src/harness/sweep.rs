use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::train::{prepare, run_cell, RunId, RunLog, TrainSettings};
use crate::error::Result;

/// A grid cell that stopped with an error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub id: RunId,
    pub error: String,
    pub exit_code: i32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub logs: Vec<RunLog>,
    pub failures: Vec<CellFailure>,
}

/// Runs every grid cell, in parallel, keeping results in grid order. A cell
/// that fails is recorded and the others continue.
pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let cells = cfg.cells()?;
    let data = prepare(cfg)?;
    let settings = TrainSettings::from_config(cfg);
    let outcomes: Vec<_> = cells
        .par_iter()
        .map(|cell| (cell, run_cell(&data, cell, &settings)))
        .collect();
    let mut result = SweepResult {
        logs: Vec::new(),
        failures: Vec::new(),
    };
    for (cell, outcome) in outcomes {
        match outcome {
            Ok(log) => result.logs.push(log),
            Err(e) => result.failures.push(CellFailure {
                id: RunId::from_cell(cell),
                error: e.to_string(),
                exit_code: e.exit_code(),
            }),
        }
    }
    Ok(result)
}
