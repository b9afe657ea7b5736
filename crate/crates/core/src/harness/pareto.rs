use serde::{Deserialize, Serialize};

use super::train::RunLog;
use crate::error::{Error, Result};

/// Default accuracy band below the best model within which points compete.
pub const DEFAULT_ACCURACY_SLACK: f64 = 0.05;

/// One (PE, ECE) outcome with where it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub pe: f64,
    pub ece: f64,
    pub acc: f64,
    pub run_id: String,
    pub epoch: usize,
}

/// Every epoch of every log as a point; with `ts` the post-scaling metrics
/// are used. Epochs with an undefined coordinate are skipped.
pub fn points_from_logs(logs: &[RunLog], ts: bool) -> Vec<ParetoPoint> {
    logs.iter()
        .flat_map(|log| {
            log.rows.iter().filter_map(move |r| {
                let (pe, ece) = if ts {
                    (r.pe_stoch_ts?, r.ece_ts?)
                } else {
                    (r.pe_stoch?, r.ece)
                };
                Some(ParetoPoint {
                    pe,
                    ece,
                    acc: r.acc,
                    run_id: log.id.run_id.clone(),
                    epoch: r.epoch,
                })
            })
        })
        .collect()
}

/// Non-dominated points among those with `acc >= best_accuracy - slack`.
///
/// A point is dropped when another point is no worse in both PE and ECE.
/// Among points with identical coordinates the earliest one is kept. The
/// front is returned in increasing PE. `best_accuracy` defaults to the
/// highest accuracy present.
pub fn pareto_front(
    points: &[ParetoPoint],
    slack: f64,
    best_accuracy: Option<f64>,
) -> Result<Vec<ParetoPoint>> {
    if !(slack >= 0.0 && slack.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "accuracy slack {slack} must be non-negative"
        )));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p.pe >= 0.0 && p.ece >= 0.0 && p.pe.is_finite() && p.ece.is_finite()))
    {
        return Err(Error::InvalidArgument(format!(
            "point ({}, {}) is not finite and non-negative",
            p.pe, p.ece
        )));
    }
    let best = best_accuracy.unwrap_or_else(|| {
        points
            .iter()
            .map(|p| p.acc)
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let mut idx: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].acc >= best - slack)
        .collect();
    idx.sort_by(|&a, &b| {
        let (p, q) = (&points[a], &points[b]);
        p.pe.total_cmp(&q.pe)
            .then(p.ece.total_cmp(&q.ece))
            .then(a.cmp(&b))
    });
    let mut front = Vec::new();
    let mut min_ece = f64::INFINITY;
    for i in idx {
        if points[i].ece < min_ece {
            min_ece = points[i].ece;
            front.push(points[i].clone());
        }
    }
    Ok(front)
}
