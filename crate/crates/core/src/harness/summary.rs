use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::train::{EpochRow, RunLog};
use crate::error::{Error, Result};

/// What the "best" epoch minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Stochastic PE.
    Fairness,
    /// ECE.
    Calibration,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Fairness => "fairness",
            Objective::Calibration => "calibration",
        }
    }
}

/// One technique's mean-over-seeds best outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub technique: String,
    pub seeds: usize,
    pub pe: f64,
    pub ece: f64,
    pub acc: f64,
    /// Percent change against the NLL baseline; `None` without a baseline.
    pub pe_change: Option<f64>,
    pub ece_change: Option<f64>,
    pub acc_change: Option<f64>,
}

/// `(pe, ece, acc)` at a row, with or without temperature scaling.
fn row_metrics(row: &EpochRow, ts: bool) -> Option<(f64, f64, f64)> {
    if ts {
        Some((row.pe_stoch_ts?, row.ece_ts?, row.acc))
    } else {
        Some((row.pe_stoch?, row.ece, row.acc))
    }
}

fn pct(value: f64, base: f64) -> Option<f64> {
    (base != 0.0).then(|| 100.0 * (value - base) / base)
}

/// Per technique: for each seed, the epoch (over all of that seed's grid
/// cells) minimizing the objective; then the mean over seeds of the objective
/// and of the companion metrics read at those epochs. Ties keep the earliest
/// log and epoch. With `ts` the post-scaling columns are used and the
/// technique name gets a `_ts` suffix. Percent changes are against the `nll`
/// technique's row when present.
pub fn best_metric_summary(
    logs: &[RunLog],
    objective: Objective,
    ts: bool,
) -> Result<Vec<SummaryRow>> {
    if logs.is_empty() {
        return Err(Error::Empty("no run logs to summarize".into()));
    }
    let mut best: BTreeMap<String, BTreeMap<u64, (f64, f64, f64)>> = BTreeMap::new();
    for log in logs {
        let per_seed = best.entry(log.id.technique.clone()).or_default();
        for row in &log.rows {
            let Some(m) = row_metrics(row, ts) else {
                continue;
            };
            let key = |m: &(f64, f64, f64)| match objective {
                Objective::Fairness => m.0,
                Objective::Calibration => m.1,
            };
            match per_seed.get(&log.id.seed) {
                Some(cur) if key(cur) <= key(&m) => {}
                _ => {
                    per_seed.insert(log.id.seed, m);
                }
            }
        }
    }
    let mut rows: Vec<SummaryRow> = best
        .into_iter()
        .filter(|(_, seeds)| !seeds.is_empty())
        .map(|(technique, seeds)| {
            let n = seeds.len() as f64;
            let mean = |f: fn(&(f64, f64, f64)) -> f64| seeds.values().map(f).sum::<f64>() / n;
            SummaryRow {
                technique: if ts {
                    format!("{technique}_ts")
                } else {
                    technique
                },
                seeds: seeds.len(),
                pe: mean(|m| m.0),
                ece: mean(|m| m.1),
                acc: mean(|m| m.2),
                pe_change: None,
                ece_change: None,
                acc_change: None,
            }
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::Empty(
            "no epoch has the selected metrics defined".into(),
        ));
    }
    let baseline = if ts { "nll_ts" } else { "nll" };
    if let Some(base) = rows.iter().find(|r| r.technique == baseline).cloned() {
        for r in &mut rows {
            r.pe_change = pct(r.pe, base.pe);
            r.ece_change = pct(r.ece, base.ece);
            r.acc_change = pct(r.acc, base.acc);
        }
    }
    Ok(rows)
}
