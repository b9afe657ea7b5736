//! Evaluation-side quantities: binned ECE, accuracy, proportional equality
//! (stochastic and deterministic) and per-group ECE.

use serde::{Deserialize, Serialize};

use crate::diffcore::{argmax_row, softmax_rows, Tensor2};
use crate::error::{Error, Result};

/// Default number of equal-width confidence bins.
pub const DEFAULT_BINS: usize = 10;

/// Class ratios whose base-rate denominator falls below this are skipped.
pub const PE_DENOMINATOR_EPS: f64 = 1e-12;

const SIMPLEX_TOL: f64 = 1e-9;

/// Predicted class distributions together with labels and groups.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    probs: Tensor2,
    labels: Vec<usize>,
    groups: Vec<u8>,
}

impl PredictionSet {
    pub fn new(probs: Tensor2, labels: Vec<usize>, groups: Vec<u8>) -> Result<Self> {
        let (n, k) = probs.shape();
        if labels.len() != n || groups.len() != n {
            return Err(Error::Shape(format!(
                "{n} rows, {} labels, {} groups",
                labels.len(),
                groups.len()
            )));
        }
        if k < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {k}"
            )));
        }
        for (i, row) in probs.iter_rows().enumerate() {
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > SIMPLEX_TOL
                || row
                    .iter()
                    .any(|&p| !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&p))
            {
                return Err(Error::InvalidArgument(format!(
                    "row {i} is not a probability vector"
                )));
            }
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::InvalidArgument(format!("label {y} outside 0..{k}")));
        }
        if let Some(&a) = groups.iter().find(|&&a| a > 1) {
            return Err(Error::InvalidArgument(format!(
                "group value {a} is not binary"
            )));
        }
        Ok(Self {
            probs,
            labels,
            groups,
        })
    }

    pub fn from_logits(logits: &Tensor2, labels: Vec<usize>, groups: Vec<u8>) -> Result<Self> {
        Self::new(softmax_rows(logits), labels, groups)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn probs(&self) -> &Tensor2 {
        &self.probs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> &[u8] {
        &self.groups
    }

    /// Predicted class per row (lowest index on ties).
    pub fn predicted(&self) -> Vec<usize> {
        self.probs.iter_rows().map(argmax_row).collect()
    }

    /// Max-confidence per row.
    pub fn confidence(&self) -> Vec<f64> {
        self.probs.iter_rows().map(|r| r[argmax_row(r)]).collect()
    }

    /// Rows belonging to group `a`.
    pub fn subset(&self, a: u8) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.groups[i] == a).collect();
        Self {
            probs: self.probs.select_rows(&idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            groups: vec![a; idx.len()],
        }
    }
}

/// Equal-width reliability bins over max-confidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBins {
    pub counts: Vec<usize>,
    /// Mean correctness per bin (0 for empty bins).
    pub accuracy: Vec<f64>,
    /// Mean confidence per bin (0 for empty bins).
    pub confidence: Vec<f64>,
}

impl CalibrationBins {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Zero-based bin for a confidence in `((m-1)/M, m/M]`; a confidence of 0
/// goes to the first bin.
pub fn bin_index(confidence: f64, bins: usize) -> usize {
    let m = bins as f64;
    let mut b = ((confidence * m).ceil() as isize).clamp(1, bins as isize) as usize;
    // Re-check against the exact edges b/M to undo rounding in the product.
    while b > 1 && confidence <= (b - 1) as f64 / m {
        b -= 1;
    }
    while b < bins && confidence > b as f64 / m {
        b += 1;
    }
    b - 1
}

pub fn bin_predictions(preds: &PredictionSet, bins: usize) -> Result<CalibrationBins> {
    if bins == 0 {
        return Err(Error::InvalidArgument(
            "bin count must be at least 1".into(),
        ));
    }
    if preds.is_empty() {
        return Err(Error::Empty("no predictions to bin".into()));
    }
    let mut counts = vec![0usize; bins];
    let mut correct = vec![0.0; bins];
    let mut conf_sum = vec![0.0; bins];
    for ((row, &y), conf) in preds
        .probs
        .iter_rows()
        .zip(&preds.labels)
        .zip(preds.confidence())
    {
        let b = bin_index(conf, bins);
        counts[b] += 1;
        conf_sum[b] += conf;
        if argmax_row(row) == y {
            correct[b] += 1.0;
        }
    }
    let mean = |s: &[f64]| -> Vec<f64> {
        s.iter()
            .zip(&counts)
            .map(|(&v, &c)| if c > 0 { v / c as f64 } else { 0.0 })
            .collect()
    };
    Ok(CalibrationBins {
        accuracy: mean(&correct),
        confidence: mean(&conf_sum),
        counts,
    })
}

/// Bin-weighted mean of `|acc - conf|`.
pub fn ece_from_bins(bins: &CalibrationBins) -> Result<f64> {
    let n = bins.total();
    if n == 0 {
        return Err(Error::Empty("no populated bins".into()));
    }
    Ok(bins
        .counts
        .iter()
        .zip(bins.accuracy.iter().zip(&bins.confidence))
        .filter(|(&c, _)| c > 0)
        .map(|(&c, (a, f))| c as f64 / n as f64 * (a - f).abs())
        .sum())
}

/// Expected calibration error with `bins` equal-width bins.
pub fn ece(preds: &PredictionSet, bins: usize) -> Result<f64> {
    ece_from_bins(&bin_predictions(preds, bins)?)
}

pub fn accuracy(preds: &PredictionSet) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Empty("accuracy of an empty prediction set".into()));
    }
    let hits = preds
        .predicted()
        .iter()
        .zip(&preds.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Empirical `Pr[A = 1]` and `Pr[Y = k | A = a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseRates {
    pub classes: usize,
    pub group_counts: [usize; 2],
    pub p_group1: f64,
    /// Per-group class frequencies; `None` when that group has no rows.
    pub rates: [Option<Vec<f64>>; 2],
}

impl BaseRates {
    pub fn is_defined(&self) -> bool {
        self.rates.iter().all(Option::is_some)
    }

    pub fn rate(&self, group: u8, class: usize) -> Option<f64> {
        self.rates[group as usize].as_ref().map(|r| r[class])
    }
}

pub fn base_rates(labels: &[usize], groups: &[u8], classes: usize) -> Result<BaseRates> {
    if labels.len() != groups.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} groups",
            labels.len(),
            groups.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("base rates of an empty dataset".into()));
    }
    let mut counts = [vec![0usize; classes], vec![0usize; classes]];
    let mut sizes = [0usize; 2];
    for (&y, &a) in labels.iter().zip(groups) {
        if a > 1 {
            return Err(Error::InvalidArgument(format!(
                "group value {a} is not binary"
            )));
        }
        if y >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {y} outside 0..{classes}"
            )));
        }
        counts[a as usize][y] += 1;
        sizes[a as usize] += 1;
    }
    let rates = [0, 1].map(|a| {
        (sizes[a] > 0).then(|| {
            counts[a]
                .iter()
                .map(|&c| c as f64 / sizes[a] as f64)
                .collect()
        })
    });
    Ok(BaseRates {
        classes,
        group_counts: sizes,
        p_group1: sizes[1] as f64 / labels.len() as f64,
        rates,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeMode {
    /// Group mean of the predicted probability of each class.
    Stochastic,
    /// Group frequency of each predicted class.
    Deterministic,
}

/// Proportional-equality value; `value` is `None` when no class had usable
/// base-rate denominators or a group had no predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeValue {
    pub value: Option<f64>,
    pub skipped_classes: Vec<usize>,
}

/// Per-group predicted class shares, stochastic or deterministic.
pub fn predicted_shares(preds: &PredictionSet, mode: PeMode) -> [Option<Vec<f64>>; 2] {
    let k = preds.classes();
    let mut sums = [vec![0.0; k], vec![0.0; k]];
    let mut sizes = [0usize; 2];
    for (row, &a) in preds.probs.iter_rows().zip(&preds.groups) {
        let a = a as usize;
        sizes[a] += 1;
        match mode {
            PeMode::Stochastic => {
                for (s, p) in sums[a].iter_mut().zip(row) {
                    *s += p;
                }
            }
            PeMode::Deterministic => sums[a][argmax_row(row)] += 1.0,
        }
    }
    [0, 1].map(|a| (sizes[a] > 0).then(|| sums[a].iter().map(|s| s / sizes[a] as f64).collect()))
}

/// Proportional equality against training base rates:
/// `max_k |P̂(k|A=1)/P(k|A=1) - P̂(k|A=0)/P(k|A=0)|`, where `P` are the
/// base rates and `P̂` the model's group-wise predicted shares.
pub fn pe(preds: &PredictionSet, train_rates: &BaseRates, mode: PeMode) -> Result<PeValue> {
    let (Some(data0), Some(data1)) = (&train_rates.rates[0], &train_rates.rates[1]) else {
        return Err(Error::InvalidArgument(
            "base rates undefined for a group".into(),
        ));
    };
    if train_rates.classes != preds.classes() {
        return Err(Error::Shape(format!(
            "base rates over {} classes, predictions over {}",
            train_rates.classes,
            preds.classes()
        )));
    }
    let [Some(model0), Some(model1)] = predicted_shares(preds, mode) else {
        return Ok(PeValue {
            value: None,
            skipped_classes: Vec::new(),
        });
    };
    let mut skipped = Vec::new();
    let mut worst: Option<f64> = None;
    for k in 0..preds.classes() {
        if data0[k] < PE_DENOMINATOR_EPS || data1[k] < PE_DENOMINATOR_EPS {
            skipped.push(k);
            continue;
        }
        let gap = (model1[k] / data1[k] - model0[k] / data0[k]).abs();
        worst = Some(worst.map_or(gap, |w: f64| w.max(gap)));
    }
    Ok(PeValue {
        value: worst,
        skipped_classes: skipped,
    })
}

/// ECE computed separately on each group; `None` for an empty group.
pub fn groupwise_ece(preds: &PredictionSet, bins: usize) -> Result<[Option<f64>; 2]> {
    let mut out = [None, None];
    for a in 0..2u8 {
        let sub = preds.subset(a);
        if !sub.is_empty() {
            out[a as usize] = Some(ece(&sub, bins)?);
        }
    }
    Ok(out)
}

/// Metrics for one evaluation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub ece: f64,
    pub pe_stochastic: Option<f64>,
    pub pe_deterministic: Option<f64>,
    pub groupwise_ece: [Option<f64>; 2],
    pub n_eval: usize,
}

pub fn evaluate(
    preds: &PredictionSet,
    train_rates: &BaseRates,
    bins: usize,
) -> Result<MetricsReport> {
    Ok(MetricsReport {
        accuracy: accuracy(preds)?,
        ece: ece(preds, bins)?,
        pe_stochastic: pe(preds, train_rates, PeMode::Stochastic)?.value,
        pe_deterministic: pe(preds, train_rates, PeMode::Deterministic)?.value,
        groupwise_ece: groupwise_ece(preds, bins)?,
        n_eval: preds.len(),
    })
}
