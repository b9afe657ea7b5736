//! Monte-Carlo check that a group-wise calibrated predictor is calibrated
//! and PE-fair.
//!
//! The predictor returns the true conditional `Pr[Y | cell, A]` of a
//! [`SyntheticSpec`], optionally sharpened. Each statistic is compared with
//! three times a standard error computed under the hypothesis that the
//! reported probabilities are calibrated:
//!
//! * ECE: `sum_m (n_m / n) sqrt(sum_{i in m} r_i (1 - r_i)) / n_m`, which
//!   bounds the standard deviation of the bin-weighted gap, with `r_i` the
//!   reported confidence.
//! * Stochastic PE, per class `k`: the ratio `P̂(k|a) / P(k|a)` has error
//!   about `sqrt(sum_{i in a} p_ik (1 - p_ik)) / (n_a P(k|a))`; the two
//!   groups add in quadrature and the largest class error is used.
//!
//! Base rates come from the sampled labels themselves.

use serde::{Deserialize, Serialize};

use crate::data::{sample_synthetic, SyntheticSpec};
use crate::diffcore::Tensor2;
use crate::error::{Error, Result};
use crate::metrics::{self, base_rates, bin_index, PeMode, PredictionSet, DEFAULT_BINS};

/// Smallest sample size accepted by [`verify_lemmas`].
pub const MIN_SAMPLES: usize = 10_000;

/// A statistic, its Monte-Carlo standard error and whether it lies within
/// three standard errors of zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub value: f64,
    pub sigma: f64,
    pub pass: bool,
}

impl Check {
    fn new(value: f64, sigma: f64) -> Self {
        Self {
            value,
            sigma,
            pass: value <= 3.0 * sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub samples: usize,
    pub temperature: f64,
    pub accuracy: f64,
    pub ece: Check,
    pub groupwise_ece: [Option<Check>; 2],
    pub pe_stochastic: Check,
    pub pe_deterministic: Option<f64>,
    pub pass: bool,
}

/// Standard error of the ECE of `preds` under calibration.
pub fn ece_sigma(preds: &PredictionSet, bins: usize) -> f64 {
    let mut var = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for r in preds.confidence() {
        let b = bin_index(r, bins);
        var[b] += r * (1.0 - r);
        count[b] += 1;
    }
    let n = preds.len() as f64;
    var.iter()
        .zip(&count)
        .filter(|(_, &c)| c > 0)
        .map(|(v, &c)| (c as f64 / n) * v.sqrt() / c as f64)
        .sum()
}

fn pe_sigma(preds: &PredictionSet, rates: &metrics::BaseRates) -> f64 {
    let k = preds.classes();
    let mut var = [vec![0.0; k], vec![0.0; k]];
    for (row, &a) in preds.probs().iter_rows().zip(preds.groups()) {
        for (v, &p) in var[a as usize].iter_mut().zip(row) {
            *v += p * (1.0 - p);
        }
    }
    (0..k)
        .filter_map(|c| {
            let mut total = 0.0;
            for a in 0..2u8 {
                let rate = rates.rate(a, c)?;
                if rate < metrics::PE_DENOMINATOR_EPS {
                    return None;
                }
                let sd = var[a as usize][c].sqrt() / (rates.group_counts[a as usize] as f64 * rate);
                total += sd * sd;
            }
            Some(total.sqrt())
        })
        .fold(0.0, f64::max)
}

/// `p^(1/T)` renormalized, i.e. `softmax(log p / T)`.
fn sharpen(p: &[f64], temperature: f64) -> Vec<f64> {
    let powered: Vec<f64> = p.iter().map(|&v| v.powf(1.0 / temperature)).collect();
    let total: f64 = powered.iter().sum();
    powered.into_iter().map(|v| v / total).collect()
}

/// Verifies the oracle predictor of `spec` on `samples` fresh draws.
pub fn verify_lemmas(spec: &SyntheticSpec, samples: usize) -> Result<LemmaReport> {
    verify_with_temperature(spec, samples, 1.0)
}

/// As [`verify_lemmas`], with the oracle probabilities sharpened
/// (`temperature < 1`) or flattened (`temperature > 1`).
pub fn verify_with_temperature(
    spec: &SyntheticSpec,
    samples: usize,
    temperature: f64,
) -> Result<LemmaReport> {
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SAMPLES} samples, got {samples}"
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature {temperature} must be positive"
        )));
    }
    let spec = SyntheticSpec {
        samples,
        ..spec.clone()
    };
    let draw = sample_synthetic(&spec)?;
    let k = spec.classes();
    let mut probs = Tensor2::zeros(samples, k);
    for (i, (&c, &a)) in draw.cells.iter().zip(&draw.groups).enumerate() {
        let row = sharpen(&spec.conditionals[a as usize][c], temperature);
        probs.row_mut(i).copy_from_slice(&row);
    }
    let preds = PredictionSet::new(probs, draw.labels.clone(), draw.groups.clone())?;
    let rates = base_rates(&draw.labels, &draw.groups, k)?;
    if !rates.is_defined() {
        return Err(Error::Data("sample contains only one group".into()));
    }

    let ece = Check::new(
        metrics::ece(&preds, DEFAULT_BINS)?,
        ece_sigma(&preds, DEFAULT_BINS),
    );
    let groupwise_ece = [0u8, 1].map(|a| {
        let sub = preds.subset(a);
        (!sub.is_empty()).then(|| {
            Check::new(
                metrics::ece(&sub, DEFAULT_BINS).expect("non-empty"),
                ece_sigma(&sub, DEFAULT_BINS),
            )
        })
    });
    let pe = metrics::pe(&preds, &rates, PeMode::Stochastic)?;
    let pe_value = pe
        .value
        .ok_or_else(|| Error::Data("no class has positive base rates in both groups".into()))?;
    let pe_stochastic = Check::new(pe_value, pe_sigma(&preds, &rates));
    let pass = ece.pass && pe_stochastic.pass && groupwise_ece.iter().flatten().all(|c| c.pass);
    Ok(LemmaReport {
        samples,
        temperature,
        accuracy: metrics::accuracy(&preds)?,
        ece,
        groupwise_ece,
        pe_stochastic,
        pe_deterministic: metrics::pe(&preds, &rates, PeMode::Deterministic)?.value,
        pass,
    })
}
