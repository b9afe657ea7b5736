//! WebAssembly bindings behind `www/index.html`: a reliability diagram with a
//! temperature per group, a Pareto front over random trade-off points, and
//! the oracle-predictor lemma check.
//!
//! Every export returns a JSON string; the page parses it and draws with the
//! canvas API.

use faircal::data::{sample_synthetic, SyntheticSpec};
use faircal::diffcore::Tensor2;
use faircal::harness::{pareto_front, verify_with_temperature, ParetoPoint, MIN_SAMPLES};
use faircal::metrics::{base_rates, bin_predictions, groupwise_ece, BaseRates, PeMode};
use faircal::postproc::{apply_dual_temperature, fit_dual_temperature, TemperaturePair, TsConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

fn binary_rows(q: &[f64]) -> Vec<Vec<f64>> {
    q.iter().map(|&p| vec![1.0 - p, p]).collect()
}

/// Binary predictions whose logits are the true log-odds multiplied by a
/// per-group overconfidence factor.
pub struct Scenario {
    logits: Tensor2,
    labels: Vec<usize>,
    groups: Vec<u8>,
    rates: BaseRates,
}

#[derive(Serialize)]
pub struct Diagram {
    pub t0: f64,
    pub t1: f64,
    pub counts: Vec<usize>,
    pub accuracy: Vec<f64>,
    pub confidence: Vec<f64>,
    pub ece: f64,
    pub ece_by_group: [Option<f64>; 2],
    pub pe: Option<f64>,
}

impl Scenario {
    pub fn generate(samples: usize, overconfidence: [f64; 2], seed: u64) -> Result<Self, String> {
        if samples < 10 {
            return Err("need at least 10 samples".into());
        }
        let spec = SyntheticSpec {
            cells: 8,
            p_group1: 0.6,
            cell_weights: None,
            conditionals: [
                binary_rows(&[0.05, 0.1, 0.2, 0.3, 0.35, 0.45, 0.55, 0.7]),
                binary_rows(&[0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95]),
            ],
            samples,
            seed,
        };
        let draw = sample_synthetic(&spec).map_err(|e| e.to_string())?;
        let mut logits = Tensor2::zeros(samples, 2);
        for (i, (&c, &a)) in draw.cells.iter().zip(&draw.groups).enumerate() {
            let q = spec.conditionals[a as usize][c][1];
            logits.row_mut(i)[1] = overconfidence[a as usize] * (q / (1.0 - q)).ln();
        }
        let rates = base_rates(&draw.labels, &draw.groups, 2).map_err(|e| e.to_string())?;
        Ok(Self {
            logits,
            labels: draw.labels,
            groups: draw.groups,
            rates,
        })
    }

    pub fn diagram(&self, t0: f64, t1: f64, bins: usize) -> Result<Diagram, String> {
        let pair = TemperaturePair::new(t0, t1).map_err(|e| e.to_string())?;
        let preds = apply_dual_temperature(&self.logits, &self.labels, &self.groups, &pair)
            .map_err(|e| e.to_string())?;
        let b = bin_predictions(&preds, bins).map_err(|e| e.to_string())?;
        let ece = faircal::metrics::ece_from_bins(&b).map_err(|e| e.to_string())?;
        Ok(Diagram {
            t0,
            t1,
            ece,
            ece_by_group: groupwise_ece(&preds, bins).map_err(|e| e.to_string())?,
            pe: faircal::metrics::pe(&preds, &self.rates, PeMode::Stochastic)
                .map_err(|e| e.to_string())?
                .value,
            counts: b.counts,
            accuracy: b.accuracy,
            confidence: b.confidence,
        })
    }

    /// Dual temperatures fitted on the scenario itself.
    pub fn fit(&self) -> Result<TemperaturePair, String> {
        fit_dual_temperature(
            &self.logits,
            &self.labels,
            &self.groups,
            &TsConfig::default(),
        )
        .map(|(pair, _)| pair)
        .map_err(|e| e.to_string())
    }
}

#[wasm_bindgen]
pub struct Reliability {
    inner: Scenario,
}

#[wasm_bindgen]
impl Reliability {
    #[wasm_bindgen(constructor)]
    pub fn new(
        samples: usize,
        overconfidence0: f64,
        overconfidence1: f64,
        seed: u32,
    ) -> Result<Reliability, JsError> {
        Scenario::generate(samples, [overconfidence0, overconfidence1], seed.into())
            .map(|inner| Self { inner })
            .map_err(|e| JsError::new(&e))
    }

    /// Reliability bins, overall and per-group ECE and stochastic PE at `(t0, t1)`.
    pub fn diagram(&self, t0: f64, t1: f64, bins: usize) -> Result<String, JsError> {
        js(self.inner.diagram(t0, t1, bins).and_then(|d| to_json(&d)))
    }

    pub fn fit(&self) -> Result<String, JsError> {
        js(self.inner.fit().and_then(|p| to_json(&p)))
    }
}

#[derive(Serialize)]
pub struct ParetoView {
    pub points: Vec<ParetoPoint>,
    pub front: Vec<ParetoPoint>,
}

pub fn pareto_cloud(count: usize, slack: f64, seed: u64) -> Result<ParetoView, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<ParetoPoint> = (0..count)
        .map(|i| {
            // PE and ECE drawn anti-correlated.
            let t: f64 = rng.gen();
            ParetoPoint {
                pe: (0.02 + 0.3 * t + 0.08 * rng.gen::<f64>()).max(0.0),
                ece: (0.02 + 0.15 * (1.0 - t) * (1.0 - t) + 0.05 * rng.gen::<f64>()).max(0.0),
                acc: 0.75 + 0.1 * rng.gen::<f64>(),
                run_id: format!("run{}", i % 12),
                epoch: i,
            }
        })
        .collect();
    let front = pareto_front(&points, slack, None).map_err(|e| e.to_string())?;
    Ok(ParetoView { points, front })
}

#[wasm_bindgen]
pub fn pareto(count: usize, slack: f64, seed: u32) -> Result<String, JsError> {
    js(pareto_cloud(count, slack, seed.into()).and_then(|v| to_json(&v)))
}

pub fn lemma_report(
    rate0: f64,
    rate1: f64,
    p_group1: f64,
    temperature: f64,
    samples: usize,
    seed: u64,
) -> Result<String, String> {
    // Four equally likely cells spread around each group's rate.
    let spread = |r: f64| {
        let s = 0.6 * r.min(1.0 - r);
        binary_rows(&[r - s, r - s / 3.0, r + s / 3.0, r + s])
    };
    let spec = SyntheticSpec {
        cells: 4,
        p_group1,
        cell_weights: None,
        conditionals: [spread(rate0), spread(rate1)],
        samples: 0,
        seed,
    };
    let report = verify_with_temperature(&spec, samples.max(MIN_SAMPLES), temperature)
        .map_err(|e| e.to_string())?;
    to_json(&report)
}

/// The oracle predictor's ECE and PE against three standard errors; a
/// temperature other than 1 distorts the oracle and should fail.
#[wasm_bindgen]
pub fn lemmas(
    rate0: f64,
    rate1: f64,
    p_group1: f64,
    temperature: f64,
    samples: usize,
    seed: u32,
) -> Result<String, JsError> {
    js(lemma_report(
        rate0,
        rate1,
        p_group1,
        temperature,
        samples,
        seed.into(),
    ))
}
