use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DatasetRef, ExperimentConfig, GridCell};
use crate::data::{
    benchmark_row, encode_multihot, fixture_spec, generate_synthetic, load_csv, split_6_1_1,
    EncodedDataset,
};
use crate::diffcore::{adam_step, grad, init_mlp, AdamConfig, AdamState, ModelParams, Tensor2};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossKind, LossSpec};
use crate::metrics::{self, base_rates, BaseRates, PeMode, PredictionSet};
use crate::postproc::{apply_dual_temperature, fit_dual_temperature, TsConfig};

/// Train/validation/test partitions plus training base rates.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: EncodedDataset,
    pub val: EncodedDataset,
    pub test: EncodedDataset,
    pub train_rates: BaseRates,
}

impl PreparedData {
    pub fn new(full: &EncodedDataset, split_seed: u64) -> Result<Self> {
        let split = split_6_1_1(full.len(), split_seed)?;
        let train = full.select(&split.train);
        let train_rates = base_rates(&train.labels, &train.groups, train.classes)?;
        if !train_rates.is_defined() {
            return Err(Error::Data("training split contains only one group".into()));
        }
        Ok(Self {
            val: full.select(&split.val),
            test: full.select(&split.test),
            train,
            train_rates,
        })
    }
}

/// Loads or generates the configured dataset, without splitting.
pub fn load_dataset(dataset: &DatasetRef) -> Result<EncodedDataset> {
    match dataset {
        DatasetRef::Csv {
            path,
            label,
            group,
            positive,
            encoder,
        } => {
            let raw = load_csv(path, label, group, positive)?;
            let (mut enc, _) = encode_multihot(&raw, *encoder)?;
            enc.provenance.source = path.display().to_string();
            Ok(enc)
        }
        DatasetRef::Fixture {
            name,
            seed,
            samples,
        } => {
            let row = benchmark_row(name)
                .ok_or_else(|| Error::Config(format!("unknown fixture `{name}`")))?;
            let mut spec = fixture_spec(row, *seed);
            if let Some(n) = samples {
                spec.samples = *n;
            }
            let (mut enc, _) = generate_synthetic(&spec)?;
            enc.provenance.source = format!("fixture:{}", row.name);
            Ok(enc)
        }
        DatasetRef::Synthetic { spec } => Ok(generate_synthetic(spec)?.0),
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    PreparedData::new(&load_dataset(&cfg.dataset)?, cfg.split_seed)
}

/// Identity of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunId {
    pub run_id: String,
    pub technique: String,
    pub kind: LossKind,
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    pub seed: u64,
}

impl RunId {
    pub fn from_cell(cell: &GridCell) -> Self {
        Self {
            run_id: cell.run_id(),
            technique: cell.loss.technique(),
            kind: cell.loss.kind,
            rho: cell.loss.rho,
            lambda: cell.loss.lambda,
            seed: cell.seed,
        }
    }
}

/// Test-split metrics after one training epoch; `_ts` fields are after dual
/// temperature scaling fitted on the validation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub acc: f64,
    pub ece: f64,
    pub pe_stoch: Option<f64>,
    pub pe_det: Option<f64>,
    pub ece_ts: Option<f64>,
    pub pe_stoch_ts: Option<f64>,
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    #[serde(skip)]
    pub val_ece: f64,
    #[serde(skip)]
    pub val_ece_ts: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub id: RunId,
    pub rows: Vec<EpochRow>,
}

/// Training hyperparameters shared by every cell of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub bins: usize,
    pub batch_size: Option<usize>,
    pub ts: Option<TsConfig>,
}

impl TrainSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            epochs: cfg.epochs,
            learning_rate: cfg.learning_rate,
            bins: cfg.bins,
            batch_size: cfg.batch_size,
            ts: cfg.temperature_scaling.then_some(cfg.ts),
        }
    }
}

fn epoch_batches(n: usize, batch: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    match batch {
        Some(b) if b < n => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            idx.chunks(b).map(<[usize]>::to_vec).collect()
        }
        _ => vec![(0..n).collect()],
    }
}

fn train_step(
    params: &mut ModelParams,
    adam: &mut AdamState,
    spec: &LossSpec,
    data: &EncodedDataset,
    rows: &[usize],
) -> Result<f64> {
    let full = rows.len() == data.len();
    let sub;
    let (x, labels, groups) = if full {
        (&data.features, &data.labels[..], &data.groups[..])
    } else {
        sub = data.select(rows);
        (&sub.features, &sub.labels[..], &sub.groups[..])
    };
    let (value, grads) = grad(params, x, |tape, logits, _| {
        total_loss(tape, spec, logits, labels, groups)
    })?;
    if !grads.tensors().all(Tensor2::is_finite) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    adam_step(params, &grads, adam)?;
    Ok(value)
}

fn evaluate_split(
    params: &ModelParams,
    split: &EncodedDataset,
) -> Result<(Tensor2, PredictionSet)> {
    let logits = params.forward(&split.features)?;
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let preds = PredictionSet::from_logits(&logits, split.labels.clone(), split.groups.clone())?;
    Ok((logits, preds))
}

/// Trains one grid cell and records test metrics after every epoch.
pub fn run_cell(data: &PreparedData, cell: &GridCell, settings: &TrainSettings) -> Result<RunLog> {
    cell.loss.validate()?;
    let train = &data.train;
    let mut params = init_mlp(train.dim(), train.classes, cell.seed)?;
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            learning_rate: settings.learning_rate,
            ..AdamConfig::default()
        },
    )?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cell.seed ^ 0x5eed_ba7c);
    let mut rows = Vec::with_capacity(settings.epochs);
    for epoch in 1..=settings.epochs {
        let batches = epoch_batches(train.len(), settings.batch_size, &mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in &batches {
            let l = train_step(&mut params, &mut adam, &cell.loss, train, batch)?;
            loss_sum += l * batch.len() as f64;
        }
        let loss = loss_sum / train.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training loss {loss} at epoch {epoch}"
            )));
        }

        let (test_logits, test_preds) = evaluate_split(&params, &data.test)?;
        let (val_logits, val_preds) = evaluate_split(&params, &data.val)?;
        let rates = &data.train_rates;
        let mut row = EpochRow {
            epoch,
            loss,
            acc: metrics::accuracy(&test_preds)?,
            ece: metrics::ece(&test_preds, settings.bins)?,
            pe_stoch: metrics::pe(&test_preds, rates, PeMode::Stochastic)?.value,
            pe_det: metrics::pe(&test_preds, rates, PeMode::Deterministic)?.value,
            ece_ts: None,
            pe_stoch_ts: None,
            t0: None,
            t1: None,
            val_ece: metrics::ece(&val_preds, settings.bins)?,
            val_ece_ts: None,
        };
        if let Some(ts) = &settings.ts {
            let ts = TsConfig {
                bins: settings.bins,
                ..*ts
            };
            let (pair, trace) =
                fit_dual_temperature(&val_logits, &data.val.labels, &data.val.groups, &ts)?;
            let scaled =
                apply_dual_temperature(&test_logits, &data.test.labels, &data.test.groups, &pair)?;
            row.ece_ts = Some(metrics::ece(&scaled, settings.bins)?);
            row.pe_stoch_ts = metrics::pe(&scaled, rates, PeMode::Stochastic)?.value;
            row.t0 = Some(pair.t0);
            row.t1 = Some(pair.t1);
            row.val_ece_ts = Some(trace.val_ece[trace.chosen_epoch]);
        }
        rows.push(row);
    }
    Ok(RunLog {
        id: RunId::from_cell(cell),
        rows,
    })
}

/// Runs a configuration that resolves to exactly one grid cell.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunLog> {
    cfg.validate()?;
    let cells = cfg.cells()?;
    if cells.len() != 1 {
        return Err(Error::Config(format!(
            "expected a single grid cell, configuration has {}",
            cells.len()
        )));
    }
    let data = prepare(cfg)?;
    run_cell(&data, &cells[0], &TrainSettings::from_config(cfg))
}
