use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{EncoderMode, SyntheticSpec};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::metrics::DEFAULT_BINS;
use crate::postproc::TsConfig;

/// Shared calibration-weight grid.
pub const LAMBDA_GRID: [f64; 12] = [
    0.2, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0,
];

fn steps(from: f64, to: f64) -> Vec<f64> {
    let n = ((to - from) / 0.05).round() as usize;
    (0..=n)
        .map(|i| ((from + 0.05 * i as f64) * 100.0).round() / 100.0)
        .collect()
}

/// Group weight grid searched for each benchmark.
pub fn rho_preset(name: &str) -> Option<Vec<f64>> {
    let (from, to) = match name.to_ascii_lowercase().as_str() {
        "adult" => (0.4, 0.8),
        "arrhythmia" => (0.4, 0.6),
        "communities" => (0.4, 0.75),
        "compas" => (0.4, 0.65),
        "drug" => (0.4, 0.95),
        "german" => (0.4, 0.9),
        "lawschool" => (0.4, 0.6),
        _ => return None,
    };
    Some(steps(from, to))
}

/// Where the rows of an experiment come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetRef {
    Csv {
        path: PathBuf,
        label: String,
        group: String,
        positive: String,
        #[serde(default)]
        encoder: EncoderMode,
    },
    /// Synthetic stand-in for a named benchmark.
    Fixture {
        name: String,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        samples: Option<usize>,
    },
    Synthetic {
        spec: SyntheticSpec,
    },
}

fn default_name() -> String {
    "experiment".into()
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_epochs() -> usize {
    500
}
fn default_lr() -> f64 {
    1e-4
}
fn default_bins() -> usize {
    DEFAULT_BINS
}
fn default_true() -> bool {
    true
}

/// One JSON document describing a run or a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetRef,
    /// Loss template; `rho` and `lambda` are overridden per grid cell.
    pub loss: LossSpec,
    /// Named benchmark whose grids fill any empty applicable grid.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub rho_grid: Vec<f64>,
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Mini-batch size; full batch when absent.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_true")]
    pub temperature_scaling: bool,
    #[serde(default)]
    pub ts: TsConfig,
}

/// One point of the (rho x lambda x seed) product.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub loss: LossSpec,
    pub seed: u64,
}

impl GridCell {
    pub fn run_id(&self) -> String {
        let mut id = self.loss.technique();
        if let Some(rho) = self.loss.rho {
            id.push_str(&format!("_rho{rho}"));
        }
        if let Some(lambda) = self.loss.lambda {
            id.push_str(&format!("_lam{lambda}"));
        }
        id.push_str(&format!("_s{}", self.seed));
        id
    }
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetRef, loss: LossSpec) -> Self {
        Self {
            name: default_name(),
            dataset,
            loss,
            preset: None,
            rho_grid: Vec::new(),
            lambda_grid: Vec::new(),
            seeds: default_seeds(),
            split_seed: 0,
            epochs: default_epochs(),
            learning_rate: default_lr(),
            bins: default_bins(),
            batch_size: None,
            temperature_scaling: true,
            ts: TsConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "experiment config".into(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::Json {
                context: path.display().to_string(),
                source,
            },
            other => other,
        })
    }

    /// Effective rho values: the explicit grid, else the preset, else the
    /// template's own rho. Empty for ungrouped losses.
    pub fn rho_values(&self) -> Result<Vec<f64>> {
        if !self.loss.groupwise {
            if !self.rho_grid.is_empty() {
                return Err(Error::Config(format!(
                    "rho_grid given but {} is not group-wise",
                    self.loss.kind
                )));
            }
            return Ok(Vec::new());
        }
        if !self.rho_grid.is_empty() {
            return Ok(self.rho_grid.clone());
        }
        if let Some(grid) = self.preset.as_deref().and_then(rho_preset) {
            return Ok(grid);
        }
        self.loss
            .rho
            .map(|r| vec![r])
            .ok_or_else(|| Error::Config("group-wise loss needs rho or rho_grid".into()))
    }

    /// Effective lambda values, resolved like [`Self::rho_values`].
    pub fn lambda_values(&self) -> Result<Vec<f64>> {
        if !self.loss.kind.uses_lambda() {
            if !self.lambda_grid.is_empty() {
                return Err(Error::Config(format!(
                    "lambda_grid given but {} takes no lambda",
                    self.loss.kind
                )));
            }
            return Ok(Vec::new());
        }
        if !self.lambda_grid.is_empty() {
            return Ok(self.lambda_grid.clone());
        }
        if self.preset.is_some() {
            return Ok(LAMBDA_GRID.to_vec());
        }
        self.loss
            .lambda
            .map(|l| vec![l])
            .ok_or_else(|| Error::Config(format!("{} needs lambda", self.loss.kind)))
    }

    /// The Cartesian product in (rho, lambda, seed) order. A grid that does
    /// not apply to the loss contributes a single unset value.
    pub fn cells(&self) -> Result<Vec<GridCell>> {
        let rhos: Vec<Option<f64>> = match self.rho_values()? {
            v if v.is_empty() => vec![None],
            v => v.into_iter().map(Some).collect(),
        };
        let lambdas: Vec<Option<f64>> = match self.lambda_values()? {
            v if v.is_empty() => vec![None],
            v => v.into_iter().map(Some).collect(),
        };
        let mut cells = Vec::with_capacity(rhos.len() * lambdas.len() * self.seeds.len());
        for &rho in &rhos {
            for &lambda in &lambdas {
                for &seed in &self.seeds {
                    let loss = LossSpec {
                        rho,
                        lambda,
                        ..self.loss.clone()
                    };
                    loss.validate()?;
                    cells.push(GridCell { loss, seed });
                }
            }
        }
        Ok(cells)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(p) = &self.preset {
            if rho_preset(p).is_none() {
                return Err(Error::Config(format!("unknown preset `{p}`")));
            }
        }
        self.ts.validate()?;
        self.cells().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;

    fn fixture() -> DatasetRef {
        DatasetRef::Fixture {
            name: "adult".into(),
            seed: 0,
            samples: None,
        }
    }

    #[test]
    fn presets() {
        assert_eq!(
            rho_preset("adult").unwrap(),
            vec![0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8]
        );
        assert_eq!(rho_preset("drug").unwrap().len(), 12);
        assert_eq!(
            rho_preset("arrhythmia").unwrap(),
            vec![0.4, 0.45, 0.5, 0.55, 0.6]
        );
        assert!(rho_preset("mnist").is_none());
    }

    #[test]
    fn product_count() {
        let mut cfg = ExperimentConfig::new(fixture(), LossSpec::new(LossKind::Mmce).grouped(0.5));
        cfg.rho_grid = vec![0.4, 0.6];
        cfg.lambda_grid = vec![1.0, 2.0];
        cfg.seeds = vec![0, 1];
        assert_eq!(cfg.cells().unwrap().len(), 8);
    }

    #[test]
    fn inapplicable_grids() {
        let mut cfg = ExperimentConfig::new(fixture(), LossSpec::nll());
        cfg.preset = Some("adult".into());
        cfg.seeds = vec![3, 4];
        let cells = cfg.cells().unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].run_id(), "nll_s3");
        cfg.rho_grid = vec![0.5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn preset_fills_grids() {
        let mut cfg = ExperimentConfig::new(fixture(), LossSpec::new(LossKind::MmceW).grouped(0.5));
        cfg.preset = Some("adult".into());
        assert_eq!(cfg.cells().unwrap().len(), 9 * 12);
    }

    #[test]
    fn json_roundtrip_and_rejections() {
        let text = r#"{
            "dataset": {"source": "fixture", "name": "adult"},
            "loss": {"kind": "mmce", "groupwise": true, "rho": 0.6, "lambda": 2.0},
            "epochs": 3
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.cells().unwrap()[0].run_id(), "mmce_g_rho0.6_lam2_s0");
        let back = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(
            ExperimentConfig::from_json(&text.replace("\"epochs\": 3", "\"epochs\": 0")).is_err()
        );
        assert!(ExperimentConfig::from_json(&text.replace("\"epochs\"", "\"epoch\"")).is_err());
        let err = ExperimentConfig::from_json("{").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
