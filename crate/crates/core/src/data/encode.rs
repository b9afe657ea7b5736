use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RawDataset;
use crate::diffcore::Tensor2;
use crate::error::{Error, Result};
use crate::losses::GroupBatch;

/// How categorical values become indicator columns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum EncoderMode {
    /// One column per distinct `(feature, category)` pair, sorted.
    #[default]
    Exact,
    /// FNV-1a hash of `column=value` modulo `dim`; colliding indicators merge.
    Hashed { dim: usize },
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Everything learned from a fitting dataset and reused at transform time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub mode: EncoderMode,
    pub feature_columns: Vec<String>,
    /// `(column, category)` pairs; empty in hashed mode.
    pub categories: Vec<(String, String)>,
    /// Sorted distinct label values; position is the class index.
    pub labels: Vec<String>,
    pub group_values: Vec<String>,
    pub group_positive: String,
}

/// Where an encoded dataset came from, written as a JSON sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub encoder: EncoderMode,
    pub seed: Option<u64>,
    pub vocabulary_sha256: String,
    pub rows: usize,
    pub dim: usize,
    pub classes: usize,
}

/// Multi-hot features with integer labels and binary groups.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDataset {
    pub features: Tensor2,
    pub labels: Vec<usize>,
    pub groups: Vec<u8>,
    pub classes: usize,
    pub provenance: Provenance,
}

impl Vocabulary {
    pub fn fit(raw: &RawDataset, mode: EncoderMode) -> Result<Self> {
        if let EncoderMode::Hashed { dim: 0 } = mode {
            return Err(Error::Config(
                "hashed encoder needs a positive dimension".into(),
            ));
        }
        let feature_cols: Vec<usize> = raw.feature_columns().collect();
        let categories = match mode {
            EncoderMode::Exact => {
                let set: BTreeSet<(String, String)> = raw
                    .rows
                    .iter()
                    .flat_map(|row| {
                        feature_cols
                            .iter()
                            .map(move |&c| (raw.columns[c].clone(), row[c].clone()))
                    })
                    .collect();
                set.into_iter().collect()
            }
            EncoderMode::Hashed { .. } => Vec::new(),
        };
        let distinct = |col: usize| -> Vec<String> {
            raw.rows
                .iter()
                .map(|r| r[col].clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        };
        let labels = distinct(raw.label_col);
        if labels.len() < 2 {
            return Err(Error::Data(format!(
                "label column has {} distinct value(s); need at least 2",
                labels.len()
            )));
        }
        Ok(Self {
            mode,
            feature_columns: feature_cols
                .iter()
                .map(|&c| raw.columns[c].clone())
                .collect(),
            categories,
            labels,
            group_values: distinct(raw.group_col),
            group_positive: raw.group_positive.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        match self.mode {
            EncoderMode::Exact => self.categories.len(),
            EncoderMode::Hashed { dim } => dim,
        }
    }

    pub fn checksum(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("vocabulary serializes");
        Sha256::digest(bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Encodes `raw` with this fixed vocabulary. Unseen feature categories
    /// leave their row without an indicator; unseen labels or group values
    /// are errors.
    pub fn transform(&self, raw: &RawDataset, source: &str) -> Result<EncodedDataset> {
        let columns: Vec<usize> = self
            .feature_columns
            .iter()
            .map(|name| {
                raw.columns
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::Data(format!("feature column `{name}` missing")))
            })
            .collect::<Result<_>>()?;
        let dim = self.dim();
        let mut features = Tensor2::zeros(raw.len(), dim);
        let mut labels = Vec::with_capacity(raw.len());
        let mut groups = Vec::with_capacity(raw.len());
        for (i, row) in raw.rows.iter().enumerate() {
            for (&c, name) in columns.iter().zip(&self.feature_columns) {
                let slot = match self.mode {
                    EncoderMode::Exact => self
                        .categories
                        .binary_search_by(|(col, cat)| {
                            (col.as_str(), cat.as_str()).cmp(&(name.as_str(), row[c].as_str()))
                        })
                        .ok(),
                    EncoderMode::Hashed { dim } => {
                        Some((fnv1a(format!("{name}={}", row[c]).as_bytes()) % dim as u64) as usize)
                    }
                };
                if let Some(j) = slot {
                    features.set(i, j, 1.0);
                }
            }
            let label = &row[raw.label_col];
            let y = self
                .labels
                .binary_search(label)
                .map_err(|_| Error::Data(format!("row {}: unseen label value `{label}`", i + 1)))?;
            let group = &row[raw.group_col];
            if self.group_values.binary_search(group).is_err() {
                return Err(Error::Data(format!(
                    "row {}: unseen group value `{group}`",
                    i + 1
                )));
            }
            labels.push(y);
            groups.push(u8::from(*group == self.group_positive));
        }
        Ok(EncodedDataset {
            features,
            labels,
            groups,
            classes: self.labels.len(),
            provenance: Provenance {
                source: source.to_string(),
                encoder: self.mode,
                seed: None,
                vocabulary_sha256: self.checksum(),
                rows: raw.len(),
                dim,
                classes: self.labels.len(),
            },
        })
    }
}

/// Fits a vocabulary on `raw` and encodes it.
pub fn encode_multihot(
    raw: &RawDataset,
    mode: EncoderMode,
) -> Result<(EncodedDataset, Vocabulary)> {
    let vocab = Vocabulary::fit(raw, mode)?;
    let enc = vocab.transform(raw, "csv")?;
    Ok((enc, vocab))
}

pub fn write_provenance(path: &Path, provenance: &Provenance) -> Result<()> {
    let text = serde_json::to_string_pretty(provenance).map_err(|source| Error::Json {
        context: "provenance".into(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            groups: indices.iter().map(|&i| self.groups[i]).collect(),
            classes: self.classes,
            provenance: Provenance {
                rows: indices.len(),
                ..self.provenance.clone()
            },
        }
    }

    pub fn to_batch(&self) -> Result<GroupBatch> {
        GroupBatch::new(
            self.features.clone(),
            self.labels.clone(),
            self.groups.clone(),
        )
    }
}
