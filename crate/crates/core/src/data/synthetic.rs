use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::encode::{EncodedDataset, EncoderMode, Provenance};
use crate::diffcore::Tensor2;
use crate::error::{Error, Result};
use crate::metrics::{base_rates, BaseRates};

const SIMPLEX_TOL: f64 = 1e-9;

/// A discrete generative model over `(cell, A, Y)`.
///
/// `A ~ Bernoulli(p_group1)` and the cell are drawn independently; `Y` is then
/// drawn from `conditionals[a][cell]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub cells: usize,
    pub p_group1: f64,
    /// Cell probabilities; uniform when absent.
    #[serde(default)]
    pub cell_weights: Option<Vec<f64>>,
    /// `conditionals[a][cell][k] = Pr[Y = k | X = cell, A = a]`.
    pub conditionals: [Vec<Vec<f64>>; 2],
    pub samples: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn classes(&self) -> usize {
        self.conditionals[0].first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells == 0 {
            return Err(Error::Config(
                "synthetic spec needs at least one cell".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_group1) {
            return Err(Error::Config(format!(
                "Pr[A=1] = {} outside [0, 1]",
                self.p_group1
            )));
        }
        let k = self.classes();
        if k < 2 {
            return Err(Error::Config(
                "synthetic spec needs at least 2 classes".into(),
            ));
        }
        for (a, table) in self.conditionals.iter().enumerate() {
            if table.len() != self.cells {
                return Err(Error::Config(format!(
                    "group {a}: {} conditionals for {} cells",
                    table.len(),
                    self.cells
                )));
            }
            for (c, row) in table.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.len() != k
                    || row.iter().any(|p| !(0.0..=1.0).contains(p))
                    || (sum - 1.0).abs() > SIMPLEX_TOL
                {
                    return Err(Error::Config(format!(
                        "Pr[Y | cell {c}, A = {a}] is not a distribution over {k} classes"
                    )));
                }
            }
        }
        if let Some(w) = &self.cell_weights {
            if w.len() != self.cells
                || w.iter().any(|&v| !(v >= 0.0 && v.is_finite()))
                || w.iter().sum::<f64>() <= 0.0
            {
                return Err(Error::Config(
                    "cell weights must be non-negative with positive sum".into(),
                ));
            }
        }
        Ok(())
    }

    /// Normalized cell probabilities.
    pub fn cell_probs(&self) -> Vec<f64> {
        match &self.cell_weights {
            Some(w) => {
                let total: f64 = w.iter().sum();
                w.iter().map(|v| v / total).collect()
            }
            None => vec![1.0 / self.cells as f64; self.cells],
        }
    }

    /// Population `Pr[Y = k | A = a]`.
    pub fn class_rates(&self, group: u8) -> Vec<f64> {
        let mut out = vec![0.0; self.classes()];
        for (w, row) in self
            .cell_probs()
            .iter()
            .zip(&self.conditionals[group as usize])
        {
            for (o, p) in out.iter_mut().zip(row) {
                *o += w * p;
            }
        }
        out
    }

    /// Feature width of the generated data: one-hot cell plus one-hot group.
    pub fn dim(&self) -> usize {
        self.cells + 2
    }
}

/// Raw draws from a [`SyntheticSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDraw {
    pub cells: Vec<usize>,
    pub groups: Vec<u8>,
    pub labels: Vec<usize>,
}

pub fn sample_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDraw> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cell_dist = WeightedIndex::new(spec.cell_probs())
        .map_err(|e| Error::Config(format!("cell weights: {e}")))?;
    let label_dists = spec
        .conditionals
        .iter()
        .map(|table| {
            table
                .iter()
                .map(|row| {
                    WeightedIndex::new(row).map_err(|e| Error::Config(format!("conditional: {e}")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut draw = SyntheticDraw {
        cells: Vec::with_capacity(spec.samples),
        groups: Vec::with_capacity(spec.samples),
        labels: Vec::with_capacity(spec.samples),
    };
    for _ in 0..spec.samples {
        let a = u8::from(rng.gen_bool(spec.p_group1));
        let c = cell_dist.sample(&mut rng);
        let y = label_dists[a as usize][c].sample(&mut rng);
        draw.cells.push(c);
        draw.groups.push(a);
        draw.labels.push(y);
    }
    Ok(draw)
}

/// Samples a dataset from `spec`; the spec is returned as ground truth.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(EncodedDataset, SyntheticSpec)> {
    let draw = sample_synthetic(spec)?;
    let dim = spec.dim();
    let mut features = Tensor2::zeros(spec.samples, dim);
    for (i, (&c, &a)) in draw.cells.iter().zip(&draw.groups).enumerate() {
        features.set(i, c, 1.0);
        features.set(i, spec.cells + a as usize, 1.0);
    }
    let spec_json = serde_json::to_vec(spec).expect("spec serializes");
    let enc = EncodedDataset {
        features,
        labels: draw.labels,
        groups: draw.groups,
        classes: spec.classes(),
        provenance: Provenance {
            source: "synthetic".into(),
            encoder: EncoderMode::Exact,
            seed: Some(spec.seed),
            vocabulary_sha256: Sha256::digest(spec_json)
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect(),
            rows: spec.samples,
            dim,
            classes: spec.classes(),
        },
    };
    Ok((enc, spec.clone()))
}

/// Published summary statistics of one benchmark dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub name: &'static str,
    pub size: usize,
    pub d: usize,
    pub p_group1: f64,
    /// `Pr[Y = 1 | A = 0]` and `Pr[Y = 1 | A = 1]`.
    pub p_y1: [f64; 2],
}

pub const BENCHMARKS: [BenchmarkRow; 7] = [
    BenchmarkRow {
        name: "adult",
        size: 2020,
        d: 97,
        p_group1: 0.74,
        p_y1: [0.25, 0.59],
    },
    BenchmarkRow {
        name: "arrhythmia",
        size: 452,
        d: 279,
        p_group1: 0.55,
        p_y1: [0.41, 0.65],
    },
    BenchmarkRow {
        name: "communities",
        size: 1994,
        d: 122,
        p_group1: 0.71,
        p_y1: [0.36, 0.84],
    },
    BenchmarkRow {
        name: "compas",
        size: 5278,
        d: 11,
        p_group1: 0.6,
        p_y1: [0.61, 0.49],
    },
    BenchmarkRow {
        name: "drug",
        size: 1885,
        d: 10,
        p_group1: 0.91,
        p_y1: [0.83, 0.79],
    },
    BenchmarkRow {
        name: "german",
        size: 1000,
        d: 20,
        p_group1: 0.85,
        p_y1: [0.60, 0.72],
    },
    BenchmarkRow {
        name: "lawschool",
        size: 1823,
        d: 17,
        p_group1: 0.54,
        p_y1: [0.51, 0.55],
    },
];

pub fn benchmark_row(name: &str) -> Option<&'static BenchmarkRow> {
    BENCHMARKS
        .iter()
        .find(|r| r.name.eq_ignore_ascii_case(name))
}

/// A binary synthetic stand-in for a benchmark dataset with its size,
/// feature width and group/label rates.
///
/// Uses `d - 2` uniform cells whose conditionals spread symmetrically around
/// each group's rate, so the population marginals equal the table values.
pub fn fixture_spec(row: &BenchmarkRow, seed: u64) -> SyntheticSpec {
    let cells = row.d.saturating_sub(2).max(1);
    let conditionals = row.p_y1.map(|rate| {
        let spread = 0.8 * rate.min(1.0 - rate);
        (0..cells)
            .map(|c| {
                let t = if cells == 1 {
                    0.0
                } else {
                    2.0 * c as f64 / (cells - 1) as f64 - 1.0
                };
                let q = rate + spread * t;
                vec![1.0 - q, q]
            })
            .collect()
    });
    SyntheticSpec {
        cells,
        p_group1: row.p_group1,
        cell_weights: None,
        conditionals,
        samples: row.size,
        seed,
    }
}

/// Size, width and group/label rates in the benchmark-table layout.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    pub size: usize,
    pub d: usize,
    pub p_group1: f64,
    /// `Pr[Y = 1 | A = a]`; `None` when group `a` is absent.
    pub p_y1: [Option<f64>; 2],
    pub base_rates: BaseRates,
    pub single_group: bool,
}

impl DatasetStats {
    /// One row: `name | Size | d | Pr[A=1] | Pr[Y=1|A=0] | Pr[Y=1|A=1]`.
    pub fn table_row(&self, name: &str) -> String {
        let rate = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
        format!(
            "{name} | {} | {} | {:.2} | {} | {}",
            self.size,
            self.d,
            self.p_group1,
            rate(self.p_y1[0]),
            rate(self.p_y1[1])
        )
    }
}

pub fn dataset_stats(enc: &EncodedDataset) -> Result<DatasetStats> {
    let rates = base_rates(&enc.labels, &enc.groups, enc.classes)?;
    Ok(DatasetStats {
        size: enc.len(),
        d: enc.dim(),
        p_group1: rates.p_group1,
        p_y1: [rates.rate(0, 1), rates.rate(1, 1)],
        single_group: !rates.is_defined(),
        base_rates: rates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cell(q: [f64; 2], p1: f64, n: usize) -> SyntheticSpec {
        SyntheticSpec {
            cells: 2,
            p_group1: p1,
            cell_weights: None,
            conditionals: [
                vec![vec![1.0 - q[0], q[0]], vec![1.0 - q[0], q[0]]],
                vec![vec![1.0 - q[1], q[1]], vec![1.0 - q[1], q[1]]],
            ],
            samples: n,
            seed: 5,
        }
    }

    #[test]
    fn certain_labels() {
        let (enc, _) = generate_synthetic(&two_cell([1.0, 1.0], 0.5, 500)).unwrap();
        assert!(enc.labels.iter().all(|&y| y == 1));
        assert_eq!(enc.dim(), 4);
        for row in enc.features.iter_rows() {
            assert_eq!(row.iter().sum::<f64>(), 2.0);
        }
    }

    #[test]
    fn group_rate_within_three_sigma() {
        let (enc, _) = generate_synthetic(&two_cell([0.3, 0.6], 0.74, 100_000)).unwrap();
        let s = dataset_stats(&enc).unwrap();
        let sigma = (0.74f64 * 0.26 / 1e5).sqrt();
        assert!((s.p_group1 - 0.74).abs() < 3.0 * sigma, "{}", s.p_group1);
    }

    #[test]
    fn seeded_and_validated() {
        let spec = two_cell([0.3, 0.6], 0.5, 100);
        assert_eq!(
            generate_synthetic(&spec).unwrap().0,
            generate_synthetic(&spec).unwrap().0
        );
        let mut bad = spec.clone();
        bad.cells = 0;
        assert!(generate_synthetic(&bad).is_err());
        let mut bad = spec;
        bad.conditionals[0][0] = vec![0.5, 0.6];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fixtures_hit_table_marginals() {
        for row in &BENCHMARKS {
            let spec = fixture_spec(row, 0);
            spec.validate().unwrap();
            assert_eq!(spec.dim(), row.d);
            assert_eq!(spec.samples, row.size);
            for a in 0..2u8 {
                assert!((spec.class_rates(a)[1] - row.p_y1[a as usize]).abs() < 1e-12);
            }
        }
        assert_eq!(benchmark_row("Adult").unwrap().size, 2020);
        assert!(benchmark_row("mnist").is_none());
    }

    #[test]
    fn stats_row_format() {
        let (enc, _) = generate_synthetic(&fixture_spec(&BENCHMARKS[0], 1)).unwrap();
        let s = dataset_stats(&enc).unwrap();
        let line = s.table_row("adult");
        assert!(line.starts_with("adult | 2020 | 97 | "), "{line}");
        let single = enc.select(
            &(0..enc.len())
                .filter(|&i| enc.groups[i] == 1)
                .collect::<Vec<_>>(),
        );
        let s = dataset_stats(&single).unwrap();
        assert!(s.single_group);
        assert!(s.table_row("x").contains("n/a"));
    }
}
