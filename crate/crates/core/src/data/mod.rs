//! Dataset ingestion, categorical encoding, 6:1:1 splitting and synthetic
//! generators with known conditionals.

mod encode;
mod split;
mod synthetic;

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use encode::{
    encode_multihot, fnv1a, write_provenance, EncodedDataset, EncoderMode, Provenance, Vocabulary,
};
pub use split::{split_6_1_1, SplitAssignment};
pub use synthetic::{
    benchmark_row, dataset_stats, fixture_spec, generate_synthetic, sample_synthetic, BenchmarkRow,
    DatasetStats, SyntheticDraw, SyntheticSpec, BENCHMARKS,
};

use crate::error::{Error, Result};

/// Categorical rows read from a headered CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDataset {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub label_col: usize,
    pub group_col: usize,
    /// Value of the group column mapped to `A = 1`.
    pub group_positive: String,
}

impl RawDataset {
    pub fn new(
        columns: Vec<String>,
        rows: Vec<Vec<String>>,
        label: &str,
        group: &str,
        group_positive: &str,
    ) -> Result<Self> {
        let find = |name: &str, role: &str| {
            columns.iter().position(|c| c == name).ok_or_else(|| {
                Error::Data(format!(
                    "{role} column `{name}` not found in header {columns:?}"
                ))
            })
        };
        let label_col = find(label, "label")?;
        let group_col = find(group, "group")?;
        if label_col == group_col {
            return Err(Error::Data(format!(
                "column `{label}` cannot be both label and group"
            )));
        }
        if rows.is_empty() {
            return Err(Error::Empty("dataset has a header but no rows".into()));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != columns.len()) {
            return Err(Error::Data(format!(
                "row {} has {} fields, header has {}",
                i + 1,
                rows[i].len(),
                columns.len()
            )));
        }
        Ok(Self {
            columns,
            rows,
            label_col,
            group_col,
            group_positive: group_positive.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Column indices other than label and group.
    pub fn feature_columns(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.columns.len()).filter(move |&c| c != self.label_col && c != self.group_col)
    }
}

/// Parses headered CSV (RFC-4180 quoting) from any reader.
pub fn parse_csv<R: Read>(
    reader: R,
    label: &str,
    group: &str,
    group_positive: &str,
) -> Result<RawDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let csv_err = |source| Error::Csv {
        path: "<input>".into(),
        source,
    };
    let columns: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    if columns.is_empty() || columns.iter().all(String::is_empty) {
        return Err(Error::Empty("CSV has no header".into()));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        rows.push(
            record
                .map_err(csv_err)?
                .iter()
                .map(str::to_string)
                .collect(),
        );
    }
    RawDataset::new(columns, rows, label, group, group_positive)
}

pub fn load_csv(path: &Path, label: &str, group: &str, group_positive: &str) -> Result<RawDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, label, group, group_positive).map_err(|e| match e {
        Error::Csv { source, .. } => Error::Csv {
            path: path.to_path_buf(),
            source,
        },
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_three_rows() {
        let text = "color,size,label,sex\nred,S,yes,M\nblue,M,no,F\nred,L,no,M\n";
        let raw = parse_csv(text.as_bytes(), "label", "sex", "M").unwrap();
        assert_eq!(raw.len(), 3);
        assert_eq!((raw.label_col, raw.group_col), (2, 3));
        assert_eq!(raw.feature_columns().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn missing_group_column_is_named() {
        let err = parse_csv("a,label\nx,1\n".as_bytes(), "label", "race", "w").unwrap_err();
        assert!(err.to_string().contains("race"), "{err}");
    }

    #[test]
    fn quoted_fields_keep_commas() {
        let text = "job,label,g\n\"Smith, J\",1,a\n\"say \"\"hi\"\"\",0,b\n";
        let raw = parse_csv(text.as_bytes(), "label", "g", "a").unwrap();
        assert_eq!(raw.rows[0][0], "Smith, J");
        assert_eq!(raw.rows[1][0], "say \"hi\"");
    }

    #[test]
    fn ragged_and_empty_files_fail() {
        assert!(parse_csv("a,label,g\nx,1\n".as_bytes(), "label", "g", "x").is_err());
        assert!(parse_csv("a,label,g\n".as_bytes(), "label", "g", "x").is_err());
        assert!(parse_csv("".as_bytes(), "label", "g", "x").is_err());
    }

    #[test]
    fn load_reports_path() {
        let err = load_csv(Path::new("/nonexistent/x.csv"), "l", "g", "1").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.csv"));
    }
}
