use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::pareto::{pareto_front, points_from_logs, ParetoPoint};
use super::summary::{best_metric_summary, Objective, SummaryRow};
use super::sweep::CellFailure;
use super::train::RunLog;
use crate::error::{Error, Result};

/// Run-log CSV header.
pub const RUN_LOG_COLUMNS: [&str; 10] = [
    "epoch",
    "loss",
    "acc",
    "ece",
    "pe_stoch",
    "pe_det",
    "ece_ts",
    "pe_stoch_ts",
    "t0",
    "t1",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOptions {
    pub accuracy_slack: f64,
    pub svg: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            accuracy_slack: super::pareto::DEFAULT_ACCURACY_SLACK,
            svg: false,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_run_log(log: &RunLog, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(RUN_LOG_COLUMNS).map_err(err)?;
    for r in &log.rows {
        w.write_record([
            r.epoch.to_string(),
            r.loss.to_string(),
            r.acc.to_string(),
            r.ece.to_string(),
            opt(r.pe_stoch),
            opt(r.pe_det),
            opt(r.ece_ts),
            opt(r.pe_stoch_ts),
            opt(r.t0),
            opt(r.t1),
        ])
        .map_err(err)?;
    }
    finish(w, path)
}

fn write_serialized<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    }
    finish(w, path)
}

pub fn write_pareto(points: &[ParetoPoint], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(["pe", "ece", "acc", "run_id", "epoch"])
        .map_err(err)?;
    for p in points {
        w.write_record([
            p.pe.to_string(),
            p.ece.to_string(),
            p.acc.to_string(),
            p.run_id.clone(),
            p.epoch.to_string(),
        ])
        .map_err(err)?;
    }
    finish(w, path)
}

pub fn read_pareto(path: &Path) -> Result<Vec<ParetoPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    r.deserialize()
        .collect::<std::result::Result<Vec<ParetoPoint>, _>>()
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
}

/// Scatter of every front, one colour per series.
pub fn pareto_svg(fronts: &[(String, Vec<ParetoPoint>)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 48.0;
    const COLOURS: [&str; 8] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
    ];
    let all = fronts.iter().flat_map(|(_, f)| f);
    let max_pe = all.clone().map(|p| p.pe).fold(0.0, f64::max).max(1e-9);
    let max_ece = all.map(|p| p.ece).fold(0.0, f64::max).max(1e-9);
    let x = |pe: f64| PAD + pe / max_pe * (W - 2.0 * PAD);
    let y = |ece: f64| H - PAD - ece / max_ece * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{0}" stroke="black"/>"#,
        H - PAD
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">stochastic PE (max {max_pe:.3})</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">ECE (max {max_ece:.3})</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, (name, front)) in fronts.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let path: Vec<String> = front
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.pe), y(p.ece)))
            .collect();
        if path.len() > 1 {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{colour}"/>"#,
                path.join(" ")
            );
        }
        for p in front {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#,
                x(p.pe),
                y(p.ece)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{colour}">{name}</text>"#,
            W - PAD - 90.0,
            PAD + 14.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes per-run CSVs, summaries, Pareto fronts (with `_ts` hybrids),
/// failures and optionally an SVG. Returns the written paths in order.
pub fn emit_reports(
    logs: &[RunLog],
    failures: &[CellFailure],
    out_dir: &Path,
    options: &ReportOptions,
) -> Result<Vec<PathBuf>> {
    let runs_dir = out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    let mut written = Vec::new();
    for log in logs {
        let path = runs_dir.join(format!("{}.csv", log.id.run_id));
        write_run_log(log, &path)?;
        written.push(path);
    }
    if !logs.is_empty() {
        let has_ts = logs
            .iter()
            .any(|l| l.rows.iter().any(|r| r.ece_ts.is_some()));
        for objective in [Objective::Fairness, Objective::Calibration] {
            let mut rows: Vec<SummaryRow> = best_metric_summary(logs, objective, false)?;
            if has_ts {
                rows.extend(best_metric_summary(logs, objective, true)?);
            }
            let path = out_dir.join(format!("summary_{}.csv", objective.as_str()));
            write_serialized(&rows, &path)?;
            written.push(path);
        }
        let mut by_technique: BTreeMap<&str, Vec<RunLog>> = BTreeMap::new();
        for log in logs {
            by_technique
                .entry(&log.id.technique)
                .or_default()
                .push(log.clone());
        }
        let mut fronts = Vec::new();
        for (technique, group) in &by_technique {
            let variants: &[bool] = if has_ts { &[false, true] } else { &[false] };
            for &ts in variants {
                let name = if ts {
                    format!("{technique}_ts")
                } else {
                    technique.to_string()
                };
                let front =
                    pareto_front(&points_from_logs(group, ts), options.accuracy_slack, None)?;
                let path = out_dir.join(format!("pareto_{name}.csv"));
                write_pareto(&front, &path)?;
                written.push(path);
                fronts.push((name, front));
            }
        }
        if options.svg {
            let path = out_dir.join("pareto.svg");
            std::fs::write(&path, pareto_svg(&fronts)).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    if !failures.is_empty() {
        let path = out_dir.join("failures.json");
        let text = serde_json::to_string_pretty(failures).map_err(|source| Error::Json {
            context: "failures".into(),
            source,
        })?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
