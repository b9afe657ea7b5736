use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use faircal::data::{
    benchmark_row, dataset_stats, encode_multihot, fixture_spec, generate_synthetic, load_csv,
    write_provenance, EncodedDataset, EncoderMode, SyntheticSpec,
};
use faircal::diffcore::Tensor2;
use faircal::harness::{
    emit_reports, pareto_front, read_pareto, run_experiment, sweep, verify_with_temperature,
    write_pareto, ExperimentConfig, ReportOptions, DEFAULT_ACCURACY_SLACK,
};
use faircal::postproc::{apply_dual_temperature, fit_dual_temperature, TemperaturePair, TsConfig};
use faircal::{Error, Result};

/// Train calibration-aware classifiers and measure fairness and calibration together.
#[derive(Parser)]
#[command(name = "faircal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single grid cell and write its run log and reports.
    Train(RunArgs),
    /// Run every (rho, lambda, seed) cell of a configuration.
    Sweep(RunArgs),
    /// Fit or apply per-group temperatures on saved logits.
    #[command(subcommand)]
    TempScale(TempScale),
    /// Extract the (PE, ECE) Pareto front from a points CSV.
    Pareto {
        /// CSV with columns pe,ece,acc,run_id,epoch.
        #[arg(long)]
        points: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ACCURACY_SLACK)]
        slack: f64,
        /// Reference accuracy; defaults to the best in the file.
        #[arg(long)]
        best_accuracy: Option<f64>,
        /// Output CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo check that the oracle of a synthetic spec is calibrated and fair.
    Verify {
        #[command(flatten)]
        source: SpecSource,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Sharpen (< 1) or flatten (> 1) the oracle probabilities.
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
    },
    /// Print size, width and group/label rates of a dataset.
    Stats {
        #[command(flatten)]
        source: StatsSource,
        /// Write the encoding provenance sidecar here.
        #[arg(long)]
        provenance: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also draw the Pareto fronts as SVG.
    #[arg(long)]
    svg: bool,
    #[arg(long, default_value_t = DEFAULT_ACCURACY_SLACK)]
    slack: f64,
}

#[derive(Subcommand)]
enum TempScale {
    /// Fit temperatures on validation logits (CSV: label,group,z0,z1,...).
    Fit {
        #[arg(long)]
        logits: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = TsConfig::default().lr)]
        lr: f64,
        #[arg(long, default_value_t = TsConfig::default().max_epochs)]
        max_epochs: usize,
        #[arg(long, default_value_t = TsConfig::default().bins)]
        bins: usize,
    },
    /// Apply fitted temperatures and write probabilities.
    Apply {
        #[arg(long)]
        logits: PathBuf,
        /// JSON with fields t0 and t1.
        #[arg(long)]
        temps: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct SpecSource {
    /// Synthetic spec (JSON).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Built-in fixture name, e.g. adult.
    #[arg(long)]
    fixture: Option<String>,
}

#[derive(Args)]
struct StatsSource {
    #[arg(long, conflicts_with = "fixture", requires_all = ["label", "group", "positive"])]
    csv: Option<PathBuf>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    group: Option<String>,
    /// Group value mapped to A = 1.
    #[arg(long)]
    positive: Option<String>,
    /// Use feature hashing into this many columns.
    #[arg(long)]
    hashed_dim: Option<usize>,
    #[arg(long, required_unless_present = "csv")]
    fixture: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn fixture(name: &str, seed: u64) -> Result<SyntheticSpec> {
    let row =
        benchmark_row(name).ok_or_else(|| Error::Config(format!("unknown fixture `{name}`")))?;
    Ok(fixture_spec(row, seed))
}

/// Reads `label,group,z0,...` rows.
fn read_logits(path: &Path) -> Result<(Tensor2, Vec<usize>, Vec<u8>)> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let bad =
            |what: &str| Error::Data(format!("{}: row {}: bad {what}", path.display(), i + 1));
        if record.len() < 4 {
            return Err(bad("width (need label, group and at least two logits)"));
        }
        labels.push(record[0].trim().parse().map_err(|_| bad("label"))?);
        groups.push(record[1].trim().parse().map_err(|_| bad("group"))?);
        rows.push(
            record
                .iter()
                .skip(2)
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("logit"))?,
        );
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!("{}: no logit rows", path.display())));
    }
    let logits = Tensor2::from_rows(&rows)
        .map_err(|_| Error::Data(format!("{}: ragged logit rows", path.display())))?;
    Ok((logits, labels, groups))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            let log = run_experiment(&cfg)?;
            let opts = ReportOptions {
                accuracy_slack: args.slack,
                svg: args.svg,
            };
            for path in emit_reports(std::slice::from_ref(&log), &[], &args.out, &opts)? {
                println!("{}", path.display());
            }
        }
        Command::Sweep(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            let result = sweep(&cfg)?;
            let opts = ReportOptions {
                accuracy_slack: args.slack,
                svg: args.svg,
            };
            for path in emit_reports(&result.logs, &result.failures, &args.out, &opts)? {
                println!("{}", path.display());
            }
            for f in &result.failures {
                eprintln!("cell {} failed: {}", f.id.run_id, f.error);
            }
        }
        Command::TempScale(TempScale::Fit {
            logits,
            out,
            lr,
            max_epochs,
            bins,
        }) => {
            let (z, y, a) = read_logits(&logits)?;
            let config = TsConfig {
                lr,
                max_epochs,
                bins,
            };
            let (pair, trace) = fit_dual_temperature(&z, &y, &a, &config)?;
            for g in &trace.missing_groups {
                eprintln!("group {g} absent from validation data; its temperature stays 1");
            }
            write_json(&out, &pair)?;
            println!(
                "t0={} t1={} epoch={} stop={:?}",
                pair.t0, pair.t1, trace.chosen_epoch, trace.stop
            );
        }
        Command::TempScale(TempScale::Apply { logits, temps, out }) => {
            let (z, y, a) = read_logits(&logits)?;
            let pair: TemperaturePair = read_json(&temps)?;
            pair.validate().map_err(|e| Error::Config(e.to_string()))?;
            let preds = apply_dual_temperature(&z, &y, &a, &pair)?;
            let mut w = csv::Writer::from_path(&out).map_err(|source| Error::Csv {
                path: out.clone(),
                source,
            })?;
            let k = preds.classes();
            let header: Vec<String> = ["label".to_string(), "group".to_string()]
                .into_iter()
                .chain((0..k).map(|c| format!("p{c}")))
                .collect();
            let csv_err = |source| Error::Csv {
                path: out.clone(),
                source,
            };
            w.write_record(&header).map_err(csv_err)?;
            for ((row, y), a) in preds
                .probs()
                .iter_rows()
                .zip(preds.labels())
                .zip(preds.groups())
            {
                let record: Vec<String> = [y.to_string(), a.to_string()]
                    .into_iter()
                    .chain(row.iter().map(f64::to_string))
                    .collect();
                w.write_record(&record).map_err(csv_err)?;
            }
            w.flush().map_err(|e| Error::io(&out, e))?;
        }
        Command::Pareto {
            points,
            slack,
            best_accuracy,
            out,
        } => {
            let pts = read_pareto(&points)?;
            let front = pareto_front(&pts, slack, best_accuracy)?;
            match out {
                Some(path) => write_pareto(&front, &path)?,
                None => {
                    println!("pe,ece,acc,run_id,epoch");
                    for p in front {
                        println!("{},{},{},{},{}", p.pe, p.ece, p.acc, p.run_id, p.epoch);
                    }
                }
            }
        }
        Command::Verify {
            source,
            samples,
            temperature,
        } => {
            let spec = match (source.spec, source.fixture) {
                (Some(path), _) => read_json::<SyntheticSpec>(&path)?,
                (None, Some(name)) => fixture(&name, 0)?,
                (None, None) => unreachable!("clap requires one source"),
            };
            spec.validate()?;
            let report = verify_with_temperature(&spec, samples, temperature)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            println!("{}", if report.pass { "PASS" } else { "FAIL" });
        }
        Command::Stats { source, provenance } => {
            let (enc, name): (EncodedDataset, String) = match (&source.csv, &source.fixture) {
                (Some(path), _) => {
                    let raw = load_csv(
                        path,
                        source.label.as_deref().unwrap_or_default(),
                        source.group.as_deref().unwrap_or_default(),
                        source.positive.as_deref().unwrap_or_default(),
                    )?;
                    let mode = source
                        .hashed_dim
                        .map_or(EncoderMode::Exact, |dim| EncoderMode::Hashed { dim });
                    let (mut enc, _) = encode_multihot(&raw, mode)?;
                    enc.provenance.source = path.display().to_string();
                    let stem = path
                        .file_stem()
                        .map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
                    (enc, stem)
                }
                (None, Some(name)) => (
                    generate_synthetic(&fixture(name, source.seed)?)?.0,
                    name.clone(),
                ),
                (None, None) => unreachable!("clap requires one source"),
            };
            let stats = dataset_stats(&enc)?;
            println!("Dataset | Size | d | Pr[A=1] | Pr[Y=1|A=0] | Pr[Y=1|A=1]");
            println!("{}", stats.table_row(&name));
            if stats.single_group {
                eprintln!("warning: only one group present");
            }
            if let Some(path) = provenance {
                write_provenance(&path, &enc.provenance)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
