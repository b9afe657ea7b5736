//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per criterion
//! and exits non-zero if a required criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{
    grouped_mmce_brute, mmce_brute, mmce_w_brute, pareto_brute, random_batch, random_cloud,
    relative_gradient_error, Batch, GRADIENT_TOLERANCE,
};
use faircal::data::{dataset_stats, fixture_spec, generate_synthetic, SyntheticSpec, BENCHMARKS};
use faircal::diffcore::{argmax_row, Tape, Tensor2, Var};
use faircal::harness::{
    pareto_front, sweep, verify_lemmas, verify_with_temperature, ExperimentConfig, RunLog,
    DEFAULT_ACCURACY_SLACK,
};
use faircal::losses::{
    base_loss, groupwise_linear, groupwise_pairwise, mmce, mmce_w, LossKind, LossSpec,
    PairwiseBase, DEFAULT_KERNEL_GAMMA,
};
use faircal::metrics::{pe, BaseRates, PeMode, PredictionSet};
use faircal::postproc::{apply_dual_temperature, fit_dual_temperature, TemperaturePair, TsConfig};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn eval(batch: &Batch, f: impl FnOnce(&mut Tape, Var) -> faircal::Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let z = tape.leaf(batch.logits.clone());
    let out = f(&mut tape, z).unwrap();
    tape.value(out).item()
}

fn doctor_nurse_pe() -> Outcome {
    let rates = BaseRates {
        classes: 2,
        group_counts: [1, 1],
        p_group1: 0.5,
        rates: [Some(vec![0.2, 0.8]), Some(vec![0.7, 0.3])],
    };
    let probs = Tensor2::from_rows(&[vec![0.15, 0.85], vec![0.8, 0.2]]).unwrap();
    let preds = PredictionSet::new(probs, vec![0, 0], vec![0, 1]).unwrap();
    let value = pe(&preds, &rates, PeMode::Stochastic)
        .unwrap()
        .value
        .unwrap();
    Outcome::new(
        (value - 0.396).abs() < 5e-4,
        format!("PE = {value:.4}, expected 0.396"),
    )
}

fn finite_differences() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for kind in LossKind::ALL {
        for grouped in [false, true] {
            for classes in [2, 3] {
                for seed in 0..4 {
                    worst = worst.max(relative_gradient_error(kind, grouped, classes, seed));
                    cases += 1;
                }
            }
        }
    }
    Outcome::new(
        worst < GRADIENT_TOLERANCE,
        format!("{cases} cases, worst relative error {worst:.2e}"),
    )
}

fn collapse() -> Outcome {
    let mut rng = common::rng(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (n, k) = (rng.gen_range(2..48), rng.gen_range(2..5));
        let b = random_batch(&mut rng, n, k, 3.0);
        let rho = b.group_count(1) as f64 / n as f64;
        for kind in [LossKind::Nll, LossKind::Ls, LossKind::Fl, LossKind::Flsd] {
            let spec = LossSpec::new(kind);
            let plain = eval(&b, |t, z| base_loss(t, &spec, z, &b.labels));
            let grouped = eval(&b, |t, z| {
                groupwise_linear(t, &spec, z, &b.labels, &b.groups, rho)
            });
            worst = worst.max((plain - grouped).abs() / plain.abs().max(1.0));
        }
        let g = DEFAULT_KERNEL_GAMMA;
        let plain = [
            (
                PairwiseBase::Mmce,
                eval(&b, |t, z| mmce(t, z, &b.labels, g)),
            ),
            (
                PairwiseBase::MmceW,
                eval(&b, |t, z| mmce_w(t, z, &b.labels, g)),
            ),
        ];
        for (base, value) in plain {
            let grouped = eval(&b, |t, z| {
                groupwise_pairwise(t, base, z, &b.labels, &b.groups, rho, g)
            });
            worst = worst.max((value - grouped).abs());
        }
    }
    Outcome::new(
        worst <= 1e-12,
        format!("100 batches, worst gap {worst:.1e}"),
    )
}

fn brute_force_mmce() -> Outcome {
    let mut rng = common::rng(8);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (n, k) = (rng.gen_range(1..=64), rng.gen_range(2..5));
        let b = random_batch(&mut rng, n, k, 4.0);
        let p = b.probs();
        let gamma = rng.gen_range(0.05..1.0);
        let rho = rng.gen_range(0.0..=1.0);
        worst = worst
            .max(
                (eval(&b, |t, z| mmce(t, z, &b.labels, gamma)) - mmce_brute(&p, &b.labels, gamma))
                    .abs(),
            )
            .max(
                (eval(&b, |t, z| mmce_w(t, z, &b.labels, gamma))
                    - mmce_w_brute(&p, &b.labels, gamma))
                .abs(),
            )
            .max(
                (eval(&b, |t, z| {
                    groupwise_pairwise(t, PairwiseBase::Mmce, z, &b.labels, &b.groups, rho, gamma)
                }) - grouped_mmce_brute(&p, &b.labels, &b.groups, rho, gamma))
                .abs(),
            );
    }
    Outcome::new(
        worst <= 1e-12,
        format!("100 batches, n <= 64, worst gap {worst:.1e}"),
    )
}

fn lemma_spec() -> SyntheticSpec {
    let row = |q: f64| vec![1.0 - q, q];
    SyntheticSpec {
        cells: 4,
        p_group1: 0.6,
        cell_weights: Some(vec![0.1, 0.2, 0.3, 0.4]),
        conditionals: [
            vec![row(0.05), row(0.15), row(0.2), row(0.3)],
            vec![row(0.4), row(0.6), row(0.75), row(0.8)],
        ],
        samples: 0,
        seed: 11,
    }
}

fn lemmas() -> Outcome {
    let spec = lemma_spec();
    let oracle = verify_lemmas(&spec, 100_000).unwrap();
    let sharpened = verify_with_temperature(&spec, 100_000, 0.5).unwrap();
    Outcome::new(
        oracle.pass && !sharpened.pass,
        format!(
            "oracle ECE {:.4} (3 sigma {:.4}), PE {:.4} (3 sigma {:.4}); T=0.5 control rejected: {}",
            oracle.ece.value,
            3.0 * oracle.ece.sigma,
            oracle.pe_stochastic.value,
            3.0 * oracle.pe_stochastic.sigma,
            !sharpened.pass
        ),
    )
}

/// Binary logits `scale * logit(p)` with exactly `round(p * per_level)`
/// class-0 labels per level and group.
fn ts_fixture(scale: f64) -> (Tensor2, Vec<usize>, Vec<u8>) {
    let (mut rows, mut labels, mut groups) = (Vec::new(), Vec::new(), Vec::new());
    for a in 0..2u8 {
        for p in [0.65, 0.75, 0.85, 0.95] {
            let positives = (p * 100.0f64).round() as usize;
            for i in 0..100 {
                rows.push(vec![scale * (p / (1.0 - p)).ln(), 0.0]);
                labels.push(usize::from(i >= positives));
                groups.push(a);
            }
        }
    }
    (Tensor2::from_rows(&rows).unwrap(), labels, groups)
}

fn temperature_scaling() -> Outcome {
    let mut rng = common::rng(9);
    let b = random_batch(&mut rng, 10_000, 5, 6.0);
    let before: Vec<usize> = b.logits.iter_rows().map(argmax_row).collect();
    let invariant = [0.1, 0.5, 1.0, 2.0, 10.0].iter().all(|&t| {
        let pair = TemperaturePair::uniform(t).unwrap();
        apply_dual_temperature(&b.logits, &b.labels, &b.groups, &pair)
            .unwrap()
            .predicted()
            == before
    });
    let cfg = TsConfig::default();
    let (z, y, a) = ts_fixture(3.0);
    let (hot, trace) = fit_dual_temperature(&z, &y, &a, &cfg).unwrap();
    let recovered = [hot.t0, hot.t1].iter().all(|&t| t > 2.0 && t < 4.0)
        && trace.val_ece[trace.chosen_epoch] < trace.val_ece[0];
    let (z, y, a) = ts_fixture(1.0);
    let (cal, _) = fit_dual_temperature(&z, &y, &a, &cfg).unwrap();
    let near_one = [cal.t0, cal.t1].iter().all(|t| (t - 1.0).abs() < 0.05);
    Outcome::new(
        invariant && recovered && near_one,
        format!(
            "argmax invariant: {invariant}; x3 fixture T = ({:.3}, {:.3}), val ECE {:.4} -> {:.4}; calibrated T = ({:.3}, {:.3})",
            hot.t0, hot.t1, trace.val_ece[0], trace.val_ece[trace.chosen_epoch], cal.t0, cal.t1
        ),
    )
}

fn pareto() -> Outcome {
    let mut rng = common::rng(10);
    let mut mismatches = 0;
    for _ in 0..50 {
        let cloud = random_cloud(&mut rng, 200);
        let fast = pareto_front(&cloud, DEFAULT_ACCURACY_SLACK, None).unwrap();
        if fast != pareto_brute(&cloud, DEFAULT_ACCURACY_SLACK) {
            mismatches += 1;
        }
    }
    Outcome::new(
        mismatches == 0,
        format!("50 clouds x 200 points, {mismatches} mismatches"),
    )
}

fn mini_sweep_config(loss: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "name": "desk",
            "dataset": {{"source": "fixture", "name": "adult", "seed": 0, "samples": 2000}},
            "loss": {loss},
            "seeds": [0, 1, 2, 3, 4],
            "epochs": 200,
            "learning_rate": 0.001
        }}"#
    ))
    .unwrap()
}

fn run_mini_sweep() -> (Vec<RunLog>, Duration) {
    let start = Instant::now();
    let mut logs = Vec::new();
    for loss in [
        r#"{"kind": "nll"}"#,
        r#"{"kind": "mmce", "groupwise": true, "rho": 0.74, "lambda": 2.0}"#,
    ] {
        let result = sweep(&mini_sweep_config(loss)).unwrap();
        assert!(result.failures.is_empty(), "{:?}", result.failures);
        logs.extend(result.logs);
    }
    (logs, start.elapsed())
}

/// Mean over seeds of the lowest stochastic PE reached at any epoch.
fn mean_best_pe(logs: &[RunLog], technique: &str) -> f64 {
    let best: Vec<f64> = logs
        .iter()
        .filter(|l| l.id.technique == technique)
        .map(|l| {
            l.rows
                .iter()
                .filter_map(|r| r.pe_stoch)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    best.iter().sum::<f64>() / best.len() as f64
}

/// Returns the timing/determinism outcome (required) and the directional
/// outcome (reported only).
fn desk_experiment() -> (Outcome, Outcome) {
    let (logs, elapsed) = run_mini_sweep();
    let (again, _) = run_mini_sweep();
    let identical = serde_json::to_string(&logs).unwrap() == serde_json::to_string(&again).unwrap();
    let in_time = elapsed < Duration::from_secs(600);
    let nll = mean_best_pe(&logs, "nll");
    let grouped = mean_best_pe(&logs, "mmce_g");
    (
        Outcome::new(
            in_time && identical,
            format!(
                "{} runs in {:.0}s, rerun bit-identical: {identical}",
                logs.len(),
                elapsed.as_secs_f64()
            ),
        ),
        Outcome::new(
            grouped < nll,
            format!("mean best stochastic PE: grouped MMCE {grouped:.4} vs NLL {nll:.4}"),
        ),
    )
}

fn table_statistics() -> Outcome {
    let mut worst_z: f64 = 0.0;
    let mut shape_ok = true;
    for row in &BENCHMARKS {
        let (enc, _) = generate_synthetic(&fixture_spec(row, 0)).unwrap();
        let s = dataset_stats(&enc).unwrap();
        shape_ok &= s.size == row.size && s.d == row.d;
        let n = s.size as f64;
        let z = |observed: f64, p: f64, count: f64| {
            (observed - p).abs() / (p * (1.0 - p) / count).sqrt()
        };
        worst_z = worst_z.max(z(s.p_group1, row.p_group1, n));
        for a in 0..2 {
            let count = s.base_rates.group_counts[a] as f64;
            worst_z = worst_z.max(z(s.p_y1[a].unwrap(), row.p_y1[a], count));
        }
    }
    Outcome::new(
        shape_ok && worst_z < 3.0,
        format!("7 fixtures, sizes/widths exact: {shape_ok}, worst deviation {worst_z:.2} sigma"),
    )
}

fn main() -> ExitCode {
    let mut required_failed = false;
    let mut report = |id: &str, outcome: Outcome, required: bool| {
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {id}: {verdict} - {}", outcome.detail);
        required_failed |= required && !outcome.pass;
    };
    report("1", doctor_nurse_pe(), true);
    report("2", finite_differences(), true);
    report("3", collapse(), true);
    report("4", brute_force_mmce(), true);
    report("5", lemmas(), true);
    report("6", temperature_scaling(), true);
    report("7", pareto(), true);
    let (runtime, direction) = desk_experiment();
    report("8a (runtime, determinism)", runtime, true);
    report("8b (direction)", direction, false);
    report("9", table_statistics(), true);
    if required_failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
