//! Random batch generators and brute-force reference implementations shared
//! by the integration suites.
#![allow(dead_code)]

use faircal::diffcore::{finite_diff_grad, grad, init_with_widths, ModelParams, Tensor2};
use faircal::harness::ParetoPoint;
use faircal::losses::{total_loss, total_loss_value, LossKind, LossSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Batch {
    pub logits: Tensor2,
    pub labels: Vec<usize>,
    pub groups: Vec<u8>,
}

impl Batch {
    pub fn probs(&self) -> Vec<Vec<f64>> {
        self.logits
            .iter_rows()
            .map(|row| {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            })
            .collect()
    }

    pub fn group_count(&self, a: u8) -> usize {
        self.groups.iter().filter(|&&g| g == a).count()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` rows of `k` logits in `[-scale, scale]`, random labels and groups.
pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, k: usize, scale: f64) -> Batch {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..k).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect();
    Batch {
        logits: Tensor2::from_rows(&rows).unwrap(),
        labels: (0..n).map(|_| rng.gen_range(0..k)).collect(),
        groups: (0..n).map(|_| rng.gen_range(0..2u8)).collect(),
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn kernel(a: f64, b: f64, gamma: f64) -> f64 {
    (-(a - b).abs() / (2.0 * gamma)).exp()
}

/// Confidence and correctness per row.
fn conf_correct(probs: &[Vec<f64>], labels: &[usize]) -> Vec<(f64, bool)> {
    probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| (p[argmax(p)], argmax(p) == y))
        .collect()
}

/// MMCE by the double sum over all pairs.
pub fn mmce_brute(probs: &[Vec<f64>], labels: &[usize], gamma: f64) -> f64 {
    let rc = conf_correct(probs, labels);
    let n = rc.len() as f64;
    let mut total = 0.0;
    for &(ri, ci) in &rc {
        for &(rj, cj) in &rc {
            total += (ci as u8 as f64 - ri) * (cj as u8 as f64 - rj) * kernel(ri, rj, gamma);
        }
    }
    (total / (n * n)).max(0.0).sqrt()
}

/// MMCE-W from its three blocks: correct/correct, incorrect/incorrect and
/// the cross term, each normalized by its class counts.
pub fn mmce_w_brute(probs: &[Vec<f64>], labels: &[usize], gamma: f64) -> f64 {
    let rc = conf_correct(probs, labels);
    let correct: Vec<f64> = rc.iter().filter(|x| x.1).map(|x| x.0).collect();
    let wrong: Vec<f64> = rc.iter().filter(|x| !x.1).map(|x| x.0).collect();
    let (m1, m0) = (correct.len() as f64, wrong.len() as f64);
    let mut total = 0.0;
    if m1 > 0.0 {
        for &a in &correct {
            for &b in &correct {
                total += (1.0 - a) * (1.0 - b) * kernel(a, b, gamma) / (m1 * m1);
            }
        }
    }
    if m0 > 0.0 {
        for &a in &wrong {
            for &b in &wrong {
                total += a * b * kernel(a, b, gamma) / (m0 * m0);
            }
        }
    }
    if m0 > 0.0 && m1 > 0.0 {
        for &a in &correct {
            for &b in &wrong {
                total -= 2.0 * (1.0 - a) * b * kernel(a, b, gamma) / (m1 * m0);
            }
        }
    }
    total.max(0.0).sqrt()
}

/// Group-wise MMCE as `(1-rho)^2 L(B0,B0) + rho^2 L(B1,B1) + 2 rho (1-rho) L(B0,B1)`
/// with each block averaged over its pairs.
pub fn grouped_mmce_brute(
    probs: &[Vec<f64>],
    labels: &[usize],
    groups: &[u8],
    rho: f64,
    gamma: f64,
) -> f64 {
    let rc = conf_correct(probs, labels);
    let block = |a: u8, b: u8| {
        let (mut s, mut pairs) = (0.0, 0.0);
        for (i, &(ri, ci)) in rc.iter().enumerate() {
            for (j, &(rj, cj)) in rc.iter().enumerate() {
                if groups[i] == a && groups[j] == b {
                    s += (ci as u8 as f64 - ri) * (cj as u8 as f64 - rj) * kernel(ri, rj, gamma);
                    pairs += 1.0;
                }
            }
        }
        if pairs > 0.0 {
            s / pairs
        } else {
            0.0
        }
    };
    let sq = (1.0 - rho).powi(2) * block(0, 0)
        + rho * rho * block(1, 1)
        + 2.0 * rho * (1.0 - rho) * block(0, 1);
    sq.max(0.0).sqrt()
}

/// Points not weakly dominated by any other; among exact duplicates the
/// first occurrence survives.
pub fn pareto_brute(points: &[ParetoPoint], slack: f64) -> Vec<ParetoPoint> {
    let best = points
        .iter()
        .map(|p| p.acc)
        .fold(f64::NEG_INFINITY, f64::max);
    let eligible: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].acc >= best - slack)
        .collect();
    let mut out: Vec<ParetoPoint> = eligible
        .iter()
        .filter(|&&i| {
            let p = &points[i];
            !eligible.iter().any(|&j| {
                let q = &points[j];
                let weakly = q.pe <= p.pe && q.ece <= p.ece;
                let same = q.pe == p.pe && q.ece == p.ece;
                j != i && weakly && (!same || j < i)
            })
        })
        .map(|&i| points[i].clone())
        .collect();
    out.sort_by(|a, b| a.pe.total_cmp(&b.pe));
    out
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<ParetoPoint> {
    (0..n)
        .map(|i| {
            // Coarse grid so that ties and duplicates actually occur.
            let pe = (rng.gen_range(0.0..1.0f64) * 40.0).round() / 40.0;
            let ece = (rng.gen_range(0.0..1.0f64) * 40.0).round() / 40.0;
            ParetoPoint {
                pe,
                ece,
                acc: rng.gen_range(0.7..0.9),
                run_id: format!("r{}", i % 7),
                epoch: i,
            }
        })
        .collect()
}

pub const FD_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;

fn spec(kind: LossKind, grouped: bool) -> LossSpec {
    let mut s = LossSpec::new(kind);
    if kind.uses_lambda() {
        s = s.with_lambda(1.5);
    }
    if grouped {
        s = s.grouped(0.6);
    }
    s
}

fn norm(p: &ModelParams) -> f64 {
    p.tensors()
        .flat_map(|t| t.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn diff_norm(a: &ModelParams, b: &ModelParams) -> f64 {
    a.tensors()
        .zip(b.tensors())
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

/// `||autodiff - fd|| / max(||autodiff||, ||fd||)` on one random problem.
pub fn relative_gradient_error(kind: LossKind, grouped: bool, classes: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let d = 4;
    // Non-zero biases keep every ReLU input away from exactly zero.
    let mut params = init_with_widths(d, &[6, 5], classes, seed).unwrap();
    for layer in &mut params.layers {
        for b in layer.bias.data_mut() {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    let rows: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .collect();
    let x = Tensor2::from_rows(&rows).unwrap();
    let labels: Vec<usize> = (0..8).map(|_| rng.gen_range(0..classes)).collect();
    let mut groups: Vec<u8> = (0..8).map(|_| rng.gen_range(0..2u8)).collect();
    groups[0] = 0;
    groups[1] = 1;
    let spec = spec(kind, grouped);
    let (_, analytic) = grad(&params, &x, |tape, z, _| {
        total_loss(tape, &spec, z, &labels, &groups)
    })
    .unwrap();
    let numeric = finite_diff_grad(
        |p| total_loss_value(&spec, &p.forward(&x)?, &labels, &groups),
        &params,
        FD_STEP,
    )
    .unwrap();
    diff_norm(&analytic, &numeric) / norm(&analytic).max(norm(&numeric)).max(1e-300)
}
