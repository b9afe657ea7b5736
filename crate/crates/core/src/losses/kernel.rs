//! Kernel ("pair-wise") calibration losses: MMCE, its correctness-weighted
//! variant MMCE-W, and their group-wise combinations.
//!
//! Every variant reduces to one weighted quadratic form
//!
//! ```text
//! Q = sum_ij w_i w_j (c_i - r_i)(c_j - r_j) k(r_i, r_j)
//! ```
//!
//! where `c` is the (constant) correctness indicator, `r` the max-confidence
//! and `k` the Laplacian kernel. The loss is `sqrt(max(Q, 0))`. Variants
//! differ only in the per-sample weights:
//!
//! | variant          | `w_i`                                    |
//! |------------------|------------------------------------------|
//! | MMCE             | `1 / n`                                  |
//! | MMCE-W           | `1 / m_{c_i}`                            |
//! | group-wise MMCE  | `rho_{a_i} / |B_{a_i}|`                  |
//! | group-wise MMCE-W| `rho_{a_i} / (|B_{a_i}| * m_{c_i} / n)`  |
//!
//! with `rho_1 = rho`, `rho_0 = 1 - rho` and `m_c` the number of samples
//! with correctness `c` in the whole batch. Expanding the group-wise forms
//! over the four group blocks gives `(1-rho)^2 L(B0,B0) + rho^2 L(B1,B1) +
//! 2 rho (1-rho) L(B0,B1)`; at `rho = |B1| / n` both collapse to the
//! ungrouped loss.

use super::linear::{check_batch, correctness};
use crate::diffcore::{Tape, Tensor2, Var};
use crate::error::{Error, Result};

/// Default Laplacian kernel width.
pub const DEFAULT_KERNEL_GAMMA: f64 = 0.2;

/// `exp(-|r1 - r2| / (2 gamma))`.
pub fn laplacian_kernel(r1: f64, r2: f64, gamma: f64) -> f64 {
    (-(r1 - r2).abs() / (2.0 * gamma)).exp()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "kernel width {gamma} must be positive"
        )))
    }
}

/// Records `sqrt(max(Q, 0))` for weights derived from each sample's
/// correctness via `weight(i, c_i)`.
fn weighted_form(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    gamma: f64,
    weight: impl Fn(usize, bool) -> f64,
) -> Result<Var> {
    check_batch(tape, logits, labels)?;
    check_gamma(gamma)?;
    let probs = tape.softmax(logits);
    let c = correctness(tape.value(probs), labels);
    let w: Vec<f64> = c
        .iter()
        .enumerate()
        .map(|(i, &ci)| weight(i, ci == 1.0))
        .collect();
    let r = tape.row_max(probs);
    let c = tape.leaf(Tensor2::column(c));
    let c_minus_r = tape.sub(c, r)?;
    let w = tape.leaf(Tensor2::column(w));
    let u = tape.mul(w, c_minus_r)?;
    let q = tape.laplacian_form(u, r, u, r, 2.0 * gamma)?;
    let q = tape.relu(q);
    tape.sqrt(q)
}

fn correctness_counts(tape: &Tape, logits: Var, labels: &[usize]) -> (f64, f64) {
    let probs = crate::diffcore::softmax_rows(tape.value(logits));
    let c = correctness(&probs, labels);
    let m1 = c.iter().sum::<f64>();
    (c.len() as f64 - m1, m1)
}

/// MMCE: square root of the kernel quadratic form with uniform weights `1/n`.
pub fn mmce(tape: &mut Tape, logits: Var, labels: &[usize], gamma: f64) -> Result<Var> {
    let n = labels.len() as f64;
    weighted_form(tape, logits, labels, gamma, |_, _| 1.0 / n)
}

/// MMCE-W: correct and incorrect samples normalized by their own counts.
pub fn mmce_w(tape: &mut Tape, logits: Var, labels: &[usize], gamma: f64) -> Result<Var> {
    check_batch(tape, logits, labels)?;
    let (m0, m1) = correctness_counts(tape, logits, labels);
    // A class with zero members contributes no terms, so its weight is never read.
    weighted_form(tape, logits, labels, gamma, |_, correct| {
        if correct {
            1.0 / m1
        } else {
            1.0 / m0
        }
    })
}

/// Which kernel loss a group-wise combination is built on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairwiseBase {
    Mmce,
    MmceW,
}

/// Group-wise kernel loss: the ρ-weighted block combination of the squared
/// loss over the two sensitive groups, followed by a single square root.
pub fn groupwise_pairwise(
    tape: &mut Tape,
    base: PairwiseBase,
    logits: Var,
    labels: &[usize],
    groups: &[u8],
    rho: f64,
    gamma: f64,
) -> Result<Var> {
    check_batch(tape, logits, labels)?;
    if groups.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} groups for {} labels",
            groups.len(),
            labels.len()
        )));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho {rho} outside [0, 1]")));
    }
    let n = labels.len() as f64;
    let mut sizes = [0.0f64; 2];
    for &a in groups {
        if a > 1 {
            return Err(Error::InvalidArgument(format!(
                "group value {a} is not binary"
            )));
        }
        sizes[a as usize] += 1.0;
    }
    let group_weight = [1.0 - rho, rho];
    match base {
        PairwiseBase::Mmce => weighted_form(tape, logits, labels, gamma, |i, _| {
            let a = groups[i] as usize;
            group_weight[a] / sizes[a]
        }),
        PairwiseBase::MmceW => {
            let (m0, m1) = correctness_counts(tape, logits, labels);
            let frac = [m0 / n, m1 / n];
            weighted_form(tape, logits, labels, gamma, |i, correct| {
                let a = groups[i] as usize;
                group_weight[a] / (sizes[a] * frac[correct as usize])
            })
        }
    }
}
