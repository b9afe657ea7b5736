//! Per-sample ("linear") losses over a batch of logits.
//!
//! Every function records its computation on the tape and returns a 1x1
//! variable. Correctness and label indicators enter as constants.

use crate::diffcore::{argmax_row, Tape, Tensor2, Var};
use crate::error::{Error, Result};

/// Focusing exponent used by the sample-dependent focal loss when the true
/// class probability is at most [`FLSD_THRESHOLD`].
pub const FLSD_LOW_GAMMA: f64 = 5.0;
pub const FLSD_HIGH_GAMMA: f64 = 3.0;
pub const FLSD_THRESHOLD: f64 = 0.2;

pub(crate) fn check_batch(tape: &Tape, logits: Var, labels: &[usize]) -> Result<usize> {
    let (n, k) = tape.value(logits).shape();
    if n == 0 {
        return Err(Error::Empty("loss over an empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside 0..{k}"
        )));
    }
    Ok(k)
}

/// Mean negative log-likelihood, via log-softmax.
pub fn nll(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    check_batch(tape, logits, labels)?;
    let logp = tape.log_softmax(logits);
    let picked = tape.gather(logp, labels)?;
    let mean = tape.mean(picked)?;
    Ok(tape.scale(mean, -1.0))
}

/// Smoothed target row: `1 - alpha` on the true class, `alpha / (K - 1)` elsewhere.
pub fn smoothed_targets(labels: &[usize], classes: usize, alpha: f64) -> Tensor2 {
    let off = alpha / (classes - 1) as f64;
    let mut t = Tensor2::filled(labels.len(), classes, off);
    for (i, &y) in labels.iter().enumerate() {
        t.set(i, y, 1.0 - alpha);
    }
    t
}

/// Cross-entropy against label-smoothed targets.
pub fn label_smoothing(tape: &mut Tape, logits: Var, labels: &[usize], alpha: f64) -> Result<Var> {
    let k = check_batch(tape, logits, labels)?;
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "smoothing {alpha} outside [0, 1)"
        )));
    }
    let n = labels.len() as f64;
    let logp = tape.log_softmax(logits);
    let targets = tape.leaf(smoothed_targets(labels, k, alpha));
    let weighted = tape.mul(targets, logp)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0 / n))
}

fn focal_with(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    gammas: impl Fn(f64) -> f64,
) -> Result<Var> {
    check_batch(tape, logits, labels)?;
    let logp = tape.log_softmax(logits);
    let logp_y = tape.gather(logp, labels)?;
    let p_y = tape.exp(logp_y);
    let exps: Vec<f64> = tape.value(p_y).data().iter().map(|&p| gammas(p)).collect();
    let neg = tape.scale(p_y, -1.0);
    let one_minus = tape.offset(neg, 1.0);
    // exp(log p) can round a hair above 1.
    let one_minus = tape.relu(one_minus);
    let modulator = tape.pow(one_minus, exps)?;
    let terms = tape.mul(modulator, logp_y)?;
    let mean = tape.mean(terms)?;
    Ok(tape.scale(mean, -1.0))
}

/// Focal loss `-(1 - p_y)^gamma log p_y`, batch mean.
pub fn focal(tape: &mut Tape, logits: Var, labels: &[usize], gamma: f64) -> Result<Var> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "focal exponent {gamma} must be non-negative"
        )));
    }
    focal_with(tape, logits, labels, |_| gamma)
}

/// Exponent chosen by the sample-dependent focal loss; the low-probability
/// interval `[0, 0.2]` is closed.
pub fn flsd_gamma(p_y: f64) -> f64 {
    if p_y <= FLSD_THRESHOLD {
        FLSD_LOW_GAMMA
    } else {
        FLSD_HIGH_GAMMA
    }
}

/// Sample-dependent focal loss: exponent 5 when `p_y <= 0.2`, else 3.
pub fn focal_sd(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    focal_with(tape, logits, labels, flsd_gamma)
}

/// Correctness indicator (argmax equals label, lowest index on ties) per row.
pub fn correctness(probs: &Tensor2, labels: &[usize]) -> Vec<f64> {
    probs
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| if argmax_row(row) == y { 1.0 } else { 0.0 })
        .collect()
}

/// `|mean correctness - mean max-confidence|`.
pub fn dca(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    check_batch(tape, logits, labels)?;
    let probs = tape.softmax(logits);
    let c = correctness(tape.value(probs), labels);
    let acc = c.iter().sum::<f64>() / c.len() as f64;
    let conf = tape.row_max(probs);
    let mean_conf = tape.mean(conf)?;
    let acc = tape.leaf(Tensor2::scalar(acc));
    let gap = tape.sub(acc, mean_conf)?;
    Ok(tape.abs(gap))
}

/// Class-averaged `|mean p_k - class frequency_k|`.
pub fn mdca(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let k = check_batch(tape, logits, labels)?;
    let n = labels.len() as f64;
    let mut freq = Tensor2::zeros(1, k);
    for &y in labels {
        freq.data_mut()[y] += 1.0 / n;
    }
    let probs = tape.softmax(logits);
    let mean_p = tape.mean_rows(probs)?;
    let freq = tape.leaf(freq);
    let gap = tape.sub(mean_p, freq)?;
    let gap = tape.abs(gap);
    tape.mean(gap)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Logits whose softmax is exactly the given probability rows (log p).
    fn logits_for(probs: &[Vec<f64>]) -> Tensor2 {
        Tensor2::from_rows(
            &probs
                .iter()
                .map(|r| r.iter().map(|p| p.ln()).collect())
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    fn eval(f: impl FnOnce(&mut Tape, Var) -> Result<Var>, logits: Tensor2) -> f64 {
        let mut tape = Tape::new();
        let z = tape.leaf(logits);
        let out = f(&mut tape, z).unwrap();
        tape.value(out).item()
    }

    const TOL: f64 = 1e-12;

    #[test]
    fn nll_examples() {
        let confident = Tensor2::from_rows(&[vec![800.0, 0.0], vec![0.0, 800.0]]).unwrap();
        assert_eq!(eval(|t, z| nll(t, z, &[0, 1]), confident), 0.0);
        let v = eval(|t, z| nll(t, z, &[0]), logits_for(&[vec![0.5, 0.5]]));
        assert!((v - 2f64.ln()).abs() < TOL);
        let v = eval(
            |t, z| nll(t, z, &[0, 1]),
            logits_for(&[vec![0.5, 0.5], vec![0.75, 0.25]]),
        );
        assert!((v - (2f64.ln() + 4f64.ln()) / 2.0).abs() < TOL);
        assert!((v - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn label_smoothing_examples() {
        let z = logits_for(&[vec![0.9, 0.1], vec![0.3, 0.7]]);
        let a = eval(|t, z| label_smoothing(t, z, &[0, 1], 0.0), z.clone());
        let b = eval(|t, z| nll(t, z, &[0, 1]), z);
        assert_eq!(a, b);

        let v = eval(
            |t, z| label_smoothing(t, z, &[0], 0.05),
            logits_for(&[vec![0.9, 0.1]]),
        );
        let expected = -(0.95 * 0.9f64.ln() + 0.05 * 0.1f64.ln());
        assert!((v - expected).abs() < TOL, "{v} vs {expected}");

        let s = smoothed_targets(&[0], 3, 0.05);
        assert_eq!(s.row(0)[0], 0.95);
        assert!((s.row(0)[1] - 0.025).abs() < 1e-15 && (s.row(0)[2] - 0.025).abs() < 1e-15);
    }

    #[test]
    fn label_smoothing_rejects_alpha_one() {
        let mut tape = Tape::new();
        let z = tape.leaf(logits_for(&[vec![0.5, 0.5]]));
        assert!(label_smoothing(&mut tape, z, &[0], 1.0).is_err());
    }

    #[test]
    fn focal_examples() {
        let z = logits_for(&[vec![0.6, 0.4], vec![0.2, 0.8], vec![0.5, 0.5]]);
        let labels = [0, 1, 1];
        let f0 = eval(|t, z| focal(t, z, &labels, 0.0), z.clone());
        let n = eval(|t, z| nll(t, z, &labels), z);
        assert!((f0 - n).abs() < TOL);

        let v = eval(|t, z| focal(t, z, &[0], 3.0), logits_for(&[vec![0.5, 0.5]]));
        assert!((v - 0.125 * 2f64.ln()).abs() < TOL);
        assert!((v - 0.08664).abs() < 1e-5);

        let one = Tensor2::from_rows(&[vec![900.0, 0.0]]).unwrap();
        assert_eq!(eval(|t, z| focal(t, z, &[0], 3.0), one), 0.0);
    }

    #[test]
    fn focal_sd_branches() {
        // p_y = 0.1 uses the gamma = 5 branch.
        let v = eval(|t, z| focal_sd(t, z, &[0]), logits_for(&[vec![0.1, 0.9]]));
        let expected = -(0.9f64.powi(5)) * 0.1f64.ln();
        assert!((v - expected).abs() < TOL);
        assert!((v - 1.3596).abs() < 1e-4);

        // p_y = 0.5 matches the plain gamma = 3 focal loss.
        let z = logits_for(&[vec![0.5, 0.5]]);
        let a = eval(|t, z| focal_sd(t, z, &[0]), z.clone());
        let b = eval(|t, z| focal(t, z, &[0], 3.0), z);
        assert_eq!(a, b);
    }

    #[test]
    fn focal_sd_boundary_is_closed() {
        assert_eq!(flsd_gamma(0.2), 5.0);
        assert_eq!(flsd_gamma(0.0), 5.0);
        assert_eq!(flsd_gamma(0.2 + 1e-12), 3.0);
    }

    #[test]
    fn dca_examples() {
        let one = Tensor2::from_rows(&[vec![900.0, 0.0], vec![0.0, 900.0]]).unwrap();
        assert_eq!(eval(|t, z| dca(t, z, &[0, 1]), one), 0.0);
        let v = eval(|t, z| dca(t, z, &[0]), logits_for(&[vec![0.8, 0.2]]));
        assert!((v - 0.2).abs() < TOL);
        let v = eval(
            |t, z| dca(t, z, &[0, 0]),
            logits_for(&[vec![0.9, 0.1], vec![0.1, 0.9]]),
        );
        assert!((v - 0.4).abs() < TOL);
    }

    #[test]
    fn mdca_examples() {
        let one = Tensor2::from_rows(&[vec![900.0, 0.0], vec![0.0, 900.0]]).unwrap();
        assert_eq!(eval(|t, z| mdca(t, z, &[0, 1]), one), 0.0);
        let v = eval(
            |t, z| mdca(t, z, &[0, 1]),
            logits_for(&[vec![0.7, 0.3], vec![0.6, 0.4]]),
        );
        assert!((v - 0.15).abs() < TOL);
        let uniform = Tensor2::zeros(3, 3);
        assert!(eval(|t, z| mdca(t, z, &[0, 1, 2]), uniform).abs() < TOL);
    }

    #[test]
    fn empty_and_bad_labels() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor2::zeros(0, 2));
        assert!(matches!(nll(&mut tape, z, &[]), Err(Error::Empty(_))));
        let z = tape.leaf(Tensor2::zeros(1, 2));
        assert!(nll(&mut tape, z, &[2]).is_err());
        assert!(dca(&mut tape, z, &[0, 1]).is_err());
    }
}
