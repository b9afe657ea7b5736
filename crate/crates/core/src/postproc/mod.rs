//! Dual temperature scaling: one softmax temperature per sensitive group,
//! fitted on validation cross-entropy with ECE-based early stopping.
//!
//! Temperatures are parameterized as `T = exp(u)` and `u` is optimized with
//! Adam. The objective separates by group, so the two coordinates only
//! interact through the shared early-stopping criterion.

use serde::{Deserialize, Serialize};

use crate::diffcore::{softmax_rows, Tensor2};
use crate::error::{Error, Result};
use crate::metrics::{self, PredictionSet, DEFAULT_BINS};

/// One temperature per group; index 0 is `A = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperaturePair {
    pub t0: f64,
    pub t1: f64,
}

impl Default for TemperaturePair {
    fn default() -> Self {
        Self { t0: 1.0, t1: 1.0 }
    }
}

impl TemperaturePair {
    pub fn new(t0: f64, t1: f64) -> Result<Self> {
        let pair = Self { t0, t1 };
        pair.validate()?;
        Ok(pair)
    }

    pub fn uniform(t: f64) -> Result<Self> {
        Self::new(t, t)
    }

    pub fn validate(&self) -> Result<()> {
        for t in [self.t0, self.t1] {
            check_temperature(t)?;
        }
        Ok(())
    }

    pub fn get(&self, group: u8) -> f64 {
        if group == 0 {
            self.t0
        } else {
            self.t1
        }
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "temperature {t} must be positive and finite"
        )))
    }
}

/// Why a fit stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EceIncreased,
    MaxEpochs,
}

/// Per-epoch validation history of a temperature fit. Entry 0 is the
/// starting point `T = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsFitTrace {
    pub val_loss: Vec<f64>,
    pub val_ece: Vec<f64>,
    pub temperatures: Vec<TemperaturePair>,
    pub chosen_epoch: usize,
    pub stop: StopReason,
    /// Groups absent from the validation data; their temperature stays 1.
    pub missing_groups: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub bins: usize,
}

impl Default for TsConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            max_epochs: 500,
            bins: DEFAULT_BINS,
        }
    }
}

impl TsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "temperature learning rate {} must be positive",
                self.lr
            )));
        }
        if self.bins == 0 {
            return Err(Error::Config("bin count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Divides every logit by `t`.
pub fn scale_logits(logits: &Tensor2, t: f64) -> Result<Tensor2> {
    check_temperature(t)?;
    Ok(logits.map(|z| z / t))
}

fn scale_by_group(logits: &Tensor2, groups: &[u8], pair: &TemperaturePair) -> Result<Tensor2> {
    if groups.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} groups for {} rows",
            groups.len(),
            logits.rows()
        )));
    }
    let mut out = logits.clone();
    for (r, &a) in groups.iter().enumerate() {
        if a > 1 {
            return Err(Error::InvalidArgument(format!(
                "group value {a} is not binary"
            )));
        }
        let t = pair.get(a);
        out.row_mut(r).iter_mut().for_each(|z| *z /= t);
    }
    Ok(out)
}

/// Predictions with each row scaled by its group's temperature.
pub fn apply_dual_temperature(
    logits: &Tensor2,
    labels: &[usize],
    groups: &[u8],
    pair: &TemperaturePair,
) -> Result<PredictionSet> {
    pair.validate()?;
    let scaled = scale_by_group(logits, groups, pair)?;
    PredictionSet::new(softmax_rows(&scaled), labels.to_vec(), groups.to_vec())
}

struct Adam2 {
    m: [f64; 2],
    v: [f64; 2],
    step: i32,
    lr: f64,
}

impl Adam2 {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn update(&mut self, u: &mut [f64; 2], g: [f64; 2]) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for k in 0..2 {
            self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * g[k];
            self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * g[k] * g[k];
            u[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mean cross-entropy at temperatures `exp(u)` and its gradient in `u`.
fn loss_and_grad(
    logits: &Tensor2,
    labels: &[usize],
    groups: &[u8],
    u: [f64; 2],
) -> (f64, [f64; 2]) {
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = [0.0; 2];
    let mut s = vec![0.0; logits.cols()];
    for ((row, &y), &a) in logits.iter_rows().zip(labels).zip(groups) {
        let inv_t = (-u[a as usize]).exp();
        for (sk, z) in s.iter_mut().zip(row) {
            *sk = z * inv_t;
        }
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += log_norm - s[y];
        // d/du of (log_norm - s_y) with ds_k/du = -s_k.
        let mut d = 0.0;
        for (k, &sk) in s.iter().enumerate() {
            let p = (sk - log_norm).exp();
            let target = if k == y { 1.0 } else { 0.0 };
            d -= (p - target) * sk;
        }
        grad[a as usize] += d;
    }
    (loss / n, grad.map(|g| g / n))
}

fn validation_ece(
    logits: &Tensor2,
    labels: &[usize],
    groups: &[u8],
    pair: &TemperaturePair,
    bins: usize,
) -> Result<f64> {
    metrics::ece(&apply_dual_temperature(logits, labels, groups, pair)?, bins)
}

/// Fits one temperature per group on validation logits.
///
/// Starts at `T = (1, 1)`, takes one full-batch Adam step per epoch and stops
/// at the first epoch whose validation ECE exceeds the best seen so far,
/// returning the best-ECE temperatures. A group with no validation rows keeps
/// `T = 1` and is listed in [`TsFitTrace::missing_groups`].
pub fn fit_dual_temperature(
    logits: &Tensor2,
    labels: &[usize],
    groups: &[u8],
    config: &TsConfig,
) -> Result<(TemperaturePair, TsFitTrace)> {
    config.validate()?;
    if labels.is_empty() {
        return Err(Error::Empty("temperature fit needs validation data".into()));
    }
    if labels.len() != logits.rows() || groups.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} logit rows, {} labels, {} groups",
            logits.rows(),
            labels.len(),
            groups.len()
        )));
    }
    if !logits.is_finite() {
        return Err(Error::Numeric("validation logits are not finite".into()));
    }
    let missing_groups: Vec<u8> = (0..2u8).filter(|a| !groups.contains(a)).collect();

    let to_pair = |u: [f64; 2]| TemperaturePair {
        t0: u[0].exp(),
        t1: u[1].exp(),
    };
    let mut u = [0.0f64; 2];
    let mut adam = Adam2 {
        m: [0.0; 2],
        v: [0.0; 2],
        step: 0,
        lr: config.lr,
    };
    let mut trace = TsFitTrace {
        val_loss: Vec::new(),
        val_ece: Vec::new(),
        temperatures: Vec::new(),
        chosen_epoch: 0,
        stop: StopReason::MaxEpochs,
        missing_groups,
    };
    let mut best_ece = f64::INFINITY;
    for epoch in 0..=config.max_epochs {
        let pair = to_pair(u);
        let (loss, grad) = loss_and_grad(logits, labels, groups, u);
        let ece = validation_ece(logits, labels, groups, &pair, config.bins)?;
        if !loss.is_finite() || !pair.t0.is_finite() || !pair.t1.is_finite() {
            return Err(Error::Numeric(format!(
                "temperature fit diverged at epoch {epoch}"
            )));
        }
        trace.val_loss.push(loss);
        trace.val_ece.push(ece);
        trace.temperatures.push(pair);
        if ece < best_ece {
            best_ece = ece;
            trace.chosen_epoch = epoch;
        } else if ece > best_ece {
            trace.stop = StopReason::EceIncreased;
            break;
        }
        if epoch < config.max_epochs {
            adam.update(&mut u, grad);
        }
    }
    Ok((trace.temperatures[trace.chosen_epoch], trace))
}

/// Classical single-temperature scaling: the dual fit with every row in one group.
pub fn fit_single_temperature(
    logits: &Tensor2,
    labels: &[usize],
    config: &TsConfig,
) -> Result<(f64, TsFitTrace)> {
    let groups = vec![0u8; labels.len()];
    let (pair, trace) = fit_dual_temperature(logits, labels, &groups, config)?;
    Ok((pair.t0, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::argmax_row;

    /// Binary logits `(scale * logit(p), 0)` for each level `p`, `per_level`
    /// rows per level and group, with exactly `round(p * per_level)` rows
    /// labelled class 0.
    fn fixture(levels: &[f64], per_level: usize, scale: f64) -> (Tensor2, Vec<usize>, Vec<u8>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut groups = Vec::new();
        for a in 0..2u8 {
            for &p in levels {
                let positives = (p * per_level as f64).round() as usize;
                for i in 0..per_level {
                    rows.push(vec![scale * (p / (1.0 - p)).ln(), 0.0]);
                    labels.push(if i < positives { 0 } else { 1 });
                    groups.push(a);
                }
            }
        }
        (Tensor2::from_rows(&rows).unwrap(), labels, groups)
    }

    #[test]
    fn scale_examples() {
        let z = Tensor2::from_rows(&[vec![2.0, 0.0]]).unwrap();
        assert_eq!(scale_logits(&z, 1.0).unwrap(), z);
        let p = softmax_rows(&scale_logits(&z, 2.0).unwrap());
        assert!((p.get(0, 0) - 0.731).abs() < 1e-3 && (p.get(0, 1) - 0.269).abs() < 1e-3);
        let flat = softmax_rows(
            &scale_logits(&Tensor2::from_rows(&[vec![5.0, -3.0, 1.0]]).unwrap(), 1e6).unwrap(),
        );
        assert!(flat.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-5));
        assert!(scale_logits(&z, 0.0).is_err());
        assert!(scale_logits(&z, -1.0).is_err());
    }

    #[test]
    fn unit_pair_is_identity() {
        let z = Tensor2::from_rows(&[vec![0.3, -1.2], vec![2.0, 1.0]]).unwrap();
        let p = apply_dual_temperature(&z, &[0, 1], &[0, 1], &TemperaturePair::default()).unwrap();
        assert_eq!(p.probs(), &softmax_rows(&z));
    }

    #[test]
    fn pair_flattens_and_sharpens() {
        let z = Tensor2::from_rows(&[vec![1.5, 0.0], vec![1.5, 0.0]]).unwrap();
        let base = softmax_rows(&z).get(0, 0);
        let p = apply_dual_temperature(
            &z,
            &[0, 0],
            &[0, 1],
            &TemperaturePair::new(2.0, 0.5).unwrap(),
        )
        .unwrap();
        let conf = p.confidence();
        assert!(conf[0] < base && conf[1] > base);
        assert_eq!(p.predicted(), vec![0, 0]);
    }

    #[test]
    fn rejects_bad_groups_and_pairs() {
        let z = Tensor2::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(apply_dual_temperature(&z, &[0], &[2], &TemperaturePair::default()).is_err());
        assert!(TemperaturePair::new(1.0, 0.0).is_err());
        assert!(TemperaturePair::new(f64::INFINITY, 1.0).is_err());
        assert!(
            fit_dual_temperature(&Tensor2::zeros(0, 2), &[], &[], &TsConfig::default()).is_err()
        );
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let (z, y, a) = fixture(&[0.6, 0.85], 10, 2.5);
        let u = [0.3, -0.4];
        let (_, g) = loss_and_grad(&z, &y, &a, u);
        let h = 1e-6;
        for k in 0..2 {
            let mut up = u;
            let mut down = u;
            up[k] += h;
            down[k] -= h;
            let fd =
                (loss_and_grad(&z, &y, &a, up).0 - loss_and_grad(&z, &y, &a, down).0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8, "coordinate {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn overconfident_fixture_recovers_three() {
        let (z, y, a) = fixture(&[0.65, 0.75, 0.85, 0.95], 100, 3.0);
        let (pair, trace) = fit_dual_temperature(&z, &y, &a, &TsConfig::default()).unwrap();
        assert!(pair.t0 > 2.0 && pair.t0 < 4.0, "{pair:?}");
        assert!(pair.t1 > 2.0 && pair.t1 < 4.0, "{pair:?}");
        assert!(trace.val_ece[trace.chosen_epoch] < trace.val_ece[0]);
    }

    #[test]
    fn calibrated_fixture_stays_near_one() {
        let (z, y, a) = fixture(&[0.65, 0.75, 0.85, 0.95], 100, 1.0);
        let (pair, _) = fit_dual_temperature(&z, &y, &a, &TsConfig::default()).unwrap();
        assert!(
            (pair.t0 - 1.0).abs() < 0.05 && (pair.t1 - 1.0).abs() < 0.05,
            "{pair:?}"
        );
    }

    #[test]
    fn chosen_epoch_has_min_ece() {
        let (z, y, a) = fixture(&[0.55, 0.7, 0.9], 20, 2.0);
        let (pair, trace) = fit_dual_temperature(&z, &y, &a, &TsConfig::default()).unwrap();
        let min = trace.val_ece.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(trace.val_ece[trace.chosen_epoch], min);
        assert_eq!(trace.temperatures[trace.chosen_epoch], pair);
        assert!(min <= trace.val_ece[0]);
    }

    #[test]
    fn single_group_keeps_other_at_one() {
        let (z, y, _) = fixture(&[0.65, 0.85], 50, 3.0);
        let ones = vec![1u8; y.len()];
        let (pair, trace) = fit_dual_temperature(&z, &y, &ones, &TsConfig::default()).unwrap();
        assert_eq!(pair.t0, 1.0);
        assert_eq!(trace.missing_groups, vec![0]);
        assert!(pair.t1 > 1.5);
    }

    #[test]
    fn collapsed_groups_match_single_fit() {
        let (z, y, _) = fixture(&[0.6, 0.8, 0.9], 40, 2.0);
        let zeros = vec![0u8; y.len()];
        let (pair, _) = fit_dual_temperature(&z, &y, &zeros, &TsConfig::default()).unwrap();
        let (t, _) = fit_single_temperature(&z, &y, &TsConfig::default()).unwrap();
        assert!((pair.t0 - t).abs() < 1e-6);
    }

    #[test]
    fn argmax_preserved_for_any_pair() {
        let z = Tensor2::from_rows(&[
            vec![0.1, 0.4, -2.0],
            vec![3.0, 3.0, 1.0],
            vec![-1.0, -0.5, -0.7],
        ])
        .unwrap();
        let before: Vec<usize> = z.iter_rows().map(argmax_row).collect();
        for (t0, t1) in [(0.1, 10.0), (2.0, 0.5), (1.0, 1.0)] {
            let p = apply_dual_temperature(
                &z,
                &[0, 0, 0],
                &[0, 1, 1],
                &TemperaturePair::new(t0, t1).unwrap(),
            )
            .unwrap();
            assert_eq!(p.predicted(), before);
        }
    }
}
