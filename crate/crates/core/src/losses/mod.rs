//! Calibration losses and their group-wise combinations.

mod kernel;
mod linear;

pub use kernel::{
    groupwise_pairwise, laplacian_kernel, mmce, mmce_w, PairwiseBase, DEFAULT_KERNEL_GAMMA,
};
pub use linear::{
    correctness, dca, flsd_gamma, focal, focal_sd, label_smoothing, mdca, nll, smoothed_targets,
    FLSD_HIGH_GAMMA, FLSD_LOW_GAMMA, FLSD_THRESHOLD,
};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor2, Var};
use crate::error::{Error, Result};

pub const DEFAULT_SMOOTHING: f64 = 0.05;
pub const DEFAULT_FOCAL_GAMMA: f64 = 3.0;

/// A labeled batch split by a binary sensitive attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupBatch {
    pub features: Tensor2,
    pub labels: Vec<usize>,
    pub groups: Vec<u8>,
}

impl GroupBatch {
    pub fn new(features: Tensor2, labels: Vec<usize>, groups: Vec<u8>) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || groups.len() != n {
            return Err(Error::Shape(format!(
                "{n} rows but {} labels and {} groups",
                labels.len(),
                groups.len()
            )));
        }
        if let Some(&a) = groups.iter().find(|&&a| a > 1) {
            return Err(Error::InvalidArgument(format!(
                "group value {a} is not binary"
            )));
        }
        Ok(Self {
            features,
            labels,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row indices of the `A = 0` and `A = 1` sub-batches.
    pub fn partition(&self) -> [Vec<usize>; 2] {
        partition(&self.groups)
    }
}

pub(crate) fn partition(groups: &[u8]) -> [Vec<usize>; 2] {
    let mut parts = [Vec::new(), Vec::new()];
    for (i, &a) in groups.iter().enumerate() {
        parts[a as usize].push(i);
    }
    parts
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Nll,
    Ls,
    Fl,
    Flsd,
    Dca,
    Mdca,
    Mmce,
    MmceW,
}

impl LossKind {
    pub const ALL: [LossKind; 8] = [
        LossKind::Nll,
        LossKind::Ls,
        LossKind::Fl,
        LossKind::Flsd,
        LossKind::Dca,
        LossKind::Mdca,
        LossKind::Mmce,
        LossKind::MmceW,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Nll => "nll",
            LossKind::Ls => "ls",
            LossKind::Fl => "fl",
            LossKind::Flsd => "flsd",
            LossKind::Dca => "dca",
            LossKind::Mdca => "mdca",
            LossKind::Mmce => "mmce",
            LossKind::MmceW => "mmce_w",
        }
    }

    /// Losses added to cross-entropy with a weight λ.
    pub fn uses_lambda(self) -> bool {
        matches!(
            self,
            LossKind::Dca | LossKind::Mdca | LossKind::Mmce | LossKind::MmceW
        )
    }

    pub fn is_pairwise(self) -> bool {
        matches!(self, LossKind::Mmce | LossKind::MmceW)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_alpha() -> f64 {
    DEFAULT_SMOOTHING
}
fn default_focal_gamma() -> f64 {
    DEFAULT_FOCAL_GAMMA
}
fn default_kernel_gamma() -> f64 {
    DEFAULT_KERNEL_GAMMA
}

/// Training objective: which loss, its hyperparameters, and whether it is
/// applied group-wise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_focal_gamma")]
    pub focal_gamma: f64,
    #[serde(default = "default_kernel_gamma")]
    pub kernel_gamma: f64,
    /// Weight of the calibration term; only for DCA, MDCA, MMCE and MMCE-W.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Weight of the `A = 1` sub-batch; only for group-wise losses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default)]
    pub groupwise: bool,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            alpha: DEFAULT_SMOOTHING,
            focal_gamma: DEFAULT_FOCAL_GAMMA,
            kernel_gamma: DEFAULT_KERNEL_GAMMA,
            lambda: None,
            rho: None,
            groupwise: false,
        }
    }

    pub fn nll() -> Self {
        Self::new(LossKind::Nll)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn grouped(mut self, rho: f64) -> Self {
        self.groupwise = true;
        self.rho = Some(rho);
        self
    }

    /// Short technique name: the loss kind, `_g` suffixed when group-wise.
    pub fn technique(&self) -> String {
        if self.groupwise {
            format!("{}_g", self.kind)
        } else {
            self.kind.to_string()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1)", self.alpha));
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return bad(format!(
                "focal_gamma {} must be non-negative",
                self.focal_gamma
            ));
        }
        if !(self.kernel_gamma > 0.0 && self.kernel_gamma.is_finite()) {
            return bad(format!(
                "kernel_gamma {} must be positive",
                self.kernel_gamma
            ));
        }
        match (self.kind.uses_lambda(), self.lambda) {
            (true, None) => return bad(format!("{} requires lambda", self.kind)),
            (true, Some(l)) if !(l >= 0.0 && l.is_finite()) => {
                return bad(format!("lambda {l} must be >= 0"))
            }
            (false, Some(_)) => return bad(format!("lambda does not apply to {}", self.kind)),
            _ => {}
        }
        match (self.groupwise, self.rho) {
            (true, None) => return bad("group-wise loss requires rho".into()),
            (true, Some(r)) if !(0.0..=1.0).contains(&r) => {
                return bad(format!("rho {r} outside [0, 1]"))
            }
            (false, Some(_)) => return bad("rho only applies to group-wise losses".into()),
            _ => {}
        }
        Ok(())
    }
}

/// The ungrouped base loss of `kind` (without any NLL anchor).
pub fn base_loss(tape: &mut Tape, spec: &LossSpec, logits: Var, labels: &[usize]) -> Result<Var> {
    match spec.kind {
        LossKind::Nll => nll(tape, logits, labels),
        LossKind::Ls => label_smoothing(tape, logits, labels, spec.alpha),
        LossKind::Fl => focal(tape, logits, labels, spec.focal_gamma),
        LossKind::Flsd => focal_sd(tape, logits, labels),
        LossKind::Dca => dca(tape, logits, labels),
        LossKind::Mdca => mdca(tape, logits, labels),
        LossKind::Mmce => mmce(tape, logits, labels, spec.kernel_gamma),
        LossKind::MmceW => mmce_w(tape, logits, labels, spec.kernel_gamma),
    }
}

/// `(1 - rho) L(B0) + rho L(B1)` for a per-sample loss. An empty sub-batch
/// contributes zero; the other keeps its weight.
pub fn groupwise_linear(
    tape: &mut Tape,
    spec: &LossSpec,
    logits: Var,
    labels: &[usize],
    groups: &[u8],
    rho: f64,
) -> Result<Var> {
    if spec.kind.is_pairwise() {
        return Err(Error::InvalidArgument(format!(
            "{} is pair-wise; use groupwise_pairwise",
            spec.kind
        )));
    }
    if groups.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} groups for {} labels",
            groups.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("both sub-batches are empty".into()));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho {rho} outside [0, 1]")));
    }
    if let Some(&a) = groups.iter().find(|&&a| a > 1) {
        return Err(Error::InvalidArgument(format!(
            "group value {a} is not binary"
        )));
    }
    let weights = [1.0 - rho, rho];
    let mut total: Option<Var> = None;
    for (part, weight) in partition(groups).iter().zip(weights) {
        if part.is_empty() {
            continue;
        }
        let sub = tape.select_rows(logits, part)?;
        let sub_labels: Vec<usize> = part.iter().map(|&i| labels[i]).collect();
        let loss = base_loss(tape, spec, sub, &sub_labels)?;
        let term = tape.scale(loss, weight);
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one non-empty sub-batch"))
}

/// The calibration term `L` or `L_g` selected by `spec`.
pub fn calibration_term(
    tape: &mut Tape,
    spec: &LossSpec,
    logits: Var,
    labels: &[usize],
    groups: &[u8],
) -> Result<Var> {
    if !spec.groupwise {
        return base_loss(tape, spec, logits, labels);
    }
    let rho = spec
        .rho
        .ok_or_else(|| Error::Config("group-wise loss requires rho".into()))?;
    match spec.kind {
        LossKind::Mmce => groupwise_pairwise(
            tape,
            PairwiseBase::Mmce,
            logits,
            labels,
            groups,
            rho,
            spec.kernel_gamma,
        ),
        LossKind::MmceW => groupwise_pairwise(
            tape,
            PairwiseBase::MmceW,
            logits,
            labels,
            groups,
            rho,
            spec.kernel_gamma,
        ),
        _ => groupwise_linear(tape, spec, logits, labels, groups, rho),
    }
}

/// Full training objective.
///
/// NLL, LS, FL and FLSD replace cross-entropy outright (group-wise or not);
/// DCA, MDCA, MMCE and MMCE-W are added to it as `NLL + lambda * L`.
pub fn total_loss(
    tape: &mut Tape,
    spec: &LossSpec,
    logits: Var,
    labels: &[usize],
    groups: &[u8],
) -> Result<Var> {
    spec.validate()?;
    if !spec.kind.uses_lambda() {
        return calibration_term(tape, spec, logits, labels, groups);
    }
    let lambda = spec.lambda.expect("validated");
    let ce = nll(tape, logits, labels)?;
    if lambda == 0.0 {
        return Ok(ce);
    }
    let term = calibration_term(tape, spec, logits, labels, groups)?;
    let weighted = tape.scale(term, lambda);
    tape.add(ce, weighted)
}

/// Value of [`total_loss`] on fixed logits, without keeping the tape.
pub fn total_loss_value(
    spec: &LossSpec,
    logits: &Tensor2,
    labels: &[usize],
    groups: &[u8],
) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.leaf(logits.clone());
    let out = total_loss(&mut tape, spec, z, labels, groups)?;
    Ok(tape.value(out).item())
}
