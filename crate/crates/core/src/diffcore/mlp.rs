use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Hidden layer widths of the classifier.
pub const HIDDEN: [usize; 2] = [128, 64];

/// One affine layer: `x W + b`, with `W` stored as `in x out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

/// Weights of a `d -> 128 -> 64 -> K` ReLU perceptron.
///
/// The same type carries gradients and Adam moments, since all three share
/// the parameter shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<Dense>,
}

/// Parameter leaves registered on a tape by [`ModelParams::forward_on_tape`].
pub struct ParamVars {
    vars: Vec<(Var, Var)>,
}

impl ParamVars {
    /// Leaves in [`ModelParams::tensors`] order.
    pub fn leaves(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.iter().flat_map(|&(w, b)| [w, b])
    }

    pub fn gradients(&self, grads: &Gradients) -> ModelParams {
        ModelParams {
            layers: self
                .vars
                .iter()
                .map(|&(w, b)| Dense {
                    weight: grads.wrt(w),
                    bias: grads.wrt(b),
                })
                .collect(),
        }
    }
}

/// Glorot-uniform weights from a ChaCha8 stream seeded with `seed`; zero biases.
pub fn init_mlp(input_dim: usize, classes: usize, seed: u64) -> Result<ModelParams> {
    init_with_widths(input_dim, &HIDDEN, classes, seed)
}

/// As [`init_mlp`] with custom hidden widths (used by small gradient checks).
pub fn init_with_widths(
    input_dim: usize,
    hidden: &[usize],
    classes: usize,
    seed: u64,
) -> Result<ModelParams> {
    if input_dim == 0 {
        return Err(Error::InvalidArgument(
            "input dimension must be at least 1".into(),
        ));
    }
    if classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut widths = vec![input_dim];
    widths.extend_from_slice(hidden);
    widths.push(classes);
    let layers = widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            Dense {
                weight: Tensor2::from_vec(fan_in, fan_out, data).expect("sized by construction"),
                bias: Tensor2::zeros(1, fan_out),
            }
        })
        .collect();
    Ok(ModelParams { layers })
}

impl ModelParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|t| Tensor2::zeros(t.rows(), t.cols()))
    }

    pub fn map(&self, f: impl Fn(&Tensor2) -> Tensor2) -> Self {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: f(&l.weight),
                    bias: f(&l.bias),
                })
                .collect(),
        }
    }

    /// All parameter tensors in a fixed order (weight, bias per layer).
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor2> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor2> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(|t| t.data().len()).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .tensors()
                .zip(other.tensors())
                .all(|(a, b)| a.shape() == b.shape())
    }

    fn check_input(&self, x: &Tensor2) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits for a batch, without recording anything.
    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        self.check_input(x)?;
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.matmul(&layer.weight)?;
            let b = layer.bias.row(0);
            for r in 0..z.rows() {
                for (v, bv) in z.row_mut(r).iter_mut().zip(b) {
                    *v += bv;
                }
            }
            h = if i < last { z.map(|v| v.max(0.0)) } else { z };
        }
        Ok(h)
    }

    /// Records the forward pass on `tape`, returning the logits and the
    /// parameter leaves needed to read gradients back.
    pub fn forward_on_tape(&self, tape: &mut Tape, x: &Tensor2) -> Result<(Var, ParamVars)> {
        self.check_input(x)?;
        let mut h = tape.leaf(x.clone());
        let mut vars = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.leaf(layer.weight.clone());
            let b = tape.leaf(layer.bias.clone());
            vars.push((w, b));
            let z = tape.matmul(h, w)?;
            let z = tape.add_bias(z, b)?;
            h = if i < last { tape.relu(z) } else { z };
        }
        Ok((h, ParamVars { vars }))
    }

    /// Little-endian byte image of every parameter, for bit-identity checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.tensors()
            .flat_map(|t| t.data().iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }
}

/// Reverse-mode gradient of a scalar loss built from the model's logits.
///
/// `loss_fn` receives the tape, the logits variable and the parameter leaves,
/// and must return a scalar recorded on the same tape.
pub fn grad<F>(params: &ModelParams, x: &Tensor2, loss_fn: F) -> Result<(f64, ModelParams)>
where
    F: FnOnce(&mut Tape, Var, &ParamVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let (logits, vars) = params.forward_on_tape(&mut tape, x)?;
    let loss = loss_fn(&mut tape, logits, &vars)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss evaluated to {value}")));
    }
    let grads = tape.backward(loss)?;
    Ok((value, vars.gradients(&grads)))
}
