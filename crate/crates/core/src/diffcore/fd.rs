use super::mlp::ModelParams;
use crate::error::{Error, Result};

/// Central-difference gradient of `loss_fn` at `params`, one coordinate at a
/// time. Used as an independent check on reverse-mode gradients.
pub fn finite_diff_grad<F>(loss_fn: F, params: &ModelParams, h: f64) -> Result<ModelParams>
where
    F: Fn(&ModelParams) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step {h} must be positive")));
    }
    let mut probe = params.clone();
    let mut out = params.zeros_like();
    let n_tensors = params.tensors().count();
    for t in 0..n_tensors {
        let len = params.tensors().nth(t).map_or(0, |x| x.data().len());
        for i in 0..len {
            let orig = params.tensors().nth(t).expect("index in range").data()[i];
            set(&mut probe, t, i, orig + h);
            let up = loss_fn(&probe)?;
            set(&mut probe, t, i, orig - h);
            let down = loss_fn(&probe)?;
            set(&mut probe, t, i, orig);
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while perturbing tensor {t} entry {i}"
                )));
            }
            out.tensors_mut().nth(t).expect("index in range").data_mut()[i] =
                (up - down) / (2.0 * h);
        }
    }
    Ok(out)
}

fn set(params: &mut ModelParams, tensor: usize, index: usize, value: f64) {
    params
        .tensors_mut()
        .nth(tensor)
        .expect("index in range")
        .data_mut()[index] = value;
}

/// Largest relative error `|a - b| / max(|a|, |b|, floor)` across all entries.
pub fn max_relative_error(a: &ModelParams, b: &ModelParams, floor: f64) -> f64 {
    a.tensors()
        .zip(b.tensors())
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(&u, &v)| (u - v).abs() / u.abs().max(v.abs()).max(floor))
        .fold(0.0, f64::max)
}
