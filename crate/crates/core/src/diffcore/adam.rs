use serde::{Deserialize, Serialize};

use super::mlp::ModelParams;
use crate::error::{Error, Result};

/// Adam hyperparameters; only the learning rate is fixed by the training
/// protocol, the rest are the usual defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be positive",
                config.learning_rate
            )));
        }
        Ok(Self {
            config,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        })
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.first_moment) {
        return Err(Error::Shape(
            "parameters, gradients and optimizer state disagree".into(),
        ));
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let iter = params.tensors_mut().zip(grads.tensors()).zip(
        state
            .first_moment
            .tensors_mut()
            .zip(state.second_moment.tensors_mut()),
    );
    for ((p, g), (m, v)) in iter {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
