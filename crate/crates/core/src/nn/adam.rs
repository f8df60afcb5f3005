use indexmap::IndexMap;

use super::params::{ParamKind, ParamSet};
use crate::error::{Error, Result};
use crate::tensor_core::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    /// The usual DCGAN settings.
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers and step count for one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    moments: IndexMap<String, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            moments: IndexMap::new(),
        }
    }
}

/// One bias-corrected Adam update of every trainable, unfrozen parameter.
///
/// Frozen parameters are left bitwise untouched. Every other trainable
/// parameter must have a gradient.
pub fn adam_step(params: &mut ParamSet, grads: &IndexMap<String, Tensor>, state: &mut AdamState) -> Result<()> {
    for (name, p) in params.iter() {
        if p.kind != ParamKind::Trainable || p.frozen {
            continue;
        }
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no gradient for unfrozen parameter {name}")))?;
        if g.shape() != p.tensor.shape() {
            return Err(Error::Dimension(format!(
                "gradient for {name} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.tensor.shape()
            )));
        }
    }

    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - (beta1 as f64).powi(t);
    let c2 = 1.0 - (beta2 as f64).powi(t);
    for (name, p) in params.iter_mut() {
        if p.kind != ParamKind::Trainable || p.frozen {
            continue;
        }
        let g = &grads[name];
        let (m, v) = state
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (Tensor::zeros(g.shape().to_vec()), Tensor::zeros(g.shape().to_vec())));
        for (((w, &gi), mi), vi) in p
            .tensor
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let mhat = *mi as f64 / c1;
            let vhat = *vi as f64 / c2;
            *w -= (lr as f64 * mhat / (vhat.sqrt() + eps as f64)) as f32;
        }
    }
    Ok(())
}
