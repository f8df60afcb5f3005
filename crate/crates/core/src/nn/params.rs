use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor_core::{Gradients, Tape, Tensor, Var};

pub const INIT_STD: f32 = 0.02;

/// Ordered name → tensor map, the unit of checkpointing.
pub type NamedTensors = IndexMap<String, Tensor>;

/// Role of a stored tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Batch-norm running statistics, updated during training-mode forwards.
    RunningStat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub tensor: Tensor,
    pub kind: ParamKind,
    pub frozen: bool,
}

/// Named parameters of one network, in layer order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: IndexMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, kind: ParamKind) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(
            name,
            Param {
                tensor,
                kind,
                frozen: false,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub(crate) fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Freezes or unfreezes every entry.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.entries.values_mut().for_each(|p| p.frozen = frozen);
    }

    pub fn is_frozen(&self) -> bool {
        self.entries.values().all(|p| p.frozen)
    }

    /// Records every trainable tensor as a tape leaf. Frozen entries become
    /// constants and never receive gradients.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .entries
            .iter()
            .filter(|(_, p)| p.kind == ParamKind::Trainable)
            .map(|(name, p)| (name.clone(), tape.leaf(p.tensor.clone(), !p.frozen)))
            .collect();
        Bound { vars }
    }

    /// Same as [`ParamSet::bind`] but with every entry recorded as a constant.
    pub fn bind_constant(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .entries
            .iter()
            .filter(|(_, p)| p.kind == ParamKind::Trainable)
            .map(|(name, p)| (name.clone(), tape.constant(p.tensor.clone())))
            .collect();
        Bound { vars }
    }

    /// Flattened `(name, tensor)` list with an optional name prefix.
    pub fn to_named(&self, prefix: &str) -> NamedTensors {
        self.entries
            .iter()
            .map(|(k, p)| (format!("{prefix}{k}"), p.tensor.clone()))
            .collect()
    }

    /// Overwrites every entry from a named list. Names and shapes must match
    /// exactly; on failure nothing is modified.
    pub fn load_named(&mut self, named: &NamedTensors, prefix: &str) -> Result<()> {
        let mut staged = Vec::with_capacity(self.entries.len());
        for (name, param) in &self.entries {
            let full = format!("{prefix}{name}");
            let t = named
                .get(&full)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no tensor {full}")))?;
            if t.shape() != param.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {full} has shape {:?}, model expects {:?}",
                    t.shape(),
                    param.tensor.shape()
                )));
            }
            staged.push(t.clone());
        }
        let expected = named.iter().filter(|(n, _)| n.starts_with(prefix)).count();
        if expected != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {expected} tensors under '{prefix}', model has {}",
                self.entries.len()
            )));
        }
        for (param, t) in self.entries.values_mut().zip(staged) {
            param.tensor = t;
        }
        Ok(())
    }
}

/// Tape handles for the trainable entries of a [`ParamSet`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {name} not bound")))
    }

    /// Gradients by parameter name, for every entry that received one.
    pub fn gradients(&self, grads: &Gradients) -> IndexMap<String, Tensor> {
        self.vars
            .iter()
            .filter_map(|(name, v)| grads.get(*v).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

/// Weight shape of a parameterised layer given its input shape.
fn weight_shape(layer: &LayerSpec, input: &[usize]) -> Option<(Vec<usize>, usize)> {
    match *layer {
        LayerSpec::Conv {
            out_channels,
            kernel,
            ..
        } => Some((vec![out_channels, input[1], kernel, kernel], out_channels)),
        LayerSpec::ConvTranspose {
            out_channels,
            kernel,
            ..
        } => Some((vec![input[1], out_channels, kernel, kernel], out_channels)),
        LayerSpec::Dense { out_features, .. } => Some((vec![input[1], out_features], out_features)),
        _ => None,
    }
}

fn has_bias(layer: &LayerSpec) -> bool {
    matches!(
        layer,
        LayerSpec::Conv { bias: true, .. }
            | LayerSpec::ConvTranspose { bias: true, .. }
            | LayerSpec::Dense { bias: true, .. }
    )
}

/// Weights ~ N(0, 0.02), biases 0, batch-norm scale 1 and shift 0.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamSet> {
    let shapes = spec.propagate_shapes(1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, INIT_STD).expect("valid normal");
    let mut params = ParamSet::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        let input = &shapes[i];
        if let Some((shape, out)) = weight_shape(layer, input) {
            let w = Tensor::from_fn(shape, |_| normal.sample(&mut rng));
            params.insert(format!("{i}.weight"), w, ParamKind::Trainable)?;
            if has_bias(layer) {
                params.insert(format!("{i}.bias"), Tensor::zeros(vec![out]), ParamKind::Trainable)?;
            }
        }
        if let LayerSpec::BatchNorm = layer {
            let c = input[1];
            params.insert(format!("{i}.gamma"), Tensor::ones(vec![c]), ParamKind::Trainable)?;
            params.insert(format!("{i}.beta"), Tensor::zeros(vec![c]), ParamKind::Trainable)?;
            params.insert(format!("{i}.running_mean"), Tensor::zeros(vec![c]), ParamKind::RunningStat)?;
            params.insert(format!("{i}.running_var"), Tensor::ones(vec![c]), ParamKind::RunningStat)?;
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn spec() -> ModelSpec {
        ModelSpec::new(
            vec![3, 8, 8],
            vec![
                LayerSpec::conv(4, 3, 1, 1).with_bias(),
                LayerSpec::BatchNorm,
                LayerSpec::leaky_relu(),
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    out_features: 2,
                    bias: true,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&spec(), 7).unwrap();
        let b = init_params(&spec(), 7).unwrap();
        let c = init_params(&spec(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn biases_start_at_zero_and_bn_at_identity() {
        let p = init_params(&spec(), 1).unwrap();
        for (name, param) in p.iter() {
            if name.ends_with(".bias") || name.ends_with(".beta") || name.ends_with("running_mean") {
                assert!(param.tensor.data().iter().all(|&v| v == 0.0), "{name}");
            }
            if name.ends_with(".gamma") || name.ends_with("running_var") {
                assert!(param.tensor.data().iter().all(|&v| v == 1.0), "{name}");
            }
        }
        assert_eq!(p.tensor("0.weight").unwrap().shape(), &[4, 3, 3, 3]);
        assert_eq!(p.tensor("4.weight").unwrap().shape(), &[256, 2]);
    }

    #[test]
    fn load_named_checks_shapes() {
        let mut p = init_params(&spec(), 1).unwrap();
        let mut named = p.to_named("d.");
        assert!(p.load_named(&named, "d.").is_ok());
        named[0] = Tensor::zeros(vec![1]);
        let before = p.clone();
        assert!(matches!(p.load_named(&named, "d."), Err(Error::Checkpoint(_))));
        assert_eq!(p, before);
    }
}
