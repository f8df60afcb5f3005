use super::params::{Bound, ParamSet};
use super::spec::{Activation, LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor_core::{NormMode, Tape, Var};

/// Running-statistics momentum of batch norm.
pub const BN_MOMENTUM: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running estimates updated.
    Train,
    /// Running estimates, no state changes.
    Eval,
}

/// Runs `spec` on `input`, returning the network output.
pub fn forward(
    spec: &ModelSpec,
    params: &mut ParamSet,
    bound: &Bound,
    tape: &mut Tape,
    input: Var,
    mode: Mode,
) -> Result<Var> {
    Ok(*forward_taps(spec, params, bound, tape, input, mode)?
        .last()
        .unwrap_or(&input))
}

/// Runs `spec` on `input`, returning the output of every layer in order.
pub fn forward_taps(
    spec: &ModelSpec,
    params: &mut ParamSet,
    bound: &Bound,
    tape: &mut Tape,
    input: Var,
    mode: Mode,
) -> Result<Vec<Var>> {
    let shape = tape.shape(input);
    if shape.len() != spec.input.len() + 1 || shape[1..] != spec.input[..] {
        return Err(Error::Dimension(format!(
            "model expects per-sample input {:?}, got batch {:?}",
            spec.input, shape
        )));
    }
    let mut x = input;
    let mut taps = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        let bias = |name: &str| -> Result<Option<Var>> {
            if bound_has(bound, name) {
                bound.var(name).map(Some)
            } else {
                Ok(None)
            }
        };
        x = match *layer {
            LayerSpec::Conv { stride, pad, .. } => {
                let w = bound.var(&format!("{i}.weight"))?;
                tape.conv2d(x, w, bias(&format!("{i}.bias"))?, stride, pad)?
            }
            LayerSpec::ConvTranspose { stride, pad, .. } => {
                let w = bound.var(&format!("{i}.weight"))?;
                tape.conv_transpose2d(x, w, bias(&format!("{i}.bias"))?, stride, pad)?
            }
            LayerSpec::BatchNorm => {
                let gamma = bound.var(&format!("{i}.gamma"))?;
                let beta = bound.var(&format!("{i}.beta"))?;
                let (mean_name, var_name) = (format!("{i}.running_mean"), format!("{i}.running_var"));
                match mode {
                    Mode::Train => {
                        let (y, stats) = tape.batchnorm(x, gamma, beta, NormMode::Train)?;
                        let stats = stats.expect("train mode returns statistics");
                        for (name, batch) in [(&mean_name, &stats.mean), (&var_name, &stats.var)] {
                            let running = params.tensor_mut(name)?;
                            for (r, b) in running.data_mut().iter_mut().zip(batch.data()) {
                                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                            }
                        }
                        y
                    }
                    Mode::Eval => {
                        let running_mean = params.tensor(&mean_name)?;
                        let running_var = params.tensor(&var_name)?;
                        tape.batchnorm(
                            x,
                            gamma,
                            beta,
                            NormMode::Eval {
                                running_mean,
                                running_var,
                            },
                        )?
                        .0
                    }
                }
            }
            LayerSpec::Activation(Activation::LeakyRelu(cfg)) => tape.leaky_relu(x, cfg),
            LayerSpec::Activation(Activation::Sigmoid) => tape.sigmoid(x),
            LayerSpec::Activation(Activation::Tanh) => tape.tanh(x),
            LayerSpec::MaxPool { kernel, stride } => tape.maxpool2d(x, kernel, stride)?,
            LayerSpec::Flatten => {
                let s = tape.shape(x);
                let flat = vec![s[0], s[1..].iter().product()];
                tape.reshape(x, flat)?
            }
            LayerSpec::Dense { .. } => {
                let w = bound.var(&format!("{i}.weight"))?;
                let y = tape.matmul(x, w)?;
                match bias(&format!("{i}.bias"))? {
                    Some(b) => tape.add_channel_bias(y, b)?,
                    None => y,
                }
            }
        };
        taps.push(x);
    }
    Ok(taps)
}

fn bound_has(bound: &Bound, name: &str) -> bool {
    bound.var(name).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;
    use crate::tensor_core::Tensor;

    fn spec() -> ModelSpec {
        ModelSpec::new(
            vec![2, 6, 6],
            vec![
                LayerSpec::conv(3, 3, 1, 1),
                LayerSpec::BatchNorm,
                LayerSpec::leaky_relu(),
                LayerSpec::MaxPool { kernel: 2, stride: 2 },
                LayerSpec::conv_transpose(2, 4, 2, 1).with_bias(),
                LayerSpec::Activation(Activation::Tanh),
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    out_features: 4,
                    bias: true,
                },
                LayerSpec::Activation(Activation::Sigmoid),
            ],
        )
        .unwrap()
    }

    fn input(n: usize) -> Tensor {
        Tensor::from_fn(vec![n, 2, 6, 6], |i| ((i * 31 % 17) as f32 - 8.0) / 8.0)
    }

    #[test]
    fn empty_spec_is_identity() {
        let spec = ModelSpec::new(vec![2, 6, 6], vec![]).unwrap();
        let mut params = init_params(&spec, 0).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(input(2));
        let y = forward(&spec, &mut params, &bound, &mut tape, x, Mode::Eval).unwrap();
        assert_eq!(tape.value(y), &input(2));
    }

    #[test]
    fn output_shape_matches_propagation() {
        let spec = spec();
        let mut params = init_params(&spec, 3).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(input(5));
        let taps = forward_taps(&spec, &mut params, &bound, &mut tape, x, Mode::Train).unwrap();
        let shapes = spec.propagate_shapes(5).unwrap();
        for (tap, shape) in taps.iter().zip(&shapes[1..]) {
            assert_eq!(tape.shape(*tap), &shape[..]);
        }
    }

    #[test]
    fn eval_is_pure_and_train_updates_stats() {
        let spec = spec();
        let mut params = init_params(&spec, 3).unwrap();
        let run = |params: &mut ParamSet, mode| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let x = tape.constant(input(3));
            let y = forward(&spec, params, &bound, &mut tape, x, mode).unwrap();
            tape.value(y).clone()
        };
        let before = params.clone();
        let a = run(&mut params, Mode::Eval);
        let b = run(&mut params, Mode::Eval);
        assert_eq!(a, b);
        assert_eq!(params, before);
        run(&mut params, Mode::Train);
        assert_ne!(params.tensor("1.running_mean").unwrap(), before.tensor("1.running_mean").unwrap());
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let spec = spec();
        let mut params = init_params(&spec, 3).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(vec![1, 3, 6, 6]));
        assert!(matches!(
            forward(&spec, &mut params, &bound, &mut tape, x, Mode::Eval),
            Err(Error::Dimension(_))
        ));
    }
}
