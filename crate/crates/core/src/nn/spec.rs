use std::fmt;

use crate::error::{Error, Result};
use crate::tensor_core::conv::ConvGeometry;
use crate::tensor_core::ActivationConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(ActivationConfig),
    Sigmoid,
    Tanh,
}

/// One layer of a sequential network.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    },
    ConvTranspose {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    },
    BatchNorm,
    Activation(Activation),
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        out_features: usize,
        bias: bool,
    },
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            pad,
            bias: false,
        }
    }

    pub fn conv_transpose(out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        LayerSpec::ConvTranspose {
            out_channels,
            kernel,
            stride,
            pad,
            bias: false,
        }
    }

    pub fn leaky_relu() -> Self {
        LayerSpec::Activation(Activation::LeakyRelu(ActivationConfig::default()))
    }

    pub fn with_bias(self) -> Self {
        match self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                pad,
                ..
            } => LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                pad,
                bias: true,
            },
            LayerSpec::ConvTranspose {
                out_channels,
                kernel,
                stride,
                pad,
                ..
            } => LayerSpec::ConvTranspose {
                out_channels,
                kernel,
                stride,
                pad,
                bias: true,
            },
            LayerSpec::Dense { out_features, .. } => LayerSpec::Dense {
                out_features,
                bias: true,
            },
            other => other,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::ConvTranspose { .. } => "conv_transpose",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::Activation(_) => "activation",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    /// Output shape (batch dimension included) for the given input shape.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        let spatial = |what: &str| -> std::result::Result<[usize; 4], String> {
            match input {
                &[n, c, h, w] => Ok([n, c, h, w]),
                _ => Err(format!("{what} needs an [N,C,H,W] input, got {input:?}")),
            }
        };
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                pad,
                ..
            } => {
                let [n, _, h, w] = spatial("conv")?;
                let g = ConvGeometry {
                    kernel_h: kernel,
                    kernel_w: kernel,
                    stride,
                    pad,
                };
                let oh = g.conv_out(h, kernel).map_err(|e| e.to_string())?;
                let ow = g.conv_out(w, kernel).map_err(|e| e.to_string())?;
                Ok(vec![n, out_channels, oh, ow])
            }
            LayerSpec::ConvTranspose {
                out_channels,
                kernel,
                stride,
                pad,
                ..
            } => {
                let [n, _, h, w] = spatial("conv_transpose")?;
                let g = ConvGeometry {
                    kernel_h: kernel,
                    kernel_w: kernel,
                    stride,
                    pad,
                };
                let oh = g.transpose_out(h, kernel).map_err(|e| e.to_string())?;
                let ow = g.transpose_out(w, kernel).map_err(|e| e.to_string())?;
                Ok(vec![n, out_channels, oh, ow])
            }
            LayerSpec::BatchNorm | LayerSpec::Activation(_) => {
                if input.len() < 2 && matches!(self, LayerSpec::BatchNorm) {
                    return Err(format!("batchnorm needs [N,C,...], got {input:?}"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::MaxPool { kernel, stride } => {
                let [n, c, h, w] = spatial("maxpool")?;
                if kernel == 0 || stride == 0 || kernel > h || kernel > w {
                    return Err(format!("maxpool kernel {kernel} stride {stride} invalid for {input:?}"));
                }
                Ok(vec![n, c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            LayerSpec::Flatten => {
                if input.is_empty() {
                    return Err("flatten of a rank-0 input".into());
                }
                Ok(vec![input[0], input[1..].iter().product()])
            }
            LayerSpec::Dense { out_features, .. } => match input {
                &[n, _] => Ok(vec![n, out_features]),
                _ => Err(format!("dense needs an [N,F] input, got {input:?}")),
            },
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind())
    }
}

/// A sequential network over per-sample inputs of shape `input`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Builds a spec, rejecting layer sequences whose shapes do not compose.
    pub fn new(input: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = ModelSpec { input, layers };
        spec.propagate_shapes(1)?;
        Ok(spec)
    }

    /// Shapes after every layer for a batch of `batch` samples; element 0
    /// is the input shape.
    pub fn propagate_shapes(&self, batch: usize) -> Result<Vec<Vec<usize>>> {
        let mut shape = vec![batch];
        shape.extend_from_slice(&self.input);
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Build(format!("input shape {:?} has a zero dimension", self.input)));
        }
        let mut shapes = vec![shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::Build(format!("layer {i} ({layer}): {e}")))?;
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    pub fn output_shape(&self, batch: usize) -> Result<Vec<usize>> {
        Ok(self.propagate_shapes(batch)?.pop().unwrap())
    }
}
