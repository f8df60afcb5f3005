//! Dense tensors with reverse-mode automatic differentiation.

pub mod conv;
mod gradcheck;
mod tape;
mod tensor;

pub use conv::{ConvAlgorithm, ConvGeometry};
pub use gradcheck::{grad_check, GradCheckReport, Probe, ScalarFn};
pub use tape::{
    ActivationConfig, BatchStats, Gradients, NormMode, Tape, Var, BATCHNORM_EPS, BCE_CLAMP,
};
pub use tensor::{upsample_nearest, Element, Tensor};
