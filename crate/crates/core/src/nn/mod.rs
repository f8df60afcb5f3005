//! Sequential layer composition, parameter initialization and Adam.

mod adam;
mod forward;
mod params;
mod spec;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use forward::{forward, forward_taps, Mode, BN_MOMENTUM};
pub use params::{init_params, Bound, Param, ParamKind, ParamSet, NamedTensors, INIT_STD};
pub use spec::{Activation, LayerSpec, ModelSpec};
