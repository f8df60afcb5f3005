//! DCGAN construction, adversarial training, the enhancement path, and the
//! discriminator-feature linear probe.

mod build;
mod config;
mod features;
mod model;
mod probe;
mod train;

pub use build::{build_dcgan, build_discriminator, build_enhancer};
pub use config::{GanConfig, NoiseKind};
pub use features::{enhance, extract_features, extract_features_batch, PROBE_GRID};
pub use model::{GanMode, GanModel};
pub use probe::{linear_probe, LinearProbe, PROBE_HOLDOUT_STRIDE};
pub use train::{
    enhancer_input, gan_value, to_signed, to_unit, train_enhancer, train_gan, write_loss_csv, DiscriminatorReport,
    GanLossReport, GanTrainer, GeneratorReport,
};
