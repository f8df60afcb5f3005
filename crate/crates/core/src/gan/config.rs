use crate::error::{Error, Result};
use crate::nn::AdamConfig;

/// Distribution of the generator's noise input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    /// `U(0, 1)`.
    Uniform,
    /// `N(0, 1)`.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub image_size: usize,
    pub channels: usize,
    pub base_feature_maps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub upscale_factor: usize,
    pub noise: NoiseKind,
    /// Weight of the reconstruction term in enhancement mode.
    pub reconstruction_weight: f32,
    /// Number of 3×3 convolutions in the enhancement generator.
    pub enhancer_depth: usize,
    pub adam: AdamConfig,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            noise_dim: 100,
            image_size: 32,
            channels: 3,
            base_feature_maps: 64,
            epochs: 25,
            batch_size: 72,
            upscale_factor: 4,
            noise: NoiseKind::Uniform,
            reconstruction_weight: 10.0,
            enhancer_depth: 8,
            adam: AdamConfig::default(),
        }
    }
}

impl GanConfig {
    /// Number of stride-2 stages between 4×4 and the image size.
    pub(crate) fn doublings(&self) -> Result<usize> {
        let s = self.image_size;
        if s < 8 || !s.is_power_of_two() {
            return Err(Error::Build(format!(
                "image size {s} must be a power of two of at least 8 (4·2^k)"
            )));
        }
        Ok(s.trailing_zeros() as usize - 2)
    }

    pub fn validate(&self) -> Result<()> {
        self.doublings()?;
        if !matches!(self.upscale_factor, 2 | 4) {
            return Err(Error::Config(format!(
                "upscale factor {} must be 2 or 4",
                self.upscale_factor
            )));
        }
        if self.noise_dim == 0 || self.channels == 0 || self.base_feature_maps == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "noise_dim, channels, base_feature_maps and batch_size must be positive".into(),
            ));
        }
        if self.enhancer_depth < 2 {
            return Err(Error::Config("enhancer depth must be at least 2".into()));
        }
        if !(self.reconstruction_weight >= 0.0) {
            return Err(Error::Config("reconstruction weight must be non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = GanConfig::default();
        c.validate().unwrap();
        assert_eq!(c.doublings().unwrap(), 3);
    }

    #[test]
    fn bad_sizes_and_factors() {
        let bad = GanConfig {
            image_size: 24,
            ..GanConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Build(_))));
        let bad = GanConfig {
            upscale_factor: 3,
            ..GanConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
