use super::config::GanConfig;
use crate::error::Result;
use crate::nn::{Activation, LayerSpec, ModelSpec};

/// Generator and discriminator of the unconditional DCGAN.
///
/// The generator lifts `[noise_dim, 1, 1]` to 4×4 with a stride-1
/// transposed convolution, then doubles the resolution per stride-2 block
/// (`conv_transpose → batchnorm → LeakyReLU`) and ends in `tanh`.
pub fn build_dcgan(cfg: &GanConfig) -> Result<(ModelSpec, ModelSpec)> {
    cfg.validate()?;
    let k = cfg.doublings()?;
    let f = cfg.base_feature_maps;
    let mut g = Vec::new();
    let mut ch = f << (k - 1);
    g.push(LayerSpec::conv_transpose(ch, 4, 1, 0));
    g.push(LayerSpec::BatchNorm);
    g.push(LayerSpec::leaky_relu());
    for _ in 1..k {
        ch /= 2;
        g.push(LayerSpec::conv_transpose(ch, 4, 2, 1));
        g.push(LayerSpec::BatchNorm);
        g.push(LayerSpec::leaky_relu());
    }
    g.push(LayerSpec::conv_transpose(cfg.channels, 4, 2, 1));
    g.push(LayerSpec::Activation(Activation::Tanh));
    let generator = ModelSpec::new(vec![cfg.noise_dim, 1, 1], g)?;
    Ok((generator, build_discriminator(cfg)?))
}

/// Stride-2 conv blocks down to 4×4 (no batch norm on the first), then a
/// 4×4 conv to one logit and a sigmoid. Output `[N, 1]`.
pub fn build_discriminator(cfg: &GanConfig) -> Result<ModelSpec> {
    let k = cfg.doublings()?;
    let f = cfg.base_feature_maps;
    let mut d = Vec::new();
    for i in 0..k {
        d.push(LayerSpec::conv(f << i, 4, 2, 1));
        if i > 0 {
            d.push(LayerSpec::BatchNorm);
        }
        d.push(LayerSpec::leaky_relu());
    }
    d.push(LayerSpec::conv(1, 4, 1, 0));
    d.push(LayerSpec::Flatten);
    d.push(LayerSpec::Activation(Activation::Sigmoid));
    ModelSpec::new(vec![cfg.channels, cfg.image_size, cfg.image_size], d)
}

/// Fully convolutional same-size generator for enhancement. Input is the
/// nearest-neighbour-upsampled low-resolution image in `[-1, 1]` plus one
/// noise channel; output is the enhanced image in `(-1, 1)`.
pub fn build_enhancer(cfg: &GanConfig) -> Result<(ModelSpec, ModelSpec)> {
    cfg.validate()?;
    let f = cfg.base_feature_maps;
    let mut g = vec![LayerSpec::conv(f, 3, 1, 1).with_bias(), LayerSpec::leaky_relu()];
    for _ in 2..cfg.enhancer_depth {
        g.push(LayerSpec::conv(f, 3, 1, 1));
        g.push(LayerSpec::BatchNorm);
        g.push(LayerSpec::leaky_relu());
    }
    // The closing tanh is applied after the skip connection.
    g.push(LayerSpec::conv(cfg.channels, 3, 1, 1).with_bias());
    let s = cfg.image_size;
    let generator = ModelSpec::new(vec![cfg.channels + 1, s, s], g)?;
    Ok((generator, build_discriminator(cfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shapes() {
        let cfg = GanConfig::default();
        let (g, d) = build_dcgan(&cfg).unwrap();
        assert_eq!(g.output_shape(5).unwrap(), vec![5, 3, 32, 32]);
        assert_eq!(d.output_shape(5).unwrap(), vec![5, 1]);
        let (e, _) = build_enhancer(&cfg).unwrap();
        assert_eq!(e.output_shape(2).unwrap(), vec![2, 3, 32, 32]);
    }

    #[test]
    fn eight_pixel_gan() {
        let cfg = GanConfig {
            image_size: 8,
            base_feature_maps: 4,
            ..GanConfig::default()
        };
        let (g, d) = build_dcgan(&cfg).unwrap();
        assert_eq!(g.output_shape(1).unwrap(), vec![1, 3, 8, 8]);
        assert_eq!(d.output_shape(1).unwrap(), vec![1, 1]);
    }
}
