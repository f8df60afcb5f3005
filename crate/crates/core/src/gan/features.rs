use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{run_generator, GanMode, GanModel};
use super::train::{enhancer_input, to_signed, to_unit};
use crate::error::{Error, Result};
use crate::nn::{forward_taps, LayerSpec, Mode};
use crate::tensor_core::{Tape, Tensor};

/// Spatial size every discriminator activation is pooled to.
pub const PROBE_GRID: usize = 4;

/// Enhances `[N,C,h,w]` low-resolution images in `[0,1]` to
/// `[N,C,h·f,w·f]` in `[0,1]`. The generator's noise channel is drawn from
/// `seed`, so equal inputs and seeds give equal outputs.
pub fn enhance(model: &GanModel, low_res: &Tensor, seed: u64) -> Result<Tensor> {
    if model.mode != GanMode::Enhancer {
        return Err(Error::Checkpoint(
            "enhance needs a generator trained in enhancement mode".into(),
        ));
    }
    let [_, c, h, w] = low_res.dims4()?;
    let f = model.cfg.upscale_factor;
    let s = model.cfg.image_size;
    if c != model.cfg.channels || h * f != s || w * f != s {
        return Err(Error::Dimension(format!(
            "generator maps {0}x{1}x{1} inputs to {2}x{2}, got {c}x{h}x{w}",
            model.cfg.channels,
            s / f,
            s
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = enhancer_input(low_res, f, model.cfg.noise, &mut rng)?;
    let mut g = model.generator.clone();
    let mut tape = Tape::new();
    let bound = g.bind_constant(&mut tape);
    let y = run_generator(model, &mut g, &bound, &mut tape, &input, Mode::Eval)?;
    Ok(to_unit(tape.value(y)).map(|v| v.clamp(0.0, 1.0)))
}

/// Indices of the activation outputs following every discriminator conv
/// except the final one-logit conv.
fn hidden_taps(layers: &[LayerSpec]) -> Vec<usize> {
    let convs: Vec<usize> = layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
        .map(|(i, _)| i)
        .collect();
    convs[..convs.len().saturating_sub(1)]
        .iter()
        .filter_map(|&c| {
            (c + 1..layers.len()).find(|&j| matches!(layers[j], LayerSpec::Activation(_)))
        })
        .collect()
}

/// Discriminator features for `[N,3,32,32]` images in `[0,1]`: each hidden
/// conv activation max-pooled to 4×4, flattened and concatenated. Length
/// per image is `16 · Σ channels`.
pub fn extract_features_batch(model: &GanModel, images: &Tensor) -> Result<Vec<Vec<f32>>> {
    let [n, c, h, w] = images.dims4()?;
    if c != 3 || h != 32 || w != 32 || model.cfg.image_size != 32 {
        return Err(Error::Dimension(format!(
            "feature extraction needs [N,3,32,32] images and a 32-pixel discriminator, got {:?}",
            images.shape()
        )));
    }
    let mut d = model.discriminator.clone();
    let mut tape = Tape::new();
    let bound = d.bind_constant(&mut tape);
    let x = tape.constant(to_signed(images));
    let taps = forward_taps(&model.d_spec, &mut d, &bound, &mut tape, x, Mode::Eval)?;
    let mut pooled = Vec::new();
    for i in hidden_taps(&model.d_spec.layers) {
        let t = taps[i];
        let k = tape.shape(t)[2] / PROBE_GRID;
        let p = if k > 1 { tape.maxpool2d(t, k, k)? } else { t };
        pooled.push(tape.value(p).clone());
    }
    Ok((0..n)
        .map(|s| {
            pooled
                .iter()
                .flat_map(|p| {
                    let per = p.len() / n;
                    p.data()[s * per..(s + 1) * per].iter().copied()
                })
                .collect()
        })
        .collect())
}

/// [`extract_features_batch`] for a single `[3,32,32]` image.
pub fn extract_features(model: &GanModel, image: &Tensor) -> Result<Vec<f32>> {
    if image.shape() != [3, 32, 32] {
        return Err(Error::Dimension(format!(
            "feature extraction needs a [3,32,32] image, got {:?}",
            image.shape()
        )));
    }
    let batch = image.clone().reshape(vec![1, 3, 32, 32])?;
    Ok(extract_features_batch(model, &batch)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::GanConfig;

    #[test]
    fn feature_length_formula() {
        let cfg = GanConfig::default();
        let m = GanModel::init(&cfg, GanMode::Unconditional, 0).unwrap();
        assert_eq!(hidden_taps(&m.d_spec.layers).len(), 3);
        let img = Tensor::full(vec![3, 32, 32], 0.3);
        let f = extract_features(&m, &img).unwrap();
        assert_eq!(f.len(), 16 * (64 + 128 + 256));
        assert_eq!(f, extract_features(&m, &img).unwrap());
    }

    #[test]
    fn batch_matches_single() {
        let cfg = GanConfig {
            base_feature_maps: 4,
            ..GanConfig::default()
        };
        let m = GanModel::init(&cfg, GanMode::Unconditional, 0).unwrap();
        let imgs = Tensor::from_fn(vec![2, 3, 32, 32], |i| (i % 13) as f32 / 13.0);
        let batch = extract_features_batch(&m, &imgs).unwrap();
        let single = extract_features(&m, &imgs.sample(1).unwrap()).unwrap();
        for (a, b) in batch[1].iter().zip(&single) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(extract_features(&m, &Tensor::zeros(vec![3, 16, 16])).is_err());
    }

    #[test]
    fn enhance_shapes_and_range() {
        for factor in [2, 4] {
            let cfg = GanConfig {
                base_feature_maps: 4,
                upscale_factor: factor,
                ..GanConfig::default()
            };
            let m = GanModel::init(&cfg, GanMode::Enhancer, 0).unwrap();
            let lr = Tensor::full(vec![2, 3, 32 / factor, 32 / factor], 0.5);
            let hr = enhance(&m, &lr, 1).unwrap();
            assert_eq!(hr.shape(), &[2, 3, 32, 32]);
            assert!(hr.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(hr, enhance(&m, &lr, 1).unwrap());
        }
    }

    #[test]
    fn enhance_rejects_unconditional_models() {
        let m = GanModel::init(&GanConfig::default(), GanMode::Unconditional, 0).unwrap();
        assert!(matches!(
            enhance(&m, &Tensor::zeros(vec![1, 3, 8, 8]), 0),
            Err(Error::Checkpoint(_))
        ));
    }
}
