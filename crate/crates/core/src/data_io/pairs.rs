//! Low/high resolution training pairs.

use crate::detector::GroundTruth;
use crate::error::{Error, Result};
use crate::tensor_core::Tensor;

use super::synth::SyntheticScene;

/// A low-resolution input and the high-resolution image it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancerPair {
    /// `[3, H/f, W/f]` in `[0, 1]`.
    pub low_res: Tensor,
    /// `[3, H, W]` in `[0, 1]`.
    pub high_res: Tensor,
}

/// Box-filter downsample of a `[C, H, W]` image by `factor`.
pub fn downsample_box(image: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] => (c, h, w),
        ref s => return Err(Error::Dimension(format!("expected a [C,H,W] image, got {s:?}"))),
    };
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Input(format!(
            "downsample factor {factor} does not divide image size {h}x{w}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let d = image.data();
    let norm = 1.0 / (factor * factor) as f32;
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for y in oy * factor..(oy + 1) * factor {
                    let row = &d[(ch * h + y) * w + ox * factor..][..factor];
                    acc += row.iter().sum::<f32>();
                }
                out[(ch * oh + oy) * ow + ox] = acc * norm;
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Pairs a scene with its `factor`-times downsampled copy. Boxes are in
/// normalized coordinates and carry over unchanged.
pub fn make_pairs(scene: &SyntheticScene, factor: usize) -> Result<(EnhancerPair, Vec<GroundTruth>)> {
    let low_res = downsample_box(&scene.image, factor)?;
    Ok((
        EnhancerPair {
            low_res,
            high_res: scene.image.clone(),
        },
        scene.gts.clone(),
    ))
}
