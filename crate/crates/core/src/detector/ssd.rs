use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::boxes::{Detection, FeatureMapShape, GroundTruth};
use super::codec::decode_clamped;
use super::defaults::{generate_default_boxes_with_extra, DefaultBoxSet};
use super::loss::multibox_loss;
use super::matching::{match_boxes, Assignment};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, forward, forward_taps, init_params, AdamConfig, AdamState, Bound, LayerSpec, Mode, ModelSpec,
    NamedTensors, ParamSet,
};
use crate::tensor_core::{Tape, Tensor, Var};

pub const SSD_SCALES: [f32; 3] = [0.2, 0.4, 0.7];
pub const SSD_RATIOS: [f32; 3] = [1.0, 2.0, 0.5];
pub const SUPPORTED_IMAGE_SIZES: [usize; 2] = [32, 64];

/// Offsets per default box.
const BOX_CODE: usize = 4;

/// Architecture of the reduced detector: a sequential backbone whose
/// outputs at `taps` feed one 3×3 prediction conv each.
#[derive(Clone, Debug, PartialEq)]
pub struct SsdSpec {
    pub num_classes: usize,
    pub image_size: usize,
    pub backbone: ModelSpec,
    /// Backbone layer indices whose outputs are feature layers.
    pub taps: Vec<usize>,
    pub feature_shapes: Vec<FeatureMapShape>,
    pub heads: Vec<ModelSpec>,
    pub defaults: DefaultBoxSet,
}

impl SsdSpec {
    /// Channels per cell emitted by every head.
    pub fn head_channels(&self, k: usize) -> usize {
        k * (self.num_classes + 1 + BOX_CODE)
    }
}

fn block(layers: &mut Vec<LayerSpec>, out: usize, stride: usize) -> usize {
    layers.push(LayerSpec::conv(out, 3, stride, 1));
    layers.push(LayerSpec::BatchNorm);
    layers.push(LayerSpec::leaky_relu());
    layers.len() - 1
}

/// Builds the detector for `num_classes` object classes: a three-block
/// backbone, three stride-2 feature layers (8×8, 4×4, 2×2) and 4 default
/// boxes per cell.
pub fn build_ssd(num_classes: usize, image_size: usize) -> Result<SsdSpec> {
    build_ssd_with_width(num_classes, image_size, 16)
}

/// [`build_ssd`] with the first block's channel count given explicitly;
/// later blocks use 2× and 4× that.
pub fn build_ssd_with_width(num_classes: usize, image_size: usize, width: usize) -> Result<SsdSpec> {
    if !SUPPORTED_IMAGE_SIZES.contains(&image_size) {
        return Err(Error::Build(format!(
            "detector input size {image_size} unsupported, use one of {SUPPORTED_IMAGE_SIZES:?}"
        )));
    }
    if num_classes == 0 || width == 0 {
        return Err(Error::Build("detector needs at least one class and one channel".into()));
    }
    let first_stride = image_size / 32;
    let mut layers = Vec::new();
    block(&mut layers, width, first_stride);
    block(&mut layers, 2 * width, 2);
    block(&mut layers, 2 * width, 1);
    let taps: Vec<usize> = (0..3).map(|_| block(&mut layers, 4 * width, 2)).collect();
    let backbone = ModelSpec::new(vec![3, image_size, image_size], layers)?;

    let shapes = backbone.propagate_shapes(1)?;
    let feature_shapes: Vec<FeatureMapShape> = taps
        .iter()
        .map(|&t| {
            let s = &shapes[t + 1];
            FeatureMapShape {
                m: s[2],
                n: s[3],
                p: s[1],
            }
        })
        .collect();
    let defaults = generate_default_boxes_with_extra(&feature_shapes, &SSD_SCALES, &SSD_RATIOS);
    let heads = feature_shapes
        .iter()
        .zip(&defaults.layout)
        .map(|(f, l)| {
            ModelSpec::new(
                vec![f.p, f.m, f.n],
                vec![LayerSpec::conv(l.k * (num_classes + 1 + BOX_CODE), 3, 1, 1).with_bias()],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SsdSpec {
        num_classes,
        image_size,
        backbone,
        taps,
        feature_shapes,
        heads,
        defaults,
    })
}

/// Raw detector outputs on a tape.
pub struct SsdOutput {
    /// `[N, D, C+1]`, background first.
    pub logits: Var,
    /// `[N, D, 4]`.
    pub offsets: Var,
}

/// A detector spec with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Ssd {
    pub spec: SsdSpec,
    pub backbone: ParamSet,
    pub heads: Vec<ParamSet>,
}

struct SsdBound {
    backbone: Bound,
    heads: Vec<Bound>,
}

impl Ssd {
    pub fn init(spec: SsdSpec, seed: u64) -> Result<Self> {
        let backbone = init_params(&spec.backbone, seed)?;
        let heads = spec
            .heads
            .iter()
            .enumerate()
            .map(|(i, h)| init_params(h, seed.wrapping_add(1 + i as u64)))
            .collect::<Result<_>>()?;
        Ok(Ssd { spec, backbone, heads })
    }

    fn bind(&self, tape: &mut Tape) -> SsdBound {
        SsdBound {
            backbone: self.backbone.bind(tape),
            heads: self.heads.iter().map(|h| h.bind(tape)).collect(),
        }
    }

    fn run(&mut self, tape: &mut Tape, bound: &SsdBound, images: Var, mode: Mode) -> Result<SsdOutput> {
        let spec = &self.spec;
        let taps = forward_taps(&spec.backbone, &mut self.backbone, &bound.backbone, tape, images, mode)?;
        let n = tape.shape(images)[0];
        let width = spec.num_classes + 1 + BOX_CODE;
        let mut per_layer = Vec::with_capacity(spec.taps.len());
        for (l, &t) in spec.taps.iter().enumerate() {
            let raw = forward(&spec.heads[l], &mut self.heads[l], &bound.heads[l], tape, taps[t], mode)?;
            let nhwc = tape.channels_last(raw)?;
            let cells = {
                let lay = spec.defaults.layout[l];
                lay.m * lay.n * lay.k
            };
            per_layer.push(tape.reshape(nhwc, vec![n, cells, width])?);
        }
        let all = tape.concat(&per_layer, 1)?;
        Ok(SsdOutput {
            logits: tape.slice_last(all, 0, spec.num_classes + 1)?,
            offsets: tape.slice_last(all, spec.num_classes + 1, width)?,
        })
    }

    /// Inference forward pass; returns `(class probabilities [N,D,C+1],
    /// offsets [N,D,4])`.
    pub fn predict(&self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        let s = self.spec.image_size;
        if images.rank() != 4 || images.shape()[1..] != [3, s, s] {
            return Err(Error::Dimension(format!(
                "detector expects [N,3,{s},{s}] images, got {:?}",
                images.shape()
            )));
        }
        let mut model = self.clone();
        let mut tape = Tape::new();
        let bound = SsdBound {
            backbone: model.backbone.bind_constant(&mut tape),
            heads: model.heads.iter().map(|h| h.bind_constant(&mut tape)).collect(),
        };
        let x = tape.constant(images.clone());
        let out = model.run(&mut tape, &bound, x, Mode::Eval)?;
        let probs = tape.softmax(out.logits)?;
        Ok((tape.value(probs).clone(), tape.value(out.offsets).clone()))
    }

    pub fn to_named(&self) -> NamedTensors {
        let mut out = NamedTensors::new();
        out.insert("meta.num_classes".into(), Tensor::scalar(self.spec.num_classes as f32));
        out.insert("meta.image_size".into(), Tensor::scalar(self.spec.image_size as f32));
        out.insert(
            "meta.width".into(),
            Tensor::scalar(self.spec.backbone.layers.first().map_or(0, conv_width) as f32),
        );
        out.extend(self.backbone.to_named("backbone."));
        for (i, h) in self.heads.iter().enumerate() {
            out.extend(h.to_named(&format!("head{i}.")));
        }
        out
    }

    /// Rebuilds a detector from [`Ssd::to_named`] output.
    pub fn from_named(named: &NamedTensors) -> Result<Self> {
        let meta = |key: &str| -> Result<usize> {
            let v = named
                .get(key)
                .ok_or_else(|| Error::Checkpoint(format!("not a detector checkpoint: missing {key}")))?
                .item()?;
            Ok(v as usize)
        };
        let spec = build_ssd_with_width(meta("meta.num_classes")?, meta("meta.image_size")?, meta("meta.width")?)
            .map_err(|e| Error::Checkpoint(format!("detector checkpoint metadata: {e}")))?;
        let mut ssd = Ssd::init(spec, 0)?;
        ssd.backbone.load_named(named, "backbone.")?;
        for (i, h) in ssd.heads.iter_mut().enumerate() {
            h.load_named(named, &format!("head{i}."))?;
        }
        Ok(ssd)
    }
}

fn conv_width(layer: &LayerSpec) -> usize {
    match *layer {
        LayerSpec::Conv { out_channels, .. } => out_channels,
        _ => 0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub iou_threshold: f32,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            epochs: 20,
            batch_size: 32,
            adam: AdamConfig {
                lr: 2e-3,
                beta1: 0.9,
                ..AdamConfig::default()
            },
            iou_threshold: 0.5,
            seed: 0,
        }
    }
}

/// Trains `ssd` in place on `[3,H,W]` images with their ground truth.
/// Returns the mean loss of every epoch.
pub fn train_detector(
    ssd: &mut Ssd,
    images: &[Tensor],
    gts: &[Vec<GroundTruth>],
    cfg: &DetectorConfig,
) -> Result<Vec<f32>> {
    if images.is_empty() || images.len() != gts.len() {
        return Err(Error::Input(format!(
            "need a non-empty image set with matching ground truth ({} images, {} labels)",
            images.len(),
            gts.len()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let assignments: Vec<Assignment> = gts
        .par_iter()
        .map(|g| match_boxes(g, &ssd.spec.defaults.boxes, cfg.iou_threshold))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut backbone_state = AdamState::new(cfg.adam);
    let mut head_states: Vec<AdamState> = ssd.heads.iter().map(|_| AdamState::new(cfg.adam)).collect();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Tensor::stack(&chunk.iter().map(|&i| images[i].clone()).collect::<Vec<_>>())?;
            let batch_assign: Vec<Assignment> = chunk.iter().map(|&i| assignments[i].clone()).collect();
            let mut tape = Tape::new();
            let bound = ssd.bind(&mut tape);
            let x = tape.constant(batch);
            let out = ssd.run(&mut tape, &bound, x, Mode::Train)?;
            let loss = multibox_loss(&mut tape, out.logits, out.offsets, &batch_assign)?;
            total += tape.value(loss).item()? as f64;
            batches += 1;
            let grads = tape.backward(loss)?;
            adam_step(&mut ssd.backbone, &bound.backbone.gradients(&grads), &mut backbone_state)?;
            for ((h, b), st) in ssd.heads.iter_mut().zip(&bound.heads).zip(&mut head_states) {
                adam_step(h, &b.gradients(&grads), st)?;
            }
        }
        let mean = (total / batches as f64) as f32;
        log::info!("detector epoch {}: loss {mean:.4}", epoch + 1);
        history.push(mean);
    }
    Ok(history)
}

/// Every default box decoded, once per object class, with its softmax
/// score. No suppression is applied.
pub fn detect(ssd: &Ssd, images: &Tensor) -> Result<Vec<Vec<Detection>>> {
    let n = images.shape().first().copied().unwrap_or(0);
    let (probs, offsets) = ssd.predict(images)?;
    let d = ssd.spec.defaults.len();
    let c1 = ssd.spec.num_classes + 1;
    let (p, o) = (probs.data(), offsets.data());
    Ok((0..n)
        .map(|img| {
            let mut dets = Vec::with_capacity(d * (c1 - 1));
            for (j, prior) in ssd.spec.defaults.boxes.iter().enumerate() {
                let row = img * d + j;
                let t = [o[row * 4], o[row * 4 + 1], o[row * 4 + 2], o[row * 4 + 3]];
                let bbox = decode_clamped(t, prior).clipped();
                for class_id in 0..c1 - 1 {
                    dets.push(Detection {
                        bbox,
                        class_id,
                        score: p[row * c1 + class_id + 1],
                    });
                }
            }
            dets
        })
        .collect())
}

/// [`detect`] over a list of `[3,H,W]` images, in batches.
pub fn detect_all(ssd: &Ssd, images: &[Tensor], batch_size: usize) -> Result<Vec<Vec<Detection>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        out.extend(detect(ssd, &Tensor::stack(chunk)?)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_box_count_at_32() {
        let spec = build_ssd(2, 32).unwrap();
        let dims: Vec<_> = spec.feature_shapes.iter().map(|f| (f.m, f.n)).collect();
        assert_eq!(dims, vec![(8, 8), (4, 4), (2, 2)]);
        assert_eq!(spec.defaults.len(), 336);
        assert_eq!(build_ssd(2, 64).unwrap().defaults.len(), 336);
    }

    #[test]
    fn single_class_head_width() {
        let spec = build_ssd(1, 32).unwrap();
        assert_eq!(spec.head_channels(4), 24);
        match spec.heads[0].layers[0] {
            LayerSpec::Conv { out_channels, .. } => assert_eq!(out_channels, 24),
            _ => panic!("head is a conv"),
        }
    }

    #[test]
    fn unsupported_size_is_a_build_error() {
        assert!(matches!(build_ssd(1, 48), Err(Error::Build(_))));
    }

    #[test]
    fn scores_are_distributions() {
        let ssd = Ssd::init(build_ssd(2, 32).unwrap(), 5).unwrap();
        let img = Tensor::from_fn(vec![2, 3, 32, 32], |i| (i % 7) as f32 / 7.0);
        let (probs, _) = ssd.predict(&img).unwrap();
        for row in probs.data().chunks(3) {
            assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
        let dets = detect(&ssd, &img).unwrap();
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].len(), 336 * 2);
    }

    #[test]
    fn wrong_size_input_is_rejected() {
        let ssd = Ssd::init(build_ssd(1, 32).unwrap(), 5).unwrap();
        assert!(matches!(
            detect(&ssd, &Tensor::zeros(vec![1, 3, 16, 16])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let ssd = Ssd::init(build_ssd_with_width(2, 32, 4).unwrap(), 5).unwrap();
        assert_eq!(Ssd::from_named(&ssd.to_named()).unwrap(), ssd);
    }
}
