use std::path::Path;

use rayon::prelude::*;

use super::metrics::{is_tiny, EvalConfig, MatchedSet};
use super::nms::nms;
use crate::data_io::{downsample_box, SyntheticScene};
use crate::detector::{detect_all, Detection, GroundTruth, Ssd};
use crate::error::{Error, Result};
use crate::gan::{enhance, GanModel};
use crate::tensor_core::{upsample_nearest, Tensor};

pub const PIPELINE_SSD: &str = "SSD-only";
pub const PIPELINE_CASCADE: &str = "DCGAN+SSD";

/// Images per detector/generator batch.
const EVAL_BATCH: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub dataset: String,
    pub pipeline: String,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Recall over ground truths at most 8 px on their longer side.
    /// `None` if the set has none.
    pub tiny_recall: Option<f64>,
}

/// Final detections of one pipeline: suppressed and thresholded.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub row: CompareRow,
    /// Detector inputs, `[3,S,S]` in `[0,1]`.
    pub inputs: Vec<Tensor>,
    pub detections: Vec<Vec<Detection>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub outputs: Vec<PipelineOutput>,
}

/// Suppresses, scores and summarizes one pipeline's raw detections.
pub fn evaluate_pipeline(
    dataset: &str,
    pipeline: &str,
    raw: &[Vec<Detection>],
    gts: &[Vec<GroundTruth>],
    image_size: usize,
    cfg: &EvalConfig,
) -> Result<(CompareRow, Vec<Vec<Detection>>)> {
    cfg.validate()?;
    let kept: Vec<Vec<Detection>> = raw
        .par_iter()
        .map(|d| {
            let above: Vec<Detection> = d.iter().filter(|x| x.score >= cfg.score_threshold).copied().collect();
            nms(&above, cfg.nms_threshold)
        })
        .collect();
    let set = MatchedSet::new(&kept, gts, cfg.iou_match_threshold)?;
    let c = set.counts(cfg.score_threshold);
    let row = CompareRow {
        dataset: dataset.to_string(),
        pipeline: pipeline.to_string(),
        f1: c.f1().unwrap_or(0.0),
        precision: c.precision(),
        recall: c.recall().unwrap_or(0.0),
        tiny_recall: set.stratum_recall(cfg.score_threshold, |g| is_tiny(g, image_size)),
    };
    Ok((row, kept))
}

/// Runs both pipelines on the low-resolution versions of `scenes`.
///
/// The SSD-only pipeline feeds `ssd` the low-resolution image upsampled by
/// pixel replication; the cascade feeds `ssd_hr` the generator's
/// enhancement. Both share `cfg`. `seed` drives the generator noise.
pub fn compare_pipelines(
    dataset: &str,
    scenes: &[SyntheticScene],
    ssd: &Ssd,
    ssd_hr: &Ssd,
    gan: &GanModel,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<CompareReport> {
    cfg.validate()?;
    let size = gan.cfg.image_size;
    let factor = gan.cfg.upscale_factor;
    for (name, s) in [("SSD-only detector", ssd), ("cascade detector", ssd_hr)] {
        if s.spec.image_size != size {
            return Err(Error::Config(format!(
                "{name} takes {}-pixel input but the generator emits {size}",
                s.spec.image_size
            )));
        }
    }
    if let Some(bad) = scenes.iter().find(|s| s.image.shape() != [3, size, size]) {
        return Err(Error::Config(format!(
            "test scene {:?} does not match the {size}-pixel pipeline",
            bad.image.shape()
        )));
    }
    let low: Vec<Tensor> = scenes
        .par_iter()
        .map(|s| downsample_box(&s.image, factor))
        .collect::<Result<_>>()?;
    let gts: Vec<Vec<GroundTruth>> = scenes.iter().map(|s| s.gts.clone()).collect();

    let mut naive = Vec::with_capacity(low.len());
    let mut enhanced = Vec::with_capacity(low.len());
    for (b, chunk) in low.chunks(EVAL_BATCH).enumerate() {
        let batch = Tensor::stack(chunk)?;
        let up = upsample_nearest(&batch, factor)?;
        let hr = enhance(gan, &batch, seed.wrapping_add(b as u64))?;
        for i in 0..chunk.len() {
            naive.push(up.sample(i)?);
            enhanced.push(hr.sample(i)?);
        }
    }

    let mut outputs = Vec::with_capacity(2);
    for (name, model, inputs) in [(PIPELINE_SSD, ssd, naive), (PIPELINE_CASCADE, ssd_hr, enhanced)] {
        let raw = detect_all(model, &inputs, EVAL_BATCH)?;
        let (row, detections) = evaluate_pipeline(dataset, name, &raw, &gts, size, cfg)?;
        outputs.push(PipelineOutput {
            row,
            inputs,
            detections,
        });
    }
    Ok(CompareReport {
        rows: outputs.iter().map(|o| o.row.clone()).collect(),
        outputs,
    })
}

/// Writes `dataset,pipeline,f1,precision,recall,tiny_recall`.
pub fn write_compare_csv(path: &Path, rows: &[CompareRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dataset", "pipeline", "f1", "precision", "recall", "tiny_recall"])?;
    for r in rows {
        w.write_record(&[
            r.dataset.clone(),
            r.pipeline.clone(),
            r.f1.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.tiny_recall.map_or(String::new(), |v| v.to_string()),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const GT_COLOUR: [f32; 3] = [0.0, 1.0, 0.0];
const DET_COLOUR: [f32; 3] = [1.0, 0.0, 0.0];

fn draw_box(img: &mut Tensor, bbox: &crate::detector::BoundingBox, colour: [f32; 3]) {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let (x0, y0, x1, y1) = bbox.clipped().corners();
    let px = |v: f32, n: usize| ((v * n as f32).round() as usize).min(n - 1);
    let (ax, ay) = (px(x0, w), px(y0, h));
    let (bx, by) = (
        px(x1, w).saturating_sub(usize::from(x1 * w as f32 > 0.5)).max(ax),
        px(y1, h).saturating_sub(usize::from(y1 * h as f32 > 0.5)).max(ay),
    );
    let data = img.data_mut();
    let mut put = |x: usize, y: usize| {
        for (c, v) in colour.iter().enumerate() {
            data[(c * h + y) * w + x] = *v;
        }
    };
    for x in ax..=bx {
        put(x, ay);
        put(x, by);
    }
    for y in ay..=by {
        put(ax, y);
        put(bx, y);
    }
}

/// Copy of a `[3,H,W]` image with ground-truth outlines in green and
/// detection outlines in red.
pub fn annotate(image: &Tensor, gts: &[GroundTruth], dets: &[Detection]) -> Result<Tensor> {
    if image.rank() != 3 || image.shape()[0] != 3 {
        return Err(Error::Dimension(format!("annotate needs [3,H,W], got {:?}", image.shape())));
    }
    let mut out = image.clone();
    for g in gts {
        draw_box(&mut out, &g.bbox, GT_COLOUR);
    }
    for d in dets {
        draw_box(&mut out, &d.bbox, DET_COLOUR);
    }
    Ok(out)
}
