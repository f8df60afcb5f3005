use std::path::Path;

use super::nms::ranked;
use crate::detector::{iou, Detection, GroundTruth};
use crate::error::{Error, Result};

/// Largest ground-truth side, in detector-input pixels, counted as tiny.
pub const TINY_MAX_PX: f32 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub score_threshold: f32,
    pub nms_threshold: f32,
    pub iou_match_threshold: f32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            score_threshold: 0.5,
            nms_threshold: 0.2,
            iou_match_threshold: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("score threshold", self.score_threshold),
            ("NMS threshold", self.nms_threshold),
            ("IoU match threshold", self.iou_match_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} {v} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// One detection after greedy matching.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchedDetection {
    pub score: f32,
    /// Index of the ground truth it claimed, if any.
    pub gt: Option<usize>,
}

/// Greedy matching of one image's detections, highest score first. Each
/// detection claims the unclaimed same-class ground truth of highest IoU
/// (ties: lower index) if that IoU reaches `iou_threshold`.
///
/// Because claims are made in score order, the matches among detections
/// scoring at least `c` are the same for every cutoff `c`.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f32) -> Vec<MatchedDetection> {
    let mut claimed = vec![false; gts.len()];
    ranked(dets)
        .into_iter()
        .map(|i| {
            let d = &dets[i];
            let mut best: Option<(f32, usize)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if claimed[g] || gt.class_id != d.class_id {
                    continue;
                }
                let v = iou(&d.bbox, &gt.bbox);
                if v >= iou_threshold && best.is_none_or(|(b, _)| v > b) {
                    best = Some((v, g));
                }
            }
            if let Some((_, g)) = best {
                claimed[g] = true;
            }
            MatchedDetection {
                score: d.score,
                gt: best.map(|(_, g)| g),
            }
        })
        .collect()
}

/// True/false positive and miss counts at one score cutoff.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    /// `tp / (tp + fp)`, or 0 when nothing was detected.
    pub fn precision(&self) -> f64 {
        let d = self.tp + self.fp;
        if d == 0 {
            0.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    /// `tp / (tp + fn)`; `None` when there is no ground truth.
    pub fn recall(&self) -> Option<f64> {
        let g = self.tp + self.fn_;
        (g > 0).then(|| self.tp as f64 / g as f64)
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f1(&self) -> Option<f64> {
        let r = self.recall()?;
        let p = self.precision();
        Some(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
    }
}

/// Per-image matches for a whole dataset.
pub struct MatchedSet {
    images: Vec<Vec<MatchedDetection>>,
    gts: Vec<Vec<GroundTruth>>,
}

impl MatchedSet {
    pub fn new(dets: &[Vec<Detection>], gts: &[Vec<GroundTruth>], iou_threshold: f32) -> Result<Self> {
        if dets.len() != gts.len() {
            return Err(Error::Input(format!(
                "{} detection lists for {} ground-truth lists",
                dets.len(),
                gts.len()
            )));
        }
        Ok(MatchedSet {
            images: dets
                .iter()
                .zip(gts)
                .map(|(d, g)| match_detections(d, g, iou_threshold))
                .collect(),
            gts: gts.to_vec(),
        })
    }

    pub fn counts(&self, cutoff: f32) -> Counts {
        let mut c = Counts::default();
        for (m, g) in self.images.iter().zip(&self.gts) {
            let kept = m.iter().filter(|d| d.score >= cutoff);
            let tp = kept.clone().filter(|d| d.gt.is_some()).count();
            c.tp += tp;
            c.fp += kept.count() - tp;
            c.fn_ += g.len() - tp;
        }
        c
    }

    /// Recall at `cutoff` over the ground truths selected by `keep`.
    pub fn stratum_recall(&self, cutoff: f32, keep: impl Fn(&GroundTruth) -> bool) -> Option<f64> {
        let (mut hit, mut total) = (0usize, 0usize);
        for (m, g) in self.images.iter().zip(&self.gts) {
            let claimed: Vec<usize> = m.iter().filter(|d| d.score >= cutoff).filter_map(|d| d.gt).collect();
            for (i, gt) in g.iter().enumerate() {
                if keep(gt) {
                    total += 1;
                    hit += usize::from(claimed.contains(&i));
                }
            }
        }
        (total > 0).then(|| hit as f64 / total as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub cutoff: f32,
    pub precision: f64,
    /// `None` when the dataset has no ground truth.
    pub recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub f1_at_default: Option<f64>,
    pub counts_at_default: Counts,
}

/// Cutoffs of the reported curve: 0.00, 0.05, …, 1.00.
pub fn default_cutoffs() -> Vec<f32> {
    (0..=20).map(|i| i as f32 / 20.0).collect()
}

/// Precision/recall over the standard cutoffs plus F1 at the configured
/// score threshold. Detections should already be suppressed.
pub fn pr_curve(dets: &[Vec<Detection>], gts: &[Vec<GroundTruth>], cfg: &EvalConfig) -> Result<PrCurve> {
    cfg.validate()?;
    let set = MatchedSet::new(dets, gts, cfg.iou_match_threshold)?;
    let points = default_cutoffs()
        .into_iter()
        .map(|cutoff| {
            let c = set.counts(cutoff);
            PrPoint {
                cutoff,
                precision: c.precision(),
                recall: c.recall(),
            }
        })
        .collect();
    let counts_at_default = set.counts(cfg.score_threshold);
    Ok(PrCurve {
        points,
        f1_at_default: counts_at_default.f1(),
        counts_at_default,
    })
}

/// Writes `cutoff,precision,recall`; an undefined recall is left empty.
pub fn write_pr_csv(path: &Path, curve: &PrCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cutoff", "precision", "recall"])?;
    for p in &curve.points {
        w.write_record(&[
            p.cutoff.to_string(),
            p.precision.to_string(),
            p.recall.map_or(String::new(), |r| r.to_string()),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Whether a ground truth falls in the tiny stratum for an `image_size`
/// detector input.
pub fn is_tiny(gt: &GroundTruth, image_size: usize) -> bool {
    gt.bbox.max_dim_px(image_size) <= TINY_MAX_PX + 1e-3
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::BoundingBox;

    fn gt(x0: f32) -> GroundTruth {
        GroundTruth {
            bbox: BoundingBox::from_corners(x0, 0.1, x0 + 0.1, 0.3),
            class_id: 0,
        }
    }

    fn det(x0: f32, score: f32) -> Detection {
        Detection {
            bbox: BoundingBox::from_corners(x0, 0.1, x0 + 0.1, 0.3),
            class_id: 0,
            score,
        }
    }

    #[test]
    fn exact_detections_are_perfect() {
        let gts = vec![vec![gt(0.1), gt(0.5)]];
        let dets = vec![vec![det(0.1, 1.0), det(0.5, 1.0)]];
        let c = pr_curve(&dets, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(c.f1_at_default, Some(1.0));
        assert_eq!(c.counts_at_default.precision(), 1.0);
    }

    #[test]
    fn no_detections() {
        let c = pr_curve(&[vec![]], &[vec![gt(0.1)]], &EvalConfig::default()).unwrap();
        assert_eq!(c.counts_at_default.recall(), Some(0.0));
        assert_eq!(c.f1_at_default, Some(0.0));
        assert_eq!(c.counts_at_default.precision(), 0.0);
    }

    #[test]
    fn zero_gts_leave_recall_undefined() {
        let c = pr_curve(&[vec![det(0.1, 0.9)]], &[vec![]], &EvalConfig::default()).unwrap();
        assert_eq!(c.counts_at_default.recall(), None);
        assert_eq!(c.counts_at_default.precision(), 0.0);
        assert_eq!(c.f1_at_default, None);
    }

    #[test]
    fn each_gt_matched_once() {
        let m = match_detections(&[det(0.1, 0.9), det(0.1, 0.8)], &[gt(0.1)], 0.5);
        assert_eq!(m[0].gt, Some(0));
        assert_eq!(m[1].gt, None);
    }

    #[test]
    fn recall_falls_as_cutoff_rises() {
        let gts = vec![vec![gt(0.1), gt(0.4), gt(0.7)]];
        let dets = vec![vec![det(0.1, 0.9), det(0.4, 0.5), det(0.7, 0.2)]];
        let c = pr_curve(&dets, &gts, &EvalConfig::default()).unwrap();
        let recalls: Vec<f64> = c.points.iter().map(|p| p.recall.unwrap()).collect();
        assert!(recalls.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(recalls[0], 1.0);
        assert_eq!(*recalls.last().unwrap(), 0.0);
    }

    #[test]
    fn config_bounds() {
        let bad = EvalConfig {
            nms_threshold: 1.0,
            ..EvalConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
