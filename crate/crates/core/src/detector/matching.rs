use super::boxes::{iou, BoundingBox, GroundTruth};
use super::codec::encode_offsets;
use crate::error::Result;

/// Per-default training targets for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// Index into the image's ground truths, `None` for background.
    pub matched: Vec<Option<usize>>,
    /// Class label per default: 0 is background, `c + 1` is class `c`.
    pub labels: Vec<usize>,
    /// Encoded offsets towards the matched ground truth; zero for background.
    pub targets: Vec<[f32; 4]>,
}

impl Assignment {
    pub fn num_matched(&self) -> usize {
        self.matched.iter().filter(|m| m.is_some()).count()
    }
}

/// SSD-style matching.
///
/// First a greedy bipartite pass: repeatedly take the highest-IoU pair among
/// unmatched ground truths and unmatched defaults (ties: lower ground-truth
/// index, then lower default index), so every ground truth owns one default.
/// Then every still-unmatched default whose best IoU reaches `threshold` is
/// matched to that best ground truth (ties: lower index).
pub fn match_boxes(gts: &[GroundTruth], defaults: &[BoundingBox], threshold: f32) -> Result<Assignment> {
    let d = defaults.len();
    let mut matched: Vec<Option<usize>> = vec![None; d];
    if !gts.is_empty() && d > 0 {
        let overlaps: Vec<Vec<f32>> = gts
            .iter()
            .map(|g| defaults.iter().map(|b| iou(&g.bbox, b)).collect())
            .collect();
        let mut gt_done = vec![false; gts.len()];
        for _ in 0..gts.len().min(d) {
            let mut best: Option<(f32, usize, usize)> = None;
            for (g, row) in overlaps.iter().enumerate() {
                if gt_done[g] {
                    continue;
                }
                for (j, &v) in row.iter().enumerate() {
                    if matched[j].is_none() && best.is_none_or(|(b, _, _)| v > b) {
                        best = Some((v, g, j));
                    }
                }
            }
            let (_, g, j) = best.expect("an unmatched pair remains");
            gt_done[g] = true;
            matched[j] = Some(g);
        }
        for j in 0..d {
            if matched[j].is_some() {
                continue;
            }
            let mut best = (f32::NEG_INFINITY, 0);
            for (g, row) in overlaps.iter().enumerate() {
                if row[j] > best.0 {
                    best = (row[j], g);
                }
            }
            if best.0 >= threshold {
                matched[j] = Some(best.1);
            }
        }
    }
    let mut labels = vec![0; d];
    let mut targets = vec![[0.0; 4]; d];
    for (j, m) in matched.iter().enumerate() {
        if let Some(g) = *m {
            labels[j] = gts[g].class_id + 1;
            targets[j] = encode_offsets(&gts[g].bbox, &defaults[j])?;
        }
    }
    Ok(Assignment {
        matched,
        labels,
        targets,
    })
}
