use std::cmp::Ordering;

use crate::detector::{iou, Detection};

/// Order used throughout evaluation: descending score, then lower class id,
/// then input position.
pub(crate) fn ranked(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(dets[a].class_id.cmp(&dets[b].class_id))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy class-wise non-maximum suppression. A detection is dropped when
/// its IoU with an already kept detection of the same class is at least
/// `overlap_threshold`. Output is in ranked order.
pub fn nms(dets: &[Detection], overlap_threshold: f32) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for i in ranked(dets) {
        let d = dets[i];
        if kept
            .iter()
            .all(|k| k.class_id != d.class_id || iou(&k.bbox, &d.bbox) < overlap_threshold)
        {
            kept.push(d);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::BoundingBox;

    fn det(x0: f32, score: f32, class_id: usize) -> Detection {
        Detection {
            bbox: BoundingBox::from_corners(x0, 0.0, x0 + 0.2, 0.2),
            class_id,
            score,
        }
    }

    #[test]
    fn duplicate_lower_score_is_dropped() {
        let out = nms(&[det(0.1, 0.8, 0), det(0.1, 0.9, 0)], 0.2);
        assert_eq!(out, vec![det(0.1, 0.9, 0)]);
    }

    #[test]
    fn low_overlap_survives() {
        // Shift by 0.16 of a 0.2-wide box: IoU = 0.04·0.2 / (0.08 - 0.008) ≈ 0.11.
        let a = det(0.1, 0.9, 0);
        let b = det(0.26, 0.8, 0);
        assert!(iou(&a.bbox, &b.bbox) < 0.2);
        assert_eq!(nms(&[a, b], 0.2).len(), 2);
    }

    #[test]
    fn classes_do_not_suppress_each_other() {
        assert_eq!(nms(&[det(0.1, 0.9, 0), det(0.1, 0.8, 1)], 0.2).len(), 2);
    }

    #[test]
    fn ties_prefer_lower_class_then_input_order() {
        let out = nms(&[det(0.5, 0.7, 1), det(0.1, 0.7, 0), det(0.1, 0.7, 0)], 0.2);
        assert_eq!(out, vec![det(0.1, 0.7, 0), det(0.5, 0.7, 1)]);
    }
}
