//! Suppression, precision/recall scoring, and the pipeline comparison.

mod compare;
mod metrics;
mod nms;

pub use crate::detector::iou;
pub use compare::{
    annotate, compare_pipelines, evaluate_pipeline, write_compare_csv, CompareReport, CompareRow, PipelineOutput,
    PIPELINE_CASCADE, PIPELINE_SSD,
};
pub use metrics::{
    default_cutoffs, is_tiny, match_detections, pr_curve, write_pr_csv, Counts, EvalConfig, MatchedDetection,
    MatchedSet, PrCurve, PrPoint, TINY_MAX_PX,
};
pub use nms::nms;
