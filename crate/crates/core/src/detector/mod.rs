//! Reduced single-shot multibox detector.

mod boxes;
mod codec;
mod csv_io;
mod defaults;
mod loss;
mod matching;
mod ssd;

pub use boxes::{iou, BoundingBox, Detection, FeatureMapShape, GroundTruth};
pub use codec::{decode_offsets, encode_offsets, MAX_LOG_SCALE};
pub use csv_io::{read_detections_csv, write_detections_csv};
pub use defaults::{generate_default_boxes, generate_default_boxes_with_extra, DefaultBoxSet, LayerLayout};
pub use loss::{multibox_loss, NEG_POS_RATIO};
pub use matching::{match_boxes, Assignment};
pub use ssd::{
    build_ssd, build_ssd_with_width, detect, detect_all, train_detector, DetectorConfig, Ssd, SsdOutput, SsdSpec,
    SSD_RATIOS, SSD_SCALES, SUPPORTED_IMAGE_SIZES,
};
