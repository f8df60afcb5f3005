//! Dataset ingestion, synthetic scenes, and on-disk formats.

mod checkpoint;
mod cifar;
mod pairs;
mod ppm;
mod sidecar;
mod synth;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use cifar::{
    load_cifar_batch, parse_cifar, parse_cifar_batch, write_cifar, CifarRecord, CIFAR_BATCH_BYTES,
    CIFAR_BATCH_RECORDS, CIFAR_CLASSES, CIFAR_PIXELS, CIFAR_RECORD_BYTES, CIFAR_SIDE,
};
pub use pairs::{downsample_box, make_pairs, EnhancerPair};
pub use ppm::{decode_ppm, encode_ppm, read_image, write_image};
pub use sidecar::{read_gt_csv, write_gt_csv};
pub use synth::{synth_scene, synth_scenes, ObjectClass, SceneParams, SyntheticScene};
