//! CIFAR-10 binary batches: 10000 rows of `label byte + 3072 pixel bytes`
//! (1024 red, 1024 green, 1024 blue, each 32×32 row-major), no delimiters.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor_core::Tensor;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_PIXELS;
pub const CIFAR_BATCH_RECORDS: usize = 10_000;
pub const CIFAR_BATCH_BYTES: usize = CIFAR_RECORD_BYTES * CIFAR_BATCH_RECORDS;
pub const CIFAR_CLASSES: u8 = 10;

#[derive(Clone, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    pub pixels: Box<[u8; CIFAR_PIXELS]>,
}

impl std::fmt::Debug for CifarRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CifarRecord").field("label", &self.label).finish_non_exhaustive()
    }
}

impl CifarRecord {
    /// `[3, 32, 32]` image with values `v / 255`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![3, CIFAR_SIDE, CIFAR_SIDE],
            self.pixels.iter().map(|&v| v as f32 / 255.0).collect(),
        )
        .expect("cifar record shape")
    }
}

/// Parses any whole number of records.
pub fn parse_cifar(bytes: &[u8]) -> Result<Vec<CifarRecord>> {
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        let records = bytes.len() / CIFAR_RECORD_BYTES;
        return Err(Error::Format(format!(
            "cifar data must be a multiple of {CIFAR_RECORD_BYTES} bytes: got {} bytes, expected {} or {}",
            bytes.len(),
            records * CIFAR_RECORD_BYTES,
            (records + 1) * CIFAR_RECORD_BYTES
        )));
    }
    bytes
        .chunks_exact(CIFAR_RECORD_BYTES)
        .enumerate()
        .map(|(i, row)| {
            let label = row[0];
            if label >= CIFAR_CLASSES {
                return Err(Error::Format(format!(
                    "record {i} (byte offset {}) has label {label}, expected < {CIFAR_CLASSES}",
                    i * CIFAR_RECORD_BYTES
                )));
            }
            let mut pixels = Box::new([0u8; CIFAR_PIXELS]);
            pixels.copy_from_slice(&row[1..]);
            Ok(CifarRecord { label, pixels })
        })
        .collect()
}

/// Parses one canonical batch file, which must be exactly 30,730,000 bytes.
pub fn parse_cifar_batch(bytes: &[u8]) -> Result<Vec<CifarRecord>> {
    if bytes.len() != CIFAR_BATCH_BYTES {
        return Err(Error::Format(format!(
            "cifar batch file must be exactly {CIFAR_BATCH_BYTES} bytes, got {}",
            bytes.len()
        )));
    }
    parse_cifar(bytes)
}

pub fn load_cifar_batch(path: &Path) -> Result<Vec<CifarRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar_batch(&bytes)
}

pub fn write_cifar(records: &[CifarRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR_RECORD_BYTES);
    for r in records {
        out.push(r.label);
        out.extend_from_slice(&r.pixels[..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_record() {
        let mut bytes = vec![255u8; CIFAR_RECORD_BYTES];
        bytes[0] = 7;
        let recs = parse_cifar(&bytes).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].label, 7);
        assert!(recs[0].to_tensor().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn channel_planes_are_ordered_rgb() {
        let mut bytes = vec![0u8; CIFAR_RECORD_BYTES];
        bytes[1 + 1024] = 255; // first green pixel
        let t = parse_cifar(&bytes).unwrap()[0].to_tensor();
        assert_eq!(t.data()[1024], 1.0);
        assert_eq!(t.data()[0], 0.0);
    }

    #[test]
    fn ragged_length_reports_expected_sizes() {
        let err = parse_cifar(&vec![0u8; CIFAR_RECORD_BYTES + 5]).unwrap_err().to_string();
        assert!(err.contains("3078") && err.contains("3073") && err.contains("6146"), "{err}");
    }

    #[test]
    fn bad_label_names_the_record() {
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD_BYTES];
        bytes[CIFAR_RECORD_BYTES] = 10;
        let err = parse_cifar(&bytes).unwrap_err().to_string();
        assert!(err.contains("record 1"), "{err}");
    }

    #[test]
    fn batch_length_is_strict() {
        assert!(parse_cifar_batch(&vec![0u8; CIFAR_RECORD_BYTES]).is_err());
    }
}
