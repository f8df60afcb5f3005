//! Named tensor checkpoints.
//!
//! Layout: one UTF-8 manifest line per tensor, `name dims byte_offset`, where
//! dims is `3x32x32` (or `-` for a scalar); an empty line; then every tensor's
//! data as little-endian f32, in manifest order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::NamedTensors;
use crate::tensor_core::Tensor;

pub fn encode_checkpoint(tensors: &NamedTensors) -> Result<Vec<u8>> {
    let mut manifest = String::new();
    let mut offset = 0usize;
    for (name, t) in tensors {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("tensor name {name:?} must be non-empty without whitespace")));
        }
        let dims = if t.shape().is_empty() {
            "-".to_string()
        } else {
            t.shape().iter().map(usize::to_string).collect::<Vec<_>>().join("x")
        };
        manifest.push_str(&format!("{name} {dims} {offset}\n"));
        offset += 4 * t.len();
    }
    manifest.push('\n');
    let mut out = manifest.into_bytes();
    out.reserve(offset);
    for t in tensors.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NamedTensors> {
    let split = if bytes.first() == Some(&b'\n') {
        0
    } else {
        bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .map(|p| p + 1)
            .ok_or_else(|| Error::Corruption("checkpoint manifest is not terminated by a blank line".into()))?
    };
    let manifest = std::str::from_utf8(&bytes[..split])
        .map_err(|e| Error::Corruption(format!("checkpoint manifest is not UTF-8: {e}")))?;
    let payload = &bytes[split + 1..];

    let mut entries = Vec::new();
    let mut expected_offset = 0usize;
    for (lineno, line) in manifest.lines().enumerate() {
        let fields: Vec<&str> = line.split(' ').collect();
        let bad = |what: &str| Error::Corruption(format!("manifest line {}: {what}: {line:?}", lineno + 1));
        let [name, dims, offset] = fields[..] else {
            return Err(bad("expected `name dims offset`"));
        };
        let shape: Vec<usize> = if dims == "-" {
            Vec::new()
        } else {
            dims.split('x')
                .map(|d| d.parse().ok().filter(|&d: &usize| d > 0))
                .collect::<Option<_>>()
                .ok_or_else(|| bad("bad dims"))?
        };
        let offset: usize = offset.parse().map_err(|_| bad("bad offset"))?;
        if offset != expected_offset {
            return Err(bad(&format!("offset should be {expected_offset}")));
        }
        let len: usize = shape.iter().product();
        expected_offset += 4 * len;
        entries.push((name.to_string(), shape, offset, len));
    }
    if expected_offset != payload.len() {
        return Err(Error::Corruption(format!(
            "manifest describes {expected_offset} payload bytes, file has {}",
            payload.len()
        )));
    }

    let mut out = NamedTensors::with_capacity(entries.len());
    for (name, shape, offset, len) in entries {
        let data = payload[offset..offset + 4 * len]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if out.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Corruption(format!("duplicate tensor name {name:?}")));
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, tensors: &NamedTensors) -> Result<()> {
    std::fs::write(path, encode_checkpoint(tensors)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<NamedTensors> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
