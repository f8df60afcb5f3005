//! Binary portable pixmap (P6, maxval 255).

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor_core::Tensor;

/// Encodes a `[3, H, W]` image with values in `[0, 1]`.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let [c, h, w] = match image.shape() {
        &[c, h, w] => [c, h, w],
        s => return Err(Error::Dimension(format!("ppm needs a [3,H,W] image, got {s:?}"))),
    };
    if c != 3 {
        return Err(Error::Dimension(format!("ppm needs 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    let d = image.data();
    for p in 0..h * w {
        for ch in 0..3 {
            out.push((d[ch * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("ppm: expected {what} at byte {start}")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::Format("ppm: missing P6 magic at byte 0".into()));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let w = cur.number("width")?;
    let h = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("ppm: maxval {maxval} unsupported, only 255")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format("ppm: zero-sized image".into()));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format(format!("ppm: expected whitespace after header at byte {}", cur.pos)));
    }
    let start = cur.pos + 1;
    let need = 3 * w * h;
    if bytes.len() < start + need {
        return Err(Error::Format(format!(
            "ppm: payload truncated at byte {}, expected {} bytes of pixels from byte {start}",
            bytes.len(),
            need
        )));
    }
    let payload = &bytes[start..start + need];
    let mut data = vec![0.0f32; need];
    for p in 0..w * h {
        for ch in 0..3 {
            data[ch * w * h + p] = payload[3 * p + ch] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    std::fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    decode_ppm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
