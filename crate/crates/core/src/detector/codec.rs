use super::boxes::BoundingBox;
use crate::error::Result;

/// `((gx-dx)/dw, (gy-dy)/dh, ln(gw/dw), ln(gh/dh))`.
pub fn encode_offsets(gt: &BoundingBox, d: &BoundingBox) -> Result<[f32; 4]> {
    gt.validate()?;
    d.validate()?;
    Ok([
        (gt.cx - d.cx) / d.w,
        (gt.cy - d.cy) / d.h,
        (gt.w / d.w).ln(),
        (gt.h / d.h).ln(),
    ])
}

/// Exact inverse of [`encode_offsets`].
pub fn decode_offsets(t: [f32; 4], d: &BoundingBox) -> BoundingBox {
    BoundingBox::new(d.cx + t[0] * d.w, d.cy + t[1] * d.h, d.w * t[2].exp(), d.h * t[3].exp())
}

/// Largest log-size offset [`decode_offsets`] is fed at inference; keeps
/// untrained heads from producing infinite boxes.
pub const MAX_LOG_SCALE: f32 = 4.0;

pub(crate) fn decode_clamped(t: [f32; 4], d: &BoundingBox) -> BoundingBox {
    decode_offsets(
        [
            t[0],
            t[1],
            t[2].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE),
            t[3].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE),
        ],
        d,
    )
}
