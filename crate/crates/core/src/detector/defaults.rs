use super::boxes::{BoundingBox, FeatureMapShape};

/// Per-layer tiling record: an `m × n` grid with `k` boxes per cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

/// Prior boxes in layer-major, then row-major cell, then ratio order.
#[derive(Clone, Debug, PartialEq)]
pub struct DefaultBoxSet {
    pub boxes: Vec<BoundingBox>,
    pub layout: Vec<LayerLayout>,
}

impl DefaultBoxSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

fn tile(
    shapes: &[FeatureMapShape],
    per_cell: impl Fn(usize) -> Vec<(f32, f32)>,
) -> DefaultBoxSet {
    let mut boxes = Vec::new();
    let mut layout = Vec::with_capacity(shapes.len());
    for (l, s) in shapes.iter().enumerate() {
        let sizes = per_cell(l);
        layout.push(LayerLayout {
            m: s.m,
            n: s.n,
            k: sizes.len(),
        });
        for i in 0..s.m {
            for j in 0..s.n {
                let cx = (j as f32 + 0.5) / s.n as f32;
                let cy = (i as f32 + 0.5) / s.m as f32;
                for &(w, h) in &sizes {
                    boxes.push(BoundingBox::new(cx, cy, w, h).clipped());
                }
            }
        }
    }
    DefaultBoxSet { boxes, layout }
}

/// One box per ratio `r` and cell, sized `w = s·√r`, `h = s/√r`.
///
/// # Panics
/// If `scales` and `shapes` differ in length.
pub fn generate_default_boxes(shapes: &[FeatureMapShape], scales: &[f32], ratios: &[f32]) -> DefaultBoxSet {
    assert_eq!(shapes.len(), scales.len(), "one scale per feature layer");
    tile(shapes, |l| {
        ratios
            .iter()
            .map(|r| (scales[l] * r.sqrt(), scales[l] / r.sqrt()))
            .collect()
    })
}

/// [`generate_default_boxes`] plus one extra square per cell of side
/// `√(s_l · s_{l+1})`, with `s_{L} = 1` past the last layer.
pub fn generate_default_boxes_with_extra(
    shapes: &[FeatureMapShape],
    scales: &[f32],
    ratios: &[f32],
) -> DefaultBoxSet {
    assert_eq!(shapes.len(), scales.len(), "one scale per feature layer");
    tile(shapes, |l| {
        let next = scales.get(l + 1).copied().unwrap_or(1.0);
        let extra = (scales[l] * next).sqrt();
        ratios
            .iter()
            .map(|r| (scales[l] * r.sqrt(), scales[l] / r.sqrt()))
            .chain(std::iter::once((extra, extra)))
            .collect()
    })
}
