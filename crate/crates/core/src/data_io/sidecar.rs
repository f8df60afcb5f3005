//! Ground-truth sidecar CSV: `image_id,class_id,cx,cy,w,h`, one row per box.

use std::path::Path;

use crate::detector::{BoundingBox, GroundTruth};
use crate::error::{Error, Result};

const HEADER: [&str; 6] = ["image_id", "class_id", "cx", "cy", "w", "h"];

/// Writes per-image ground truth; `images[i]` gets image id `i`.
pub fn write_gt_csv(path: &Path, images: &[Vec<GroundTruth>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HEADER)?;
    for (id, gts) in images.iter().enumerate() {
        for gt in gts {
            let b = gt.bbox;
            w.write_record(&[
                id.to_string(),
                gt.class_id.to_string(),
                b.cx.to_string(),
                b.cy.to_string(),
                b.w.to_string(),
                b.h.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads ground truth indexed by image id, up to the largest id present.
/// Images without rows get an empty list; callers with trailing empty
/// images extend the result themselves.
pub fn read_gt_csv(path: &Path) -> Result<Vec<Vec<GroundTruth>>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(HEADER) {
        return Err(Error::Format(format!(
            "{}: expected header {}",
            path.display(),
            HEADER.join(",")
        )));
    }
    let mut out: Vec<Vec<_>> = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Format(format!("{}: row {} is malformed", path.display(), row + 2));
        let id: usize = rec[0].parse().map_err(|_| bad())?;
        let class_id: usize = rec[1].parse().map_err(|_| bad())?;
        let f = |i: usize| rec[i].parse::<f32>().map_err(|_| bad());
        let bbox = BoundingBox::new(f(2)?, f(3)?, f(4)?, f(5)?);
        bbox.validate()?;
        if out.len() <= id {
            out.resize(id + 1, Vec::new());
        }
        out[id].push(GroundTruth { bbox, class_id });
    }
    Ok(out)
}
