//! Detection dump: `image_id,class_id,score,cx,cy,w,h`.

use std::path::Path;

use super::boxes::{BoundingBox, Detection};
use crate::error::{Error, Result};

const HEADER: [&str; 7] = ["image_id", "class_id", "score", "cx", "cy", "w", "h"];

pub fn write_detections_csv(path: &Path, dets: &[Vec<Detection>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HEADER)?;
    for (id, image) in dets.iter().enumerate() {
        for d in image {
            let b = d.bbox;
            w.write_record(&[
                id.to_string(),
                d.class_id.to_string(),
                d.score.to_string(),
                b.cx.to_string(),
                b.cy.to_string(),
                b.w.to_string(),
                b.h.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads detections indexed by image id, up to the largest id present.
pub fn read_detections_csv(path: &Path) -> Result<Vec<Vec<Detection>>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(HEADER) {
        return Err(Error::Format(format!("{}: expected header {}", path.display(), HEADER.join(","))));
    }
    let mut out: Vec<Vec<_>> = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Format(format!("{}: row {} is malformed", path.display(), row + 2));
        let id: usize = rec[0].parse().map_err(|_| bad())?;
        let class_id: usize = rec[1].parse().map_err(|_| bad())?;
        let f = |i: usize| rec[i].parse::<f32>().map_err(|_| bad());
        let det = Detection {
            bbox: BoundingBox::new(f(3)?, f(4)?, f(5)?, f(6)?),
            class_id,
            score: f(2)?,
        };
        if out.len() <= id {
            out.resize(id + 1, Vec::new());
        }
        out[id].push(det);
    }
    Ok(out)
}
