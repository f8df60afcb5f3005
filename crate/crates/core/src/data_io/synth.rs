//! Procedural street-like scenes with exact ground truth.
//!
//! A scene is a smooth two-colour gradient with Gaussian sensor noise and a
//! handful of filled, high-contrast rectangles or ellipses. Pedestrians are
//! tall and thin (height/width in [2,3]); vehicles are wide (width/height in
//! [1.5,2.5]). Objects sit on whole pixels so the boxes are tight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::detector::{BoundingBox, GroundTruth};
use crate::error::{Error, Result};
use crate::tensor_core::Tensor;

const PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectClass {
    Pedestrian,
    Vehicle,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 2] = [ObjectClass::Pedestrian, ObjectClass::Vehicle];

    pub fn id(self) -> usize {
        match self {
            ObjectClass::Pedestrian => 0,
            ObjectClass::Vehicle => 1,
        }
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    /// `(major/minor)` aspect interval.
    pub fn aspect_range(self) -> (f32, f32) {
        match self {
            ObjectClass::Pedestrian => (2.0, 3.0),
            ObjectClass::Vehicle => (1.5, 2.5),
        }
    }

    /// Integer `(w, h)` pairs with the given major side that satisfy the
    /// aspect interval.
    fn footprints(self, major: usize) -> Vec<(usize, usize)> {
        let (lo, hi) = self.aspect_range();
        (1..=major)
            .filter(|&minor| {
                let r = major as f32 / minor as f32;
                r >= lo && r <= hi
            })
            .map(|minor| match self {
                ObjectClass::Pedestrian => (minor, major),
                ObjectClass::Vehicle => (major, minor),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub image_size: usize,
    /// Inclusive object-count range.
    pub object_count: (usize, usize),
    /// Inclusive range of the larger box side, in pixels.
    pub object_size_px: (usize, usize),
    /// Standard deviation of the additive Gaussian noise.
    pub noise_level: f32,
    pub classes: Vec<ObjectClass>,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            image_size: 32,
            object_count: (1, 3),
            object_size_px: (4, 12),
            noise_level: 0.03,
            classes: ObjectClass::ALL.to_vec(),
        }
    }
}

impl SceneParams {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.object_size_px;
        if lo < 2 || hi < lo {
            return Err(Error::Input(format!(
                "object size range {lo}..={hi} must start at 2 px or more"
            )));
        }
        if hi > self.image_size {
            return Err(Error::Input(format!(
                "objects up to {hi} px cannot fit a {} px image",
                self.image_size
            )));
        }
        if self.object_count.1 < self.object_count.0 {
            return Err(Error::Input("object count range is reversed".into()));
        }
        if self.object_count.1 > 0 && self.classes.is_empty() {
            return Err(Error::Input("objects requested with an empty class set".into()));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::Input("noise level must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    pub gts: Vec<GroundTruth>,
    pub seed: u64,
}

struct Placed {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

impl Placed {
    /// Overlap test with a one-pixel moat.
    fn touches(&self, other: &Placed) -> bool {
        self.x0 < other.x0 + other.w + 1
            && other.x0 < self.x0 + self.w + 1
            && self.y0 < other.y0 + other.h + 1
            && other.y0 < self.y0 + self.h + 1
    }
}

pub fn synth_scene(seed: u64, params: &SceneParams) -> Result<SyntheticScene> {
    params.validate()?;
    let size = params.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let c0: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.75));
    let c1: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.75));
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut pixels = vec![0.0f32; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let u = (x as f32 + 0.5) / size as f32 - 0.5;
            let v = (y as f32 + 0.5) / size as f32 - 0.5;
            let t = (u * dx + v * dy + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                pixels[(c * size + y) * size + x] = c0[c] * (1.0 - t) + c1[c] * t;
            }
        }
    }

    let count = rng.random_range(params.object_count.0..=params.object_count.1);
    let mut placed: Vec<Placed> = Vec::with_capacity(count);
    let mut gts = Vec::with_capacity(count);
    let (min_px, max_px) = params.object_size_px;
    for _ in 0..count {
        let class = params.classes[rng.random_range(0..params.classes.len())];
        let ellipse = rng.random_bool(0.5);
        let mut major = rng.random_range(min_px..=max_px);
        let mut spot = None;
        for attempt in 0..PLACEMENT_ATTEMPTS {
            if attempt > 0 && attempt % 10 == 0 && major > min_px {
                major -= 1;
            }
            let options = class.footprints(major);
            let (w, h) = options[rng.random_range(0..options.len())];
            let cand = Placed {
                x0: rng.random_range(0..=size - w),
                y0: rng.random_range(0..=size - h),
                w,
                h,
            };
            if placed.iter().all(|p| !cand.touches(p)) {
                spot = Some(cand);
                break;
            }
        }
        let obj = spot.ok_or_else(|| {
            Error::Input(format!(
                "could not place object {} of {count} after {PLACEMENT_ATTEMPTS} attempts (seed {seed})",
                placed.len() + 1
            ))
        })?;

        let centre = (obj.y0 + obj.h / 2) * size + obj.x0 + obj.w / 2;
        let lum = (0..3).map(|c| pixels[c * size * size + centre]).sum::<f32>() / 3.0;
        let colour: [f32; 3] = if lum < 0.5 {
            std::array::from_fn(|_| rng.random_range(0.8..1.0))
        } else {
            std::array::from_fn(|_| rng.random_range(0.0..0.2))
        };
        let (hw, hh) = (obj.w as f32 / 2.0, obj.h as f32 / 2.0);
        for y in obj.y0..obj.y0 + obj.h {
            for x in obj.x0..obj.x0 + obj.w {
                if ellipse {
                    let ex = (x as f32 + 0.5 - obj.x0 as f32 - hw) / hw;
                    let ey = (y as f32 + 0.5 - obj.y0 as f32 - hh) / hh;
                    if ex * ex + ey * ey > 1.0 {
                        continue;
                    }
                }
                for c in 0..3 {
                    pixels[(c * size + y) * size + x] = colour[c];
                }
            }
        }
        let s = size as f32;
        gts.push(GroundTruth {
            bbox: BoundingBox::from_corners(
                obj.x0 as f32 / s,
                obj.y0 as f32 / s,
                (obj.x0 + obj.w) as f32 / s,
                (obj.y0 + obj.h) as f32 / s,
            ),
            class_id: class.id(),
        });
        placed.push(obj);
    }

    if params.noise_level > 0.0 {
        let noise = Normal::new(0.0f32, params.noise_level).expect("valid noise level");
        for p in pixels.iter_mut() {
            *p = (*p + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }

    Ok(SyntheticScene {
        image: Tensor::new(vec![3, size, size], pixels)?,
        gts,
        seed,
    })
}

/// Scenes for seeds `first..first+count`, generated in parallel.
pub fn synth_scenes(first_seed: u64, count: usize, params: &SceneParams) -> Result<Vec<SyntheticScene>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| synth_scene(first_seed + i, params))
        .collect()
}
