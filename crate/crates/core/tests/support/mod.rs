//! Reference implementations and fixtures shared by the integration tests.
#![allow(dead_code)]

use ganshot::detector::{
    encode_offsets, iou, multibox_loss, Assignment, BoundingBox, Detection, GroundTruth,
};
use ganshot::tensor_core::{
    grad_check, ActivationConfig, Element, NormMode, Probe, ScalarFn, Tape, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Values with magnitude in `[gap, 1]` and random sign.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f32) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(gap..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Seven nested loops in f64, zero padding. Input `[N,C,H,W]`, kernel
/// `[O,C,K,K]`.
pub fn naive_conv2d(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Vec<f64> {
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (o, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0f64; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |t| t.data()[oc] as f64);
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ic) * h + iy as usize) * w + ix as usize] as f64;
                                let kv = k[((oc * c + ic) * kh + ky) * kw + kx] as f64;
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((b * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Quadratic suppression: compute the full same-class conflict matrix,
/// then walk the ranking keeping a box only if no earlier kept box
/// conflicts with it.
pub fn brute_nms(dets: &[Detection], threshold: f32) -> Vec<Detection> {
    let n = dets.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(dets[a].class_id.cmp(&dets[b].class_id))
            .then(a.cmp(&b))
    });
    let conflict: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| dets[i].class_id == dets[j].class_id && iou(&dets[i].bbox, &dets[j].bbox) >= threshold)
                .collect()
        })
        .collect();
    let mut kept_flag = vec![false; n];
    let mut out = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if order[..pos].iter().any(|&j| kept_flag[j] && conflict[i][j]) {
            continue;
        }
        kept_flag[i] = true;
        out.push(dets[i]);
    }
    out
}

/// Matching by sorting every (IoU, gt, default) triple once: descending
/// IoU, then gt index, then default index; each triple is accepted when
/// both ends are still free. Remaining defaults take their best gt if it
/// clears the threshold.
pub fn exhaustive_match(gts: &[GroundTruth], defaults: &[BoundingBox], threshold: f32) -> Assignment {
    let d = defaults.len();
    let mut triples: Vec<(f32, usize, usize)> = Vec::with_capacity(gts.len() * d);
    for (g, gt) in gts.iter().enumerate() {
        for (j, b) in defaults.iter().enumerate() {
            triples.push((iou(&gt.bbox, b), g, j));
        }
    }
    triples.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut matched: Vec<Option<usize>> = vec![None; d];
    let mut gt_used = vec![false; gts.len()];
    for &(_, g, j) in &triples {
        if !gt_used[g] && matched[j].is_none() {
            gt_used[g] = true;
            matched[j] = Some(g);
        }
    }
    for j in 0..d {
        if matched[j].is_some() || gts.is_empty() {
            continue;
        }
        let ious: Vec<f32> = gts.iter().map(|g| iou(&g.bbox, &defaults[j])).collect();
        let best = ious.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if best >= threshold {
            matched[j] = ious.iter().position(|&v| v == best);
        }
    }
    let labels = matched.iter().map(|m| m.map_or(0, |g| gts[g].class_id + 1)).collect();
    let targets = matched
        .iter()
        .zip(defaults)
        .map(|(m, b)| m.map_or([0.0; 4], |g| encode_offsets(&gts[g].bbox, b).unwrap()))
        .collect();
    Assignment {
        matched,
        labels,
        targets,
    }
}

pub fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = rng.random_range(0.02..0.5f32);
    let h = rng.random_range(0.02..0.5f32);
    BoundingBox::new(
        rng.random_range(w / 2.0..1.0 - w / 2.0),
        rng.random_range(h / 2.0..1.0 - h / 2.0),
        w,
        h,
    )
}

/// Detections clustered around a few centres so that suppression has
/// real work to do.
pub fn random_detections(rng: &mut ChaCha8Rng, max: usize) -> Vec<Detection> {
    let n = rng.random_range(0..=max);
    let centres: Vec<BoundingBox> = (0..rng.random_range(1..5)).map(|_| random_box(rng)).collect();
    (0..n)
        .map(|_| {
            let c = centres[rng.random_range(0..centres.len())];
            let jitter = |r: &mut ChaCha8Rng| r.random_range(-0.05..0.05f32);
            Detection {
                bbox: BoundingBox::new(
                    c.cx + jitter(rng),
                    c.cy + jitter(rng),
                    (c.w + jitter(rng)).max(0.01),
                    (c.h + jitter(rng)).max(0.01),
                ),
                class_id: rng.random_range(0..2),
                // Coarse scores so that ties occur.
                score: rng.random_range(0..20) as f32 / 20.0,
            }
        })
        .collect()
}

fn weighted_sum<T: Element>(tape: &mut Tape<T>, y: Var, w: &Tensor) -> Result<Var, ganshot::Error> {
    let wv = tape.constant(w.cast());
    let p = tape.mul(y, wv)?;
    Ok(tape.sum(p))
}

/// One gradient check: the op name, the worst relative error over all
/// trial points, and the tolerance it must stay under.
pub struct GradResult {
    pub op: &'static str,
    pub worst: f64,
    pub tolerance: f64,
}

pub const GRAD_POINTS: u64 = 10;
pub const GRAD_TOL: f64 = 1e-4;
pub const MULTIBOX_TOL: f64 = 1e-3;
const STEP: f64 = 1e-5;

macro_rules! scalar_fn {
    ($name:ident { $($field:ident : $ty:ty),* } |$tape:ident, $x:ident, $s:ident| $body:block) => {
        struct $name { $($field: $ty),* }
        impl ScalarFn for $name {
            fn eval<T: Element>(&self, $tape: &mut Tape<T>, $x: &[Var]) -> Result<Var, ganshot::Error> {
                let $s = self;
                $body
            }
        }
    };
}

scalar_fn!(ConvFn { w: Tensor } |tape, x, s| {
    let y = tape.conv2d(x[0], x[1], Some(x[2]), 2, 1)?;
    weighted_sum(tape, y, &s.w)
});

scalar_fn!(ConvTFn { w: Tensor } |tape, x, s| {
    let y = tape.conv_transpose2d(x[0], x[1], Some(x[2]), 2, 1)?;
    weighted_sum(tape, y, &s.w)
});

scalar_fn!(LeakyFn { w: Tensor } |tape, x, s| {
    let y = tape.leaky_relu(x[0], ActivationConfig::default());
    weighted_sum(tape, y, &s.w)
});

scalar_fn!(SigmoidFn { w: Tensor } |tape, x, s| {
    let y = tape.sigmoid(x[0]);
    weighted_sum(tape, y, &s.w)
});

scalar_fn!(TanhFn { w: Tensor } |tape, x, s| {
    let y = tape.tanh(x[0]);
    weighted_sum(tape, y, &s.w)
});

scalar_fn!(BceFn { target: Tensor, weights: Tensor } |tape, x, s| {
    tape.bce_loss(x[0], &s.target.cast(), Some(&s.weights.cast()))
});

scalar_fn!(MaxPoolFn { w: Tensor } |tape, x, s| {
    let y = tape.maxpool2d(x[0], 2, 2)?;
    weighted_sum(tape, y, &s.w)
});

scalar_fn!(MatMulFn { w: Tensor } |tape, x, s| {
    let y = tape.matmul(x[0], x[1])?;
    weighted_sum(tape, y, &s.w)
});

scalar_fn!(BatchNormFn { w: Tensor } |tape, x, s| {
    let (y, _) = tape.batchnorm(x[0], x[1], x[2], NormMode::Train)?;
    weighted_sum(tape, y, &s.w)
});

scalar_fn!(SoftmaxFn { w: Tensor } |tape, x, s| {
    let y = tape.softmax(x[0])?;
    weighted_sum(tape, y, &s.w)
});

scalar_fn!(SmoothL1Fn { target: Tensor } |tape, x, s| {
    tape.smooth_l1(x[0], &s.target.cast(), None)
});

scalar_fn!(MultiboxFn { assignments: Vec<Assignment> } |tape, x, s| {
    multibox_loss(tape, x[0], x[1], &s.assignments)
});

fn worst<F: ScalarFn>(f: &F, probes: &[Probe]) -> f64 {
    grad_check(f, probes, STEP).expect("grad_check runs").max_error()
}

/// Smooth-L1 inputs whose residual stays clear of the ±1 transition.
fn smooth_l1_point(rng: &mut ChaCha8Rng, len: usize) -> (Tensor, Tensor) {
    let target = uniform(rng, &[len], -1.0, 1.0);
    let x = Tensor::from_fn(vec![len], |i| {
        let mag = if rng.random::<bool>() {
            rng.random_range(0.05..0.8)
        } else {
            rng.random_range(1.2..2.5)
        };
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        target.data()[i] + sign * mag
    });
    (x, target)
}

/// A multibox case with a handful of matches per image and random logits.
fn multibox_point(rng: &mut ChaCha8Rng) -> (MultiboxFn, Tensor, Tensor) {
    let (n, d, classes) = (2, 12, 3);
    let defaults: Vec<BoundingBox> = (0..d).map(|_| random_box(rng)).collect();
    let assignments: Vec<Assignment> = (0..n)
        .map(|_| {
            let count = rng.random_range(1..3);
            let gts: Vec<GroundTruth> = (0..count)
                .map(|_| {
                    let mut bbox = defaults[rng.random_range(0..d)];
                    bbox.cx += rng.random_range(-0.02..0.02);
                    GroundTruth {
                        bbox,
                        class_id: rng.random_range(0..classes - 1),
                    }
                })
                .collect();
            ganshot::detector::match_boxes(&gts, &defaults, 0.5).unwrap()
        })
        .collect();
    // Logits spread widely so mined negatives are separated by far more
    // than the finite-difference step.
    let logits = Tensor::from_fn(vec![n, d, classes], |i| (i as f32 * 0.37).sin() * 3.0 + rng.random_range(-0.1..0.1));
    // Offsets kept within 0.8 of the targets, inside the quadratic zone.
    let offsets = {
        let mut v = vec![0.0f32; n * d * 4];
        for (img, a) in assignments.iter().enumerate() {
            for j in 0..d {
                for k in 0..4 {
                    v[(img * d + j) * 4 + k] = a.targets[j][k] + rng.random_range(-0.8..0.8);
                }
            }
        }
        Tensor::new(vec![n, d, 4], v).unwrap()
    };
    (MultiboxFn { assignments }, logits, offsets)
}

/// Runs every differentiable op through the finite-difference check at
/// [`GRAD_POINTS`] random points each.
pub fn gradient_suite(seed: u64) -> Vec<GradResult> {
    let mut r = rng(seed);
    let mut results = Vec::new();
    let mut record = |op: &'static str, tolerance: f64, errs: Vec<f64>| {
        results.push(GradResult {
            op,
            worst: errs.into_iter().fold(0.0, f64::max),
            tolerance,
        });
    };
    let pts = 0..GRAD_POINTS;

    record("conv2d", GRAD_TOL, pts.clone().map(|_| {
        let f = ConvFn { w: uniform(&mut r, &[2, 4, 3, 3], -1.0, 1.0) };
        worst(&f, &[
            Probe::new(uniform(&mut r, &[2, 3, 6, 6], -1.0, 1.0)),
            Probe::new(uniform(&mut r, &[4, 3, 3, 3], -0.5, 0.5)),
            Probe::new(uniform(&mut r, &[4], -0.5, 0.5)),
        ])
    }).collect());

    record("conv_transpose2d", GRAD_TOL, pts.clone().map(|_| {
        let f = ConvTFn { w: uniform(&mut r, &[2, 4, 8, 8], -1.0, 1.0) };
        worst(&f, &[
            Probe::new(uniform(&mut r, &[2, 3, 4, 4], -1.0, 1.0)),
            Probe::new(uniform(&mut r, &[3, 4, 4, 4], -0.5, 0.5)),
            Probe::new(uniform(&mut r, &[4], -0.5, 0.5)),
        ])
    }).collect());

    record("leaky_relu", GRAD_TOL, pts.clone().map(|_| {
        let f = LeakyFn { w: uniform(&mut r, &[3, 7], -1.0, 1.0) };
        worst(&f, &[Probe::new(away_from_zero(&mut r, &[3, 7], 0.05))])
    }).collect());

    record("sigmoid", GRAD_TOL, pts.clone().map(|_| {
        let f = SigmoidFn { w: uniform(&mut r, &[3, 7], -1.0, 1.0) };
        worst(&f, &[Probe::new(uniform(&mut r, &[3, 7], -4.0, 4.0))])
    }).collect());

    record("tanh", GRAD_TOL, pts.clone().map(|_| {
        let f = TanhFn { w: uniform(&mut r, &[3, 7], -1.0, 1.0) };
        worst(&f, &[Probe::new(uniform(&mut r, &[3, 7], -2.5, 2.5))])
    }).collect());

    record("bce_loss", GRAD_TOL, pts.clone().map(|_| {
        let f = BceFn {
            target: uniform(&mut r, &[12], 0.0, 1.0),
            weights: uniform(&mut r, &[12], 0.5, 1.5),
        };
        worst(&f, &[Probe::new(uniform(&mut r, &[12], 0.05, 0.95))])
    }).collect());

    record("maxpool2d", GRAD_TOL, pts.clone().map(|_| {
        // A random permutation of well-separated levels: no ties within a window.
        let mut levels: Vec<f32> = (0..2 * 2 * 6 * 6).map(|i| i as f32 * 0.05).collect();
        for i in (1..levels.len()).rev() {
            levels.swap(i, r.random_range(0..=i));
        }
        let f = MaxPoolFn { w: uniform(&mut r, &[2, 2, 3, 3], -1.0, 1.0) };
        worst(&f, &[Probe::new(Tensor::new(vec![2, 2, 6, 6], levels).unwrap())])
    }).collect());

    record("matmul", GRAD_TOL, pts.clone().map(|_| {
        let f = MatMulFn { w: uniform(&mut r, &[4, 5], -1.0, 1.0) };
        worst(&f, &[
            Probe::new(uniform(&mut r, &[4, 6], -1.0, 1.0)),
            Probe::new(uniform(&mut r, &[6, 5], -1.0, 1.0)),
        ])
    }).collect());

    record("batchnorm", GRAD_TOL, pts.clone().map(|_| {
        let f = BatchNormFn { w: uniform(&mut r, &[4, 3, 2, 2], -1.0, 1.0) };
        worst(&f, &[
            Probe::new(uniform(&mut r, &[4, 3, 2, 2], -2.0, 2.0)),
            Probe::new(uniform(&mut r, &[3], 0.5, 1.5)),
            Probe::new(uniform(&mut r, &[3], -0.5, 0.5)),
        ])
    }).collect());

    record("softmax", GRAD_TOL, pts.clone().map(|_| {
        let f = SoftmaxFn { w: uniform(&mut r, &[3, 5], -1.0, 1.0) };
        worst(&f, &[Probe::new(uniform(&mut r, &[3, 5], -3.0, 3.0))])
    }).collect());

    record("smooth_l1", GRAD_TOL, pts.clone().map(|_| {
        let (x, target) = smooth_l1_point(&mut r, 16);
        worst(&SmoothL1Fn { target }, &[Probe::new(x)])
    }).collect());

    record("multibox_loss", MULTIBOX_TOL, pts.map(|_| {
        let (f, logits, offsets) = multibox_point(&mut r);
        worst(&f, &[Probe::new(logits), Probe::new(offsets)])
    }).collect());

    results
}

/// Three images, five objects, six detections with one duplicate and one
/// stray box; one object is never detected. Hand count: TP 4, FP 2, FN 1.
pub fn three_image_fixture() -> (Vec<Vec<Detection>>, Vec<Vec<GroundTruth>>) {
    let gt = |x0: f32, y0: f32| GroundTruth {
        bbox: BoundingBox::from_corners(x0, y0, x0 + 0.2, y0 + 0.3),
        class_id: 0,
    };
    let det = |x0: f32, y0: f32, score: f32| Detection {
        bbox: BoundingBox::from_corners(x0, y0, x0 + 0.2, y0 + 0.3),
        class_id: 0,
        score,
    };
    let gts = vec![
        vec![gt(0.1, 0.1), gt(0.6, 0.1)],
        vec![gt(0.1, 0.5), gt(0.6, 0.6)],
        vec![gt(0.3, 0.3)],
    ];
    let dets = vec![
        vec![det(0.1, 0.1, 0.9), det(0.11, 0.1, 0.8), det(0.6, 0.1, 0.7)],
        vec![det(0.1, 0.5, 0.9), det(0.7, 0.0, 0.6)],
        vec![det(0.3, 0.3, 0.95)],
    ];
    (dets, gts)
}

/// Largest absolute gap between the library convolution (both algorithms)
/// and [`naive_conv2d`] over a spread of geometries.
pub fn conv_oracle_max_diff(seed: u64) -> f64 {
    use ganshot::tensor_core::conv::conv2d_forward;
    use ganshot::tensor_core::ConvAlgorithm;
    let mut r = rng(seed);
    let geometries = [
        // (n, c, h, w, o, k, stride, pad)
        (1, 1, 5, 5, 1, 3, 1, 0),
        (2, 3, 8, 8, 4, 3, 1, 1),
        (2, 3, 9, 7, 5, 3, 2, 1),
        (1, 4, 16, 16, 8, 4, 2, 1),
        (3, 2, 6, 6, 3, 1, 1, 0),
        (1, 3, 7, 7, 2, 5, 2, 2),
        (2, 8, 4, 4, 1, 4, 1, 0),
    ];
    let mut worst = 0.0f64;
    for (n, c, h, w, o, k, stride, pad) in geometries {
        let x = uniform(&mut r, &[n, c, h, w], -1.0, 1.0);
        let kern = uniform(&mut r, &[o, c, k, k], -1.0, 1.0);
        let bias = uniform(&mut r, &[o], -1.0, 1.0);
        let want = naive_conv2d(&x, &kern, Some(&bias), stride, pad);
        for alg in [ConvAlgorithm::Direct, ConvAlgorithm::Im2col] {
            let got = conv2d_forward(&x, &kern, Some(&bias), stride, pad, alg).unwrap();
            assert_eq!(got.len(), want.len());
            for (g, w) in got.data().iter().zip(&want) {
                worst = worst.max((*g as f64 - w).abs());
            }
        }
    }
    worst
}

/// Random detection sets on which the library NMS and [`brute_nms`]
/// disagree.
pub fn nms_mismatches(seed: u64, sets: usize) -> usize {
    let mut r = rng(seed);
    (0..sets)
        .filter(|i| {
            let dets = random_detections(&mut r, 40);
            let threshold = [0.2, 0.3, 0.5, 0.7][i % 4];
            ganshot::evalkit::nms(&dets, threshold) != brute_nms(&dets, threshold)
        })
        .count()
}

/// Synthetic scenes on which the library matcher and
/// [`exhaustive_match`] disagree, against the detector's own defaults.
pub fn matcher_mismatches(first_seed: u64, scenes: usize) -> usize {
    use ganshot::data_io::{synth_scenes, SceneParams};
    let defaults = ganshot::detector::build_ssd(2, 32).unwrap().defaults.boxes;
    let params = SceneParams {
        object_count: (0, 5),
        object_size_px: (3, 12),
        ..SceneParams::default()
    };
    synth_scenes(first_seed, scenes, &params)
        .unwrap()
        .iter()
        .filter(|s| ganshot::detector::match_boxes(&s.gts, &defaults, 0.5).unwrap() != exhaustive_match(&s.gts, &defaults, 0.5))
        .count()
}

/// Worst coordinate error of decode(encode(gt, d), d) against gt.
pub fn codec_round_trip_error(seed: u64, pairs: usize) -> f64 {
    use ganshot::detector::decode_offsets;
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let gt = random_box(&mut r);
        let d = random_box(&mut r);
        let back = decode_offsets(encode_offsets(&gt, &d).unwrap(), &d);
        for (a, b) in [(back.cx, gt.cx), (back.cy, gt.cy), (back.w, gt.w), (back.h, gt.h)] {
            worst = worst.max((a - b).abs() as f64);
        }
    }
    worst
}

/// `(name, computed, expected)` for the closed-form fixtures.
pub fn formula_fixtures() -> Vec<(&'static str, f64, f64)> {
    let mut tape: Tape = Tape::new();
    let x = tape.constant(Tensor::scalar(-2.0));
    let y = tape.leaky_relu(x, ActivationConfig::default());
    let leaky = tape.value(y).item().unwrap() as f64;

    let o = tape.constant(Tensor::scalar(0.5));
    let l = tape.bce_loss(o, &Tensor::scalar(1.0), None).unwrap();
    let bce = tape.value(l).item().unwrap() as f64;

    let half = Tensor::full(vec![8, 1], 0.5f32);
    let v = ganshot::gan::gan_value(&half, &half) as f64;

    let a = BoundingBox::from_corners(0.0, 0.0, 0.5, 0.5);
    let b = BoundingBox::from_corners(0.25, 0.25, 0.75, 0.75);
    let overlap = iou(&a, &b) as f64;

    vec![
        ("leaky_relu(-2)", leaky, -0.02),
        ("bce(0.5, 1)", bce, std::f64::consts::LN_2),
        ("gan_value at D=0.5", v, 2.0 * 0.5f64.ln()),
        ("IoU of half-overlapping squares", overlap, 1.0 / 7.0),
    ]
}

/// One labelled byte-format check and whether it held.
pub struct FormatCheck {
    pub name: &'static str,
    pub ok: bool,
    pub detail: String,
}

/// CIFAR length gate, checkpoint bitwise round trip and P6 quantization
/// bound, all through files under `dir`.
pub fn format_checks(dir: &std::path::Path, seed: u64) -> Vec<FormatCheck> {
    use ganshot::data_io::*;
    use ganshot::nn::NamedTensors;
    let mut r = rng(seed);
    let mut out = Vec::new();

    let records: Vec<CifarRecord> = (0..CIFAR_BATCH_RECORDS)
        .map(|i| {
            let mut pixels = Box::new([0u8; CIFAR_PIXELS]);
            r.fill(&mut pixels[..]);
            CifarRecord {
                label: (i % 10) as u8,
                pixels,
            }
        })
        .collect();
    let bytes = write_cifar(&records);
    let path = dir.join("data_batch_1.bin");
    std::fs::write(&path, &bytes).unwrap();
    let loaded = load_cifar_batch(&path);
    out.push(FormatCheck {
        name: "cifar accepts 30,730,000 bytes",
        ok: bytes.len() == 30_730_000 && loaded.as_ref().is_ok_and(|l| *l == records),
        detail: format!("{} bytes", bytes.len()),
    });
    let mut rejected = Vec::new();
    for len in [0, 3073, 30_730_000 - 3073, 30_730_000 - 1, 30_730_000 + 1, 30_730_000 + 3073] {
        let mut b = bytes.clone();
        b.resize(len, 0);
        rejected.push(matches!(parse_cifar_batch(&b), Err(ganshot::Error::Format(_))));
    }
    out.push(FormatCheck {
        name: "cifar rejects other lengths",
        ok: rejected.iter().all(|&x| x),
        detail: format!("{rejected:?}"),
    });

    let mut named = NamedTensors::new();
    named.insert("scalar".into(), Tensor::scalar(f32::MIN_POSITIVE));
    named.insert("w".into(), uniform(&mut r, &[4, 3, 3, 3], -10.0, 10.0));
    named.insert("odd".into(), Tensor::new(vec![3], vec![-0.0, f32::MAX, 1e-38]).unwrap());
    let ck = dir.join("model.ckpt");
    save_checkpoint(&ck, &named).unwrap();
    let back = load_checkpoint(&ck).unwrap();
    let bitwise = back.len() == named.len()
        && named.iter().zip(&back).all(|((ka, a), (kb, b))| {
            ka == kb
                && a.shape() == b.shape()
                && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    out.push(FormatCheck {
        name: "checkpoint round trip is bitwise",
        ok: bitwise,
        detail: format!("{} tensors", named.len()),
    });

    let img = uniform(&mut r, &[3, 17, 23], 0.0, 1.0);
    let p = dir.join("img.ppm");
    write_image(&p, &img).unwrap();
    let err = read_image(&p).unwrap().max_abs_diff(&img).unwrap();
    out.push(FormatCheck {
        name: "P6 round trip within 1/255",
        ok: err <= 1.0 / 255.0,
        detail: format!("max error {err:.3e}"),
    });
    out
}
