use super::matching::Assignment;
use crate::error::{Error, Result};
use crate::tensor_core::{Element, Tape, Tensor, Var};

/// Background defaults kept per positive by hard-negative mining.
pub const NEG_POS_RATIO: usize = 3;

/// Multibox loss over a batch.
///
/// `logits` is `[N, D, C+1]` (index 0 is background) and `offsets` is
/// `[N, D, 4]`. The result is `(CE(positives) + CE(mined negatives) +
/// smoothL1(positive offsets)) / matched`, where each image keeps its
/// `3 × positives` highest-loss background defaults (ties: lower index).
/// With no matches anywhere the loss is 0.
pub fn multibox_loss<T: Element>(
    tape: &mut Tape<T>,
    logits: Var,
    offsets: Var,
    assignments: &[Assignment],
) -> Result<Var> {
    let (n, d, classes) = match *tape.shape(logits) {
        [n, d, c] => (n, d, c),
        ref s => return Err(Error::Dimension(format!("multibox logits must be [N,D,C+1], got {s:?}"))),
    };
    if tape.shape(offsets) != [n, d, 4] {
        return Err(Error::Dimension(format!(
            "multibox offsets {:?} do not match logits {:?}",
            tape.shape(offsets),
            [n, d, classes]
        )));
    }
    if assignments.len() != n || assignments.iter().any(|a| a.labels.len() != d) {
        return Err(Error::Dimension(format!(
            "need {n} assignments of {d} defaults each"
        )));
    }
    if let Some(bad) = assignments.iter().flat_map(|a| &a.labels).find(|&&l| l >= classes) {
        return Err(Error::Dimension(format!("label {bad} out of range for {classes} logits")));
    }
    let matched: usize = assignments.iter().map(Assignment::num_matched).sum();
    if matched == 0 {
        let (a, b) = (tape.sum(logits), tape.sum(offsets));
        let s = tape.add(a, b)?;
        return Ok(tape.scale(s, T::zero()));
    }

    let logp = tape.log_softmax(logits)?;
    let inv = T::one() / T::from_usize(matched).unwrap();
    let mut picks = Vec::new();
    let mut loc_target = vec![T::zero(); n * d * 4];
    let mut loc_weight = vec![T::zero(); n * d * 4];
    {
        let lp = tape.value(logp).data();
        for (img, a) in assignments.iter().enumerate() {
            let base = img * d;
            let mut negatives: Vec<(T, usize)> = Vec::new();
            for j in 0..d {
                let row = (base + j) * classes;
                if a.matched[j].is_some() {
                    picks.push((row + a.labels[j], -inv));
                    for k in 0..4 {
                        loc_target[(base + j) * 4 + k] = T::from_f64_lossy(a.targets[j][k] as f64);
                        loc_weight[(base + j) * 4 + k] = inv;
                    }
                } else {
                    negatives.push((-lp[row], j));
                }
            }
            negatives.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal).then(x.1.cmp(&y.1)));
            let keep = (NEG_POS_RATIO * a.num_matched()).min(negatives.len());
            for &(_, j) in &negatives[..keep] {
                picks.push(((base + j) * classes, -inv));
            }
        }
    }
    let conf = tape.pick(logp, picks)?;
    let loc = tape.smooth_l1(
        offsets,
        &Tensor::new(vec![n, d, 4], loc_target)?,
        Some(&Tensor::new(vec![n, d, 4], loc_weight)?),
    )?;
    tape.add(conf, loc)
}
