use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Every fourth sample (index ≡ 3 mod 4) is held out for scoring.
pub const PROBE_HOLDOUT_STRIDE: usize = 4;

/// Ridge-regression classifier on standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    /// `[classes][dims]`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    /// Accuracy on the held-out samples.
    pub accuracy: f64,
}

impl LinearProbe {
    pub fn predict(&self, features: &[f32]) -> usize {
        let z: Vec<f64> = features
            .iter()
            .zip(self.mean.iter().zip(&self.inv_std))
            .map(|(&v, (m, s))| (v as f64 - m) * s)
            .collect();
        let mut best = (f64::NEG_INFINITY, 0);
        for (c, (w, b)) in self.weights.iter().zip(&self.bias).enumerate() {
            let score = b + w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
            if score > best.0 {
                best = (score, c);
            }
        }
        best.1
    }
}

/// One-vs-rest least squares with an L2 penalty, solved in closed form.
///
/// Features are standardized with training-split statistics; targets are
/// ±1 per class. The primal normal equations are used when there are no
/// more dimensions than samples, the dual (kernel) form otherwise.
pub fn linear_probe(features: &[Vec<f32>], labels: &[usize], l2: f64) -> Result<LinearProbe> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::Input(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    if !(l2 > 0.0) {
        return Err(Error::Input("probe L2 penalty must be positive".into()));
    }
    let dims = features[0].len();
    if dims == 0 || features.iter().any(|f| f.len() != dims) {
        return Err(Error::Dimension("feature rows must share a positive length".into()));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let (train, test): (Vec<usize>, Vec<usize>) =
        (0..features.len()).partition(|i| i % PROBE_HOLDOUT_STRIDE != PROBE_HOLDOUT_STRIDE - 1);
    let mut seen = vec![false; classes];
    train.iter().for_each(|&i| seen[labels[i]] = true);
    if seen.iter().filter(|s| **s).count() < 2 || test.is_empty() {
        return Err(Error::Input(
            "linear probe needs at least two classes in training and a non-empty held-out split".into(),
        ));
    }

    let n = train.len();
    let mut mean = vec![0.0f64; dims];
    for &i in &train {
        for (m, &v) in mean.iter_mut().zip(&features[i]) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0f64; dims];
    for &i in &train {
        for ((s, &v), m) in var.iter_mut().zip(&features[i]).zip(&mean) {
            *s += (v as f64 - m).powi(2);
        }
    }
    let inv_std: Vec<f64> = var
        .iter()
        .map(|s| {
            let sd = (s / n as f64).sqrt();
            if sd > 1e-12 {
                1.0 / sd
            } else {
                0.0
            }
        })
        .collect();

    let x = DMatrix::from_fn(n, dims, |r, c| (features[train[r]][c] as f64 - mean[c]) * inv_std[c]);
    let y = DMatrix::from_fn(n, classes, |r, c| if labels[train[r]] == c { 1.0 } else { -1.0 });
    let y_mean: Vec<f64> = (0..classes).map(|c| y.column(c).mean()).collect();
    let yc = DMatrix::from_fn(n, classes, |r, c| y[(r, c)] - y_mean[c]);

    let w = if dims <= n {
        let mut a = x.transpose() * &x;
        for i in 0..dims {
            a[(i, i)] += l2;
        }
        let chol = a
            .cholesky()
            .ok_or_else(|| Error::Input("probe normal equations are not positive definite".into()))?;
        chol.solve(&(x.transpose() * &yc))
    } else {
        let mut k = &x * x.transpose();
        for i in 0..n {
            k[(i, i)] += l2;
        }
        let chol = k
            .cholesky()
            .ok_or_else(|| Error::Input("probe kernel system is not positive definite".into()))?;
        x.transpose() * chol.solve(&yc)
    };

    let mut probe = LinearProbe {
        weights: (0..classes).map(|c| w.column(c).iter().copied().collect()).collect(),
        bias: y_mean,
        mean,
        inv_std,
        accuracy: 0.0,
    };
    let correct = test.iter().filter(|&&i| probe.predict(&features[i]) == labels[i]).count();
    probe.accuracy = correct as f64 / test.len() as f64;
    Ok(probe)
}
