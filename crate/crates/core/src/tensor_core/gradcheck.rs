//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// A scalar-valued function that can be recorded at any precision.
///
/// The analytic gradient is taken from an `f32` recording; the finite
/// differences are evaluated on an `f64` recording of the same function.
pub trait ScalarFn {
    fn eval<T: Element>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Result<Var>;
}

/// One input of the checked function.
#[derive(Clone, Debug)]
pub struct Probe {
    pub point: Tensor<f32>,
    pub frozen: bool,
}

impl Probe {
    pub fn new(point: Tensor<f32>) -> Self {
        Probe {
            point,
            frozen: false,
        }
    }

    pub fn frozen(point: Tensor<f32>) -> Self {
        Probe {
            point,
            frozen: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error per input; `None` for frozen inputs.
    pub errors: Vec<Option<f64>>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().flatten().copied().fold(0.0, f64::max)
    }
}

fn record<T: Element, F: ScalarFn>(f: &F, points: &[Tensor<T>], frozen: &[bool]) -> Result<(Tape<T>, Vec<Var>, Var)> {
    let mut tape = Tape::new();
    let inputs: Vec<Var> = points
        .iter()
        .zip(frozen)
        .map(|(p, &fz)| tape.leaf(p.clone(), !fz))
        .collect();
    let out = f.eval(&mut tape, &inputs)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            tape.value(out).shape()
        )));
    }
    Ok((tape, inputs, out))
}

/// Returns `max_i |analytic_i - fd_i| / max(1, |fd_i|)` per input, where
/// `fd_i` is the central difference with step `h` computed in `f64`.
pub fn grad_check<F: ScalarFn>(f: &F, probes: &[Probe], h: f64) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::Input(format!("finite-difference step must be positive, got {h}")));
    }
    let frozen: Vec<bool> = probes.iter().map(|p| p.frozen).collect();
    let points32: Vec<Tensor<f32>> = probes.iter().map(|p| p.point.clone()).collect();
    let (tape, inputs, out) = record(f, &points32, &frozen)?;
    let grads = tape.backward(out)?;

    let mut points64: Vec<Tensor<f64>> = points32.iter().map(Tensor::cast).collect();
    let eval64 = |pts: &[Tensor<f64>]| -> Result<f64> {
        let (tape, _, out) = record(f, pts, &frozen)?;
        tape.value(out).item()
    };

    let mut errors = Vec::with_capacity(probes.len());
    for (idx, probe) in probes.iter().enumerate() {
        if probe.frozen {
            errors.push(None);
            continue;
        }
        let zeros = Tensor::zeros(probe.point.shape().to_vec());
        let analytic = grads.get(inputs[idx]).unwrap_or(&zeros);
        let mut worst = 0.0f64;
        for i in 0..probe.point.len() {
            let orig = points64[idx].data()[i];
            points64[idx].data_mut()[i] = orig + h;
            let plus = eval64(&points64)?;
            points64[idx].data_mut()[i] = orig - h;
            let minus = eval64(&points64)?;
            points64[idx].data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let a = analytic.data()[i] as f64;
            worst = worst.max((a - fd).abs() / fd.abs().max(1.0));
        }
        errors.push(Some(worst));
    }
    Ok(GradCheckReport { errors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::ActivationConfig;

    struct LeakySum;
    impl ScalarFn for LeakySum {
        fn eval<T: Element>(&self, tape: &mut Tape<T>, x: &[Var]) -> Result<Var> {
            let y = tape.leaky_relu(x[0], ActivationConfig::default());
            Ok(tape.sum(y))
        }
    }

    struct Bce;
    impl ScalarFn for Bce {
        fn eval<T: Element>(&self, tape: &mut Tape<T>, x: &[Var]) -> Result<Var> {
            let t = Tensor::from_fn(tape.shape(x[0]).to_vec(), |i| T::from_f64_lossy([1.0, 0.0, 0.3][i % 3]));
            tape.bce_loss(x[0], &t, None)
        }
    }

    struct Product;
    impl ScalarFn for Product {
        fn eval<T: Element>(&self, tape: &mut Tape<T>, x: &[Var]) -> Result<Var> {
            let p = tape.mul(x[0], x[1])?;
            Ok(tape.sum(p))
        }
    }

    #[test]
    fn leaky_relu_away_from_kink() {
        let x = Tensor::new(vec![4], vec![0.5, -0.7, 1.3, -2.0]).unwrap();
        let r = grad_check(&LeakySum, &[Probe::new(x)], 1e-3).unwrap();
        assert!(r.max_error() < 1e-6, "{r:?}");
    }

    #[test]
    fn bce_at_half() {
        let o = Tensor::full(vec![3], 0.5f32);
        let r = grad_check(&Bce, &[Probe::new(o)], 1e-3).unwrap();
        assert!(r.max_error() < 1e-5, "{r:?}");
    }

    #[test]
    fn frozen_input_is_absent() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![3.0, -1.0]).unwrap();
        let r = grad_check(&Product, &[Probe::new(a), Probe::frozen(b)], 1e-3).unwrap();
        assert!(r.errors[0].is_some());
        assert!(r.errors[1].is_none());
    }

    #[test]
    fn rejects_bad_step() {
        let a = Tensor::new(vec![1], vec![1.0]).unwrap();
        assert!(grad_check(&LeakySum, &[Probe::new(a)], 0.0).is_err());
    }
}
