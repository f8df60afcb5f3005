use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{GanConfig, NoiseKind};
use super::model::{run_generator, GanMode, GanModel};
use crate::data_io::EnhancerPair;
use crate::error::{Error, Result};
use crate::nn::{adam_step, forward, AdamState, Mode};
use crate::tensor_core::{upsample_nearest, Tape, Tensor, BCE_CLAMP};

/// `mean(ln d_real) + mean(ln(1 - d_fake))`, with both inputs clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn gan_value(d_real: &Tensor, d_fake: &Tensor) -> f32 {
    let clamp = |v: f32| (v as f64).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let mean = |t: &Tensor, f: &dyn Fn(f64) -> f64| t.data().iter().map(|&v| f(clamp(v))).sum::<f64>() / t.len() as f64;
    (mean(d_real, &|v| v.ln()) + mean(d_fake, &|v| (1.0 - v).ln())) as f32
}

/// Losses and discriminator outputs of one step or one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GanLossReport {
    pub d_loss: f32,
    pub g_loss: f32,
    pub value_v: f32,
    pub d_real_mean: f32,
    pub d_fake_mean: f32,
}

/// Result of a discriminator update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorReport {
    pub d_loss: f32,
    pub value_v: f32,
    pub d_real_mean: f32,
    pub d_fake_mean: f32,
}

/// Result of a generator update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorReport {
    pub g_loss: f32,
    pub adversarial: f32,
    /// Unweighted reconstruction term, when a target was supplied.
    pub reconstruction: Option<f32>,
}

/// `[0,1]` to `[-1,1]`.
pub fn to_signed(t: &Tensor) -> Tensor {
    t.map(|v| 2.0 * v - 1.0)
}

/// `[-1,1]` to `[0,1]`.
pub fn to_unit(t: &Tensor) -> Tensor {
    t.map(|v| (v + 1.0) / 2.0)
}

fn sample_noise(rng: &mut ChaCha8Rng, kind: NoiseKind, shape: Vec<usize>) -> Tensor {
    Tensor::from_fn(shape, |_| match kind {
        NoiseKind::Uniform => rng.random::<f32>(),
        NoiseKind::Gaussian => rng.sample(StandardNormal),
    })
}

/// Builds enhancement-generator input from `[N,C,h,w]` low-resolution
/// images in `[0,1]`: nearest-neighbour upsampling by `factor`, mapping to
/// `[-1,1]`, and one appended noise channel.
pub fn enhancer_input(low_res: &Tensor, factor: usize, kind: NoiseKind, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let up = to_signed(&upsample_nearest(low_res, factor)?);
    let [n, c, h, w] = up.dims4()?;
    let plane = h * w;
    let mut data = Vec::with_capacity(n * (c + 1) * plane);
    for sample in up.data().chunks_exact(c * plane) {
        data.extend_from_slice(sample);
        data.extend(sample_noise(rng, kind, vec![plane]).into_data());
    }
    Tensor::new(vec![n, c + 1, h, w], data)
}

/// Alternating adversarial updates with separate optimizer state per
/// network. Each step only ever writes the parameters of its own network.
pub struct GanTrainer {
    pub model: GanModel,
    g_state: AdamState,
    d_state: AdamState,
    rng: ChaCha8Rng,
}

impl GanTrainer {
    pub fn new(model: GanModel, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        GanTrainer {
            g_state: AdamState::new(model.cfg.adam),
            d_state: AdamState::new(model.cfg.adam),
            model,
            rng,
        }
    }

    pub fn into_model(self) -> GanModel {
        self.model
    }

    /// `[n, noise_dim, 1, 1]` noise for the unconditional generator.
    pub fn noise(&mut self, n: usize) -> Tensor {
        let shape = vec![n, self.model.cfg.noise_dim, 1, 1];
        sample_noise(&mut self.rng, self.model.noise_kind(), shape)
    }

    /// Generator input for `[N,C,h,w]` low-resolution images.
    pub fn conditional(&mut self, low_res: &Tensor) -> Result<Tensor> {
        let kind = self.model.noise_kind();
        enhancer_input(low_res, self.model.cfg.upscale_factor, kind, &mut self.rng)
    }

    /// Generator output in `(-1, 1)` without changing any model state.
    fn generate_detached(&self, gen_input: &Tensor) -> Result<Tensor> {
        let m = &self.model;
        let mut g = m.generator.clone();
        let mut tape = Tape::new();
        let bound = g.bind_constant(&mut tape);
        let y = run_generator(m, &mut g, &bound, &mut tape, gen_input, Mode::Train)?;
        Ok(tape.value(y).clone())
    }

    /// `bce(D(real), 1) + bce(D(G(input)), 0)`, applied to the
    /// discriminator only. `real` is in `[0,1]`.
    pub fn discriminator_step(&mut self, real: &Tensor, gen_input: &Tensor) -> Result<DiscriminatorReport> {
        let fake = self.generate_detached(gen_input)?;
        let m = &mut self.model;
        let mut tape = Tape::new();
        let bound = m.discriminator.bind(&mut tape);
        let xr = tape.constant(to_signed(real));
        let dr = forward(&m.d_spec, &mut m.discriminator, &bound, &mut tape, xr, Mode::Train)?;
        let xf = tape.constant(fake);
        let df = forward(&m.d_spec, &mut m.discriminator, &bound, &mut tape, xf, Mode::Train)?;
        let ones = Tensor::ones(tape.shape(dr).to_vec());
        let zeros = Tensor::zeros(tape.shape(df).to_vec());
        let lr = tape.bce_loss(dr, &ones, None)?;
        let lf = tape.bce_loss(df, &zeros, None)?;
        let loss = tape.add(lr, lf)?;
        let grads = tape.backward(loss)?;
        adam_step(&mut m.discriminator, &bound.gradients(&grads), &mut self.d_state)?;
        let (dr, df) = (tape.value(dr), tape.value(df));
        Ok(DiscriminatorReport {
            d_loss: tape.value(loss).item()?,
            value_v: gan_value(dr, df),
            d_real_mean: dr.sum() / dr.len() as f32,
            d_fake_mean: df.sum() / df.len() as f32,
        })
    }

    /// `bce(D(G(input)), 1)`, plus `λ · bce((G(input)+1)/2, target)` when a
    /// `[0,1]` target is given; applied to the generator only.
    pub fn generator_step(&mut self, gen_input: &Tensor, target: Option<&Tensor>) -> Result<GeneratorReport> {
        let m = &mut self.model;
        let mut tape = Tape::new();
        let mut g = m.generator.clone();
        let bound = g.bind(&mut tape);
        let y = run_generator(m, &mut g, &bound, &mut tape, gen_input, Mode::Train)?;
        let mut d = m.discriminator.clone();
        let d_bound = d.bind_constant(&mut tape);
        let dy = forward(&m.d_spec, &mut d, &d_bound, &mut tape, y, Mode::Train)?;
        let ones = Tensor::ones(tape.shape(dy).to_vec());
        let adv = tape.bce_loss(dy, &ones, None)?;
        let (loss, reconstruction) = match target {
            Some(t) => {
                if t.shape() != tape.shape(y) {
                    return Err(Error::Dimension(format!(
                        "reconstruction target {:?} does not match generator output {:?}",
                        t.shape(),
                        tape.shape(y)
                    )));
                }
                let unit = tape.rescale_unit(y);
                let rec = tape.bce_loss(unit, t, None)?;
                let weighted = tape.scale(rec, m.cfg.reconstruction_weight);
                (tape.add(adv, weighted)?, Some(tape.value(rec).item()?))
            }
            None => (adv, None),
        };
        let grads = tape.backward(loss)?;
        adam_step(&mut g, &bound.gradients(&grads), &mut self.g_state)?;
        m.generator = g;
        Ok(GeneratorReport {
            g_loss: tape.value(loss).item()?,
            adversarial: tape.value(adv).item()?,
            reconstruction,
        })
    }

    fn run(mut self, real: &[&Tensor], low_res: Option<&[&Tensor]>) -> Result<(GanModel, Vec<GanLossReport>)> {
        let n = real.len();
        if n == 0 {
            return Err(Error::Input("GAN training needs a non-empty dataset".into()));
        }
        let expected = [self.model.cfg.channels, self.model.cfg.image_size, self.model.cfg.image_size];
        if let Some(bad) = real.iter().find(|t| t.shape() != expected) {
            return Err(Error::Dimension(format!(
                "training images must be {expected:?}, got {:?}",
                bad.shape()
            )));
        }
        let batch = self.model.cfg.batch_size.min(n);
        let mut order: Vec<usize> = (0..n).collect();
        let mut history = Vec::with_capacity(self.model.cfg.epochs);
        for epoch in 1..=self.model.cfg.epochs {
            order.shuffle(&mut self.rng);
            let mut sum = [0.0f64; 5];
            let mut steps = 0usize;
            for chunk in order.chunks_exact(batch) {
                let real_b = Tensor::stack(&chunk.iter().map(|&i| real[i].clone()).collect::<Vec<_>>())?;
                let (d_in, g_in, target) = match low_res {
                    None => (self.noise(batch), self.noise(batch), None),
                    Some(lr) => {
                        let lr_b = Tensor::stack(&chunk.iter().map(|&i| lr[i].clone()).collect::<Vec<_>>())?;
                        (self.conditional(&lr_b)?, self.conditional(&lr_b)?, Some(real_b.clone()))
                    }
                };
                let d = self.discriminator_step(&real_b, &d_in)?;
                let g = self.generator_step(&g_in, target.as_ref())?;
                for (s, v) in sum.iter_mut().zip([d.d_loss, g.g_loss, d.value_v, d.d_real_mean, d.d_fake_mean]) {
                    *s += v as f64;
                }
                steps += 1;
            }
            let m = sum.map(|s| (s / steps as f64) as f32);
            let report = GanLossReport {
                d_loss: m[0],
                g_loss: m[1],
                value_v: m[2],
                d_real_mean: m[3],
                d_fake_mean: m[4],
            };
            log::info!(
                "gan epoch {epoch}: d_loss {:.4} g_loss {:.4} V {:.4} D(real) {:.3} D(fake) {:.3}",
                report.d_loss,
                report.g_loss,
                report.value_v,
                report.d_real_mean,
                report.d_fake_mean
            );
            history.push(report);
        }
        Ok((self.model, history))
    }
}

/// Trains the unconditional DCGAN on `[C,S,S]` images in `[0,1]`.
///
/// Each epoch visits a fresh shuffle in full batches; a trailing partial
/// batch is dropped unless the dataset is smaller than one batch.
pub fn train_gan(images: &[Tensor], cfg: &GanConfig, seed: u64) -> Result<(GanModel, Vec<GanLossReport>)> {
    if images.is_empty() {
        return Err(Error::Input("GAN training needs a non-empty dataset".into()));
    }
    let model = GanModel::init(cfg, GanMode::Unconditional, seed)?;
    let real: Vec<&Tensor> = images.iter().collect();
    GanTrainer::new(model, seed).run(&real, None)
}

/// Trains the enhancement GAN on low/high resolution pairs.
pub fn train_enhancer(pairs: &[EnhancerPair], cfg: &GanConfig, seed: u64) -> Result<(GanModel, Vec<GanLossReport>)> {
    if pairs.is_empty() {
        return Err(Error::Input("enhancer training needs a non-empty dataset".into()));
    }
    let model = GanModel::init(cfg, GanMode::Enhancer, seed)?;
    let real: Vec<&Tensor> = pairs.iter().map(|p| &p.high_res).collect();
    let low: Vec<&Tensor> = pairs.iter().map(|p| &p.low_res).collect();
    if let Some(p) = pairs.iter().find(|p| {
        p.low_res.shape().get(1).map(|h| h * cfg.upscale_factor) != Some(cfg.image_size)
    }) {
        return Err(Error::Dimension(format!(
            "low-res {:?} times {} does not give {}-pixel images",
            p.low_res.shape(),
            cfg.upscale_factor,
            cfg.image_size
        )));
    }
    GanTrainer::new(model, seed).run(&real, Some(&low))
}

pub fn write_loss_csv(path: &Path, history: &[GanLossReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "d_loss", "g_loss", "value_v", "d_real_mean", "d_fake_mean"])?;
    for (i, r) in history.iter().enumerate() {
        w.write_record(&[
            (i + 1).to_string(),
            r.d_loss.to_string(),
            r.g_loss.to_string(),
            r.value_v.to_string(),
            r.d_real_mean.to_string(),
            r.d_fake_mean.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
