use super::build::{build_dcgan, build_enhancer};
use super::config::{GanConfig, NoiseKind};
use crate::error::{Error, Result};
use crate::nn::{forward, init_params, Bound, Mode, ModelSpec, NamedTensors, ParamSet};
use crate::tensor_core::{Tape, Tensor, Var};

/// What the generator consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GanMode {
    /// Noise vector `[noise_dim, 1, 1]` to image.
    Unconditional,
    /// Upsampled low-resolution image plus a noise channel to image.
    Enhancer,
}

/// A generator/discriminator pair with its configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    pub cfg: GanConfig,
    pub mode: GanMode,
    pub g_spec: ModelSpec,
    pub d_spec: ModelSpec,
    pub generator: ParamSet,
    pub discriminator: ParamSet,
}

/// The upsampled input is clamped to this magnitude before `atanh`.
const SKIP_LIMIT: f32 = 0.999;

/// Records the generator forward pass. In enhancement mode the network
/// output is a pre-`tanh` correction to the upsampled image carried in the
/// first `channels` input planes, so `G = tanh(atanh(up) + net(input))`
/// and an untrained generator reproduces pixel replication.
pub(crate) fn run_generator(
    model: &GanModel,
    params: &mut ParamSet,
    bound: &Bound,
    tape: &mut Tape,
    input: &Tensor,
    mode: Mode,
) -> Result<Var> {
    let x = tape.constant(input.clone());
    let net = forward(&model.g_spec, params, bound, tape, x, mode)?;
    if model.mode == GanMode::Unconditional {
        return Ok(net);
    }
    let [n, c1, h, w] = input.dims4()?;
    let c = c1 - 1;
    let plane = h * w;
    let mut base = Vec::with_capacity(n * c * plane);
    for sample in input.data().chunks_exact(c1 * plane) {
        base.extend(sample[..c * plane].iter().map(|v| v.clamp(-SKIP_LIMIT, SKIP_LIMIT).atanh()));
    }
    let base = tape.constant(Tensor::new(vec![n, c, h, w], base)?);
    let sum = tape.add(net, base)?;
    Ok(tape.tanh(sum))
}

const META_KEYS: [&str; 7] = [
    "meta.mode",
    "meta.noise_dim",
    "meta.image_size",
    "meta.channels",
    "meta.base_feature_maps",
    "meta.upscale_factor",
    "meta.enhancer_depth",
];

impl GanModel {
    /// Fresh parameters: the generator from `seed`, the discriminator from
    /// `seed + 1`.
    pub fn init(cfg: &GanConfig, mode: GanMode, seed: u64) -> Result<Self> {
        let (g_spec, d_spec) = match mode {
            GanMode::Unconditional => build_dcgan(cfg)?,
            GanMode::Enhancer => build_enhancer(cfg)?,
        };
        Ok(GanModel {
            generator: init_params(&g_spec, seed)?,
            discriminator: init_params(&d_spec, seed.wrapping_add(1))?,
            cfg: cfg.clone(),
            mode,
            g_spec,
            d_spec,
        })
    }

    pub fn to_named(&self) -> NamedTensors {
        let c = &self.cfg;
        let mode = match self.mode {
            GanMode::Unconditional => 0,
            GanMode::Enhancer => 1,
        };
        let values = [
            mode,
            c.noise_dim,
            c.image_size,
            c.channels,
            c.base_feature_maps,
            c.upscale_factor,
            c.enhancer_depth,
        ];
        let mut out: NamedTensors = META_KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| (k.to_string(), Tensor::scalar(v as f32)))
            .collect();
        out.extend(self.generator.to_named("g."));
        out.extend(self.discriminator.to_named("d."));
        out
    }

    /// Rebuilds a model from [`GanModel::to_named`] output. Training-only
    /// settings (epochs, batch size, optimizer) come from `base`.
    pub fn from_named(named: &NamedTensors, base: &GanConfig) -> Result<Self> {
        let mut meta = [0usize; 7];
        for (slot, key) in meta.iter_mut().zip(META_KEYS) {
            let v = named
                .get(key)
                .ok_or_else(|| Error::Checkpoint(format!("not a GAN checkpoint: missing {key}")))?
                .item()?;
            *slot = v as usize;
        }
        let mode = match meta[0] {
            0 => GanMode::Unconditional,
            1 => GanMode::Enhancer,
            m => return Err(Error::Checkpoint(format!("unknown GAN mode {m}"))),
        };
        let cfg = GanConfig {
            noise_dim: meta[1],
            image_size: meta[2],
            channels: meta[3],
            base_feature_maps: meta[4],
            upscale_factor: meta[5],
            enhancer_depth: meta[6],
            noise: base.noise,
            ..base.clone()
        };
        let mut model =
            GanModel::init(&cfg, mode, 0).map_err(|e| Error::Checkpoint(format!("GAN checkpoint metadata: {e}")))?;
        model.generator.load_named(named, "g.")?;
        model.discriminator.load_named(named, "d.")?;
        Ok(model)
    }

    pub(crate) fn noise_kind(&self) -> NoiseKind {
        self.cfg.noise
    }
}
