//! `key=value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gan::NoiseKind;

/// Every setting a command can read. Defaults follow the published
/// training setup where one exists.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub image_size: usize,
    pub upscale_factor: usize,
    pub score_threshold: f32,
    pub nms_threshold: f32,
    pub iou_match_threshold: f32,
    pub out: PathBuf,
    pub threads: usize,
    pub data: Option<PathBuf>,
    pub cifar: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub gan: Option<PathBuf>,
    pub ssd: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub count: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub object_min_px: usize,
    pub object_max_px: usize,
    pub noise_level: f32,
    pub gan_mode: String,
    pub noise_dim: usize,
    pub base_feature_maps: usize,
    pub enhancer_depth: usize,
    pub noise: NoiseKind,
    pub reconstruction_weight: f32,
    pub detector_width: usize,
    pub detector_epochs: usize,
    pub detector_batch_size: usize,
    pub detector_lr: f32,
    pub annotate: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            epochs: 25,
            batch_size: 72,
            image_size: 32,
            upscale_factor: 4,
            score_threshold: 0.5,
            nms_threshold: 0.2,
            iou_match_threshold: 0.5,
            out: PathBuf::from("out"),
            threads: 1,
            data: None,
            cifar: None,
            input: None,
            gan: None,
            ssd: None,
            detections: None,
            gt: None,
            count: 2000,
            objects_min: 1,
            objects_max: 3,
            object_min_px: 4,
            object_max_px: 16,
            noise_level: 0.03,
            gan_mode: "enhancer".into(),
            noise_dim: 100,
            base_feature_maps: 64,
            enhancer_depth: 8,
            noise: NoiseKind::Uniform,
            reconstruction_weight: 10.0,
            detector_width: 16,
            detector_epochs: 20,
            detector_batch_size: 32,
            detector_lr: 2e-3,
            annotate: 8,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn path_opt(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or(String::new(), |p| p.display().to_string())
}

impl RunConfig {
    /// Applies one `key=value` setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let opt = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "seed" => self.seed = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            "upscale_factor" => self.upscale_factor = parse(key, value)?,
            "score_threshold" => self.score_threshold = parse(key, value)?,
            "nms_threshold" => self.nms_threshold = parse(key, value)?,
            "iou_match_threshold" => self.iou_match_threshold = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "threads" => self.threads = parse(key, value)?,
            "data" => self.data = opt(value),
            "cifar" => self.cifar = opt(value),
            "input" => self.input = opt(value),
            "gan" => self.gan = opt(value),
            "ssd" => self.ssd = opt(value),
            "detections" => self.detections = opt(value),
            "gt" => self.gt = opt(value),
            "count" => self.count = parse(key, value)?,
            "objects_min" => self.objects_min = parse(key, value)?,
            "objects_max" => self.objects_max = parse(key, value)?,
            "object_min_px" => self.object_min_px = parse(key, value)?,
            "object_max_px" => self.object_max_px = parse(key, value)?,
            "noise_level" => self.noise_level = parse(key, value)?,
            "gan_mode" => {
                if value != "dcgan" && value != "enhancer" {
                    return Err(Error::Config(format!("gan_mode must be dcgan or enhancer, got {value:?}")));
                }
                self.gan_mode = value.to_string();
            }
            "noise_dim" => self.noise_dim = parse(key, value)?,
            "base_feature_maps" => self.base_feature_maps = parse(key, value)?,
            "enhancer_depth" => self.enhancer_depth = parse(key, value)?,
            "noise" => {
                self.noise = match value {
                    "uniform" => NoiseKind::Uniform,
                    "gaussian" => NoiseKind::Gaussian,
                    _ => return Err(Error::Config(format!("noise must be uniform or gaussian, got {value:?}"))),
                }
            }
            "reconstruction_weight" => self.reconstruction_weight = parse(key, value)?,
            "detector_width" => self.detector_width = parse(key, value)?,
            "detector_epochs" => self.detector_epochs = parse(key, value)?,
            "detector_batch_size" => self.detector_batch_size = parse(key, value)?,
            "detector_lr" => self.detector_lr = parse(key, value)?,
            "annotate" => self.annotate = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a config file: one `key=value` per line, `#` comments and
    /// blank lines ignored.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key=value, got {line:?}", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Every setting as `key=value` lines, readable by [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let noise = match self.noise {
            NoiseKind::Uniform => "uniform",
            NoiseKind::Gaussian => "gaussian",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("image_size", self.image_size.to_string()),
            ("upscale_factor", self.upscale_factor.to_string()),
            ("score_threshold", self.score_threshold.to_string()),
            ("nms_threshold", self.nms_threshold.to_string()),
            ("iou_match_threshold", self.iou_match_threshold.to_string()),
            ("out", self.out.display().to_string()),
            ("threads", self.threads.to_string()),
            ("data", path_opt(&self.data)),
            ("cifar", path_opt(&self.cifar)),
            ("input", path_opt(&self.input)),
            ("gan", path_opt(&self.gan)),
            ("ssd", path_opt(&self.ssd)),
            ("detections", path_opt(&self.detections)),
            ("gt", path_opt(&self.gt)),
            ("count", self.count.to_string()),
            ("objects_min", self.objects_min.to_string()),
            ("objects_max", self.objects_max.to_string()),
            ("object_min_px", self.object_min_px.to_string()),
            ("object_max_px", self.object_max_px.to_string()),
            ("noise_level", self.noise_level.to_string()),
            ("gan_mode", self.gan_mode.clone()),
            ("noise_dim", self.noise_dim.to_string()),
            ("base_feature_maps", self.base_feature_maps.to_string()),
            ("enhancer_depth", self.enhancer_depth.to_string()),
            ("noise", noise.to_string()),
            ("reconstruction_weight", self.reconstruction_weight.to_string()),
            ("detector_width", self.detector_width.to_string()),
            ("detector_epochs", self.detector_epochs.to_string()),
            ("detector_batch_size", self.detector_batch_size.to_string()),
            ("detector_lr", self.detector_lr.to_string()),
            ("annotate", self.annotate.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in pairs {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}
