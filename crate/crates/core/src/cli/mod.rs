//! Command-line driver: one subcommand per pipeline stage.

mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::RunConfig;

use crate::data_io::{
    downsample_box, load_checkpoint, load_cifar_batch, read_gt_csv, read_image, save_checkpoint, synth_scenes,
    write_gt_csv, write_image, EnhancerPair, ObjectClass, SceneParams, SyntheticScene,
};
use crate::detector::{
    build_ssd_with_width, detect_all, read_detections_csv, train_detector, write_detections_csv, DetectorConfig,
    GroundTruth, Ssd,
};
use crate::error::{Error, Result};
use crate::evalkit::{
    annotate, compare_pipelines, is_tiny, nms, pr_curve, write_compare_csv, write_pr_csv, EvalConfig, MatchedSet,
};
use crate::gan::{enhance, train_enhancer, train_gan, write_loss_csv, GanConfig, GanModel};
use crate::nn::AdamConfig;
use crate::tensor_core::Tensor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Environment variable consulted for the output directory when neither
/// `--out` nor the config file sets one.
pub const OUT_ENV: &str = "GANSHOT_OUT";

pub const RUN_LOG: &str = "run.log";

/// Images per generator/detector batch at inference time.
const INFER_BATCH: usize = 50;

#[derive(Parser, Debug)]
#[command(name = "ganshot", version, about = "GAN-enhanced tiny-object detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// key=value configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training epochs of the stage this command trains.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Mini-batch size of the stage this command trains.
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    image_size: Option<usize>,
    #[arg(long, global = true)]
    upscale: Option<usize>,
    #[arg(long, global = true)]
    score_threshold: Option<f32>,
    #[arg(long, global = true)]
    nms_threshold: Option<f32>,
    /// Output directory (falls back to $GANSHOT_OUT, then ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Dataset directory holding images/*.ppm and gt.csv.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// CIFAR-10 binary batch file (train-gan in dcgan mode).
    #[arg(long, global = true)]
    cifar: Option<PathBuf>,
    /// Directory of .ppm images to enhance or detect on.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// GAN checkpoint.
    #[arg(long, global = true)]
    gan: Option<PathBuf>,
    /// Detector checkpoint.
    #[arg(long, global = true)]
    ssd: Option<PathBuf>,
    /// Detections CSV to evaluate.
    #[arg(long, global = true)]
    detections: Option<PathBuf>,
    /// Ground-truth CSV to evaluate against.
    #[arg(long, global = true)]
    gt: Option<PathBuf>,
    /// Number of scenes gen-data writes.
    #[arg(long, global = true)]
    count: Option<usize>,
    /// GAN variant: dcgan or enhancer.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Any other configuration key, as key=value. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Write synthetic scenes: images/, low_res/, gt.csv.
    GenData,
    /// Train the GAN; writes gan.ckpt and gan_loss.csv.
    TrainGan,
    /// Train the detector; writes ssd.ckpt and detector_loss.csv.
    TrainDetector,
    /// Enhance low-resolution images into enhanced/.
    Enhance,
    /// Run the detector; writes detections.csv.
    Detect,
    /// Score detections; writes pr_curve.csv and metrics.csv.
    Eval,
    /// Compare SSD-only against DCGAN+SSD; writes compare.csv and annotated/.
    Compare,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainGan => "train-gan",
            Command::TrainDetector => "train-detector",
            Command::Enhance => "enhance",
            Command::Detect => "detect",
            Command::Eval => "eval",
            Command::Compare => "compare",
        }
    }
}

/// Runs one command line (`argv[0]` is the program name) and returns the
/// process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("ganshot: {e}");
            return EXIT_USAGE;
        }
    };
    match execute(cli.command, &cfg) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("ganshot {}: {e}", cli.command.name());
            match e {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            }
        }
    }
}

/// Defaults, then `$GANSHOT_OUT`, then the config file, then flags.
fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(out) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        cfg.out = PathBuf::from(out);
    }
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    let trains_detector = cli.command == Command::TrainDetector;
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.epochs {
        if trains_detector {
            cfg.detector_epochs = v;
        } else {
            cfg.epochs = v;
        }
    }
    if let Some(v) = cli.batch_size {
        if trains_detector {
            cfg.detector_batch_size = v;
        } else {
            cfg.batch_size = v;
        }
    }
    if let Some(v) = cli.image_size {
        cfg.image_size = v;
    }
    if let Some(v) = cli.upscale {
        cfg.upscale_factor = v;
    }
    if let Some(v) = cli.score_threshold {
        cfg.score_threshold = v;
    }
    if let Some(v) = cli.nms_threshold {
        cfg.nms_threshold = v;
    }
    if let Some(v) = &cli.out {
        cfg.out = v.clone();
    }
    if let Some(v) = cli.threads {
        cfg.threads = v;
    }
    for (slot, flag) in [
        (&mut cfg.data, &cli.data),
        (&mut cfg.cifar, &cli.cifar),
        (&mut cfg.input, &cli.input),
        (&mut cfg.gan, &cli.gan),
        (&mut cfg.ssd, &cli.ssd),
        (&mut cfg.detections, &cli.detections),
        (&mut cfg.gt, &cli.gt),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(v) = cli.count {
        cfg.count = v;
    }
    if let Some(v) = &cli.mode {
        cfg.set("gan_mode", v)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if cfg.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    Ok(cfg)
}

fn execute(cmd: Command, cfg: &RunConfig) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", cfg.threads)))?;
    create_dir(&cfg.out)?;
    let mut log = format!("# ganshot {}\n", cmd.name());
    log.push_str(&cfg.to_text());
    write_text(&cfg.out.join(RUN_LOG), &log)?;
    log::info!("{} -> {}", cmd.name(), cfg.out.display());
    pool.install(|| match cmd {
        Command::GenData => gen_data(cfg),
        Command::TrainGan => train_gan_cmd(cfg),
        Command::TrainDetector => train_detector_cmd(cfg),
        Command::Enhance => enhance_cmd(cfg),
        Command::Detect => detect_cmd(cfg),
        Command::Eval => eval_cmd(cfg),
        Command::Compare => compare_cmd(cfg),
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("this command needs --{flag}")))
}

fn image_name(i: usize) -> String {
    format!("{i:05}.ppm")
}

fn scene_params(cfg: &RunConfig) -> SceneParams {
    SceneParams {
        image_size: cfg.image_size,
        object_count: (cfg.objects_min, cfg.objects_max),
        object_size_px: (cfg.object_min_px, cfg.object_max_px),
        noise_level: cfg.noise_level,
        classes: ObjectClass::ALL.to_vec(),
    }
}

fn gan_config(cfg: &RunConfig) -> GanConfig {
    GanConfig {
        noise_dim: cfg.noise_dim,
        image_size: cfg.image_size,
        base_feature_maps: cfg.base_feature_maps,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        upscale_factor: cfg.upscale_factor,
        noise: cfg.noise,
        reconstruction_weight: cfg.reconstruction_weight,
        enhancer_depth: cfg.enhancer_depth,
        ..GanConfig::default()
    }
}

fn eval_config(cfg: &RunConfig) -> EvalConfig {
    EvalConfig {
        score_threshold: cfg.score_threshold,
        nms_threshold: cfg.nms_threshold,
        iou_match_threshold: cfg.iou_match_threshold,
    }
}

/// `.ppm` files of a directory in file-name order.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "ppm") {
            paths.push(p);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Input(format!("no .ppm images in {}", dir.display())));
    }
    Ok(paths)
}

fn read_images(paths: &[PathBuf]) -> Result<Vec<Tensor>> {
    paths.iter().map(|p| read_image(p)).collect()
}

/// Images and ground truth of a gen-data style directory. Image `i` in
/// file-name order pairs with `image_id` `i` of gt.csv.
fn load_dataset(dir: &Path) -> Result<(Vec<Tensor>, Vec<Vec<GroundTruth>>)> {
    let images = read_images(&list_images(&dir.join("images"))?)?;
    let mut gts = read_gt_csv(&dir.join("gt.csv"))?;
    if gts.len() > images.len() {
        return Err(Error::Input(format!(
            "gt.csv refers to image {} but only {} images exist",
            gts.len() - 1,
            images.len()
        )));
    }
    gts.resize(images.len(), Vec::new());
    Ok((images, gts))
}

fn load_ssd(path: &Path) -> Result<Ssd> {
    Ssd::from_named(&load_checkpoint(path)?)
}

fn load_gan(path: &Path, cfg: &RunConfig) -> Result<GanModel> {
    GanModel::from_named(&load_checkpoint(path)?, &gan_config(cfg))
}

fn gen_data(cfg: &RunConfig) -> Result<()> {
    let scenes = synth_scenes(cfg.seed, cfg.count, &scene_params(cfg))?;
    let images_dir = cfg.out.join("images");
    let low_dir = cfg.out.join("low_res");
    create_dir(&images_dir)?;
    create_dir(&low_dir)?;
    for (i, s) in scenes.iter().enumerate() {
        write_image(&images_dir.join(image_name(i)), &s.image)?;
        write_image(&low_dir.join(image_name(i)), &downsample_box(&s.image, cfg.upscale_factor)?)?;
    }
    let gts: Vec<Vec<GroundTruth>> = scenes.into_iter().map(|s| s.gts).collect();
    write_gt_csv(&cfg.out.join("gt.csv"), &gts)
}

fn train_gan_cmd(cfg: &RunConfig) -> Result<()> {
    let gcfg = gan_config(cfg);
    gcfg.validate()?;
    let (model, history) = if cfg.gan_mode == "dcgan" {
        let images = match (&cfg.cifar, &cfg.data) {
            (Some(path), _) => load_cifar_batch(path)?.iter().map(|r| r.to_tensor()).collect(),
            (None, Some(dir)) => read_images(&list_images(&dir.join("images"))?)?,
            (None, None) => return Err(Error::Config("train-gan needs --data or --cifar".into())),
        };
        train_gan(&images, &gcfg, cfg.seed)?
    } else {
        let dir = require(&cfg.data, "data")?;
        let pairs = read_images(&list_images(&dir.join("images"))?)?
            .into_iter()
            .map(|hr| {
                Ok(EnhancerPair {
                    low_res: downsample_box(&hr, cfg.upscale_factor)?,
                    high_res: hr,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        train_enhancer(&pairs, &gcfg, cfg.seed)?
    };
    save_checkpoint(&cfg.out.join("gan.ckpt"), &model.to_named())?;
    write_loss_csv(&cfg.out.join("gan_loss.csv"), &history)
}

fn train_detector_cmd(cfg: &RunConfig) -> Result<()> {
    let (images, gts) = load_dataset(require(&cfg.data, "data")?)?;
    let classes = gts.iter().flatten().map(|g| g.class_id + 1).max().unwrap_or(1).max(ObjectClass::ALL.len());
    let mut ssd = Ssd::init(build_ssd_with_width(classes, cfg.image_size, cfg.detector_width)?, cfg.seed)?;
    let dcfg = DetectorConfig {
        epochs: cfg.detector_epochs,
        batch_size: cfg.detector_batch_size,
        adam: AdamConfig {
            lr: cfg.detector_lr,
            ..DetectorConfig::default().adam
        },
        iou_threshold: cfg.iou_match_threshold,
        seed: cfg.seed.wrapping_add(1),
    };
    let history = train_detector(&mut ssd, &images, &gts, &dcfg)?;
    save_checkpoint(&cfg.out.join("ssd.ckpt"), &ssd.to_named())?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(csv, "{},{l}", i + 1);
    }
    write_text(&cfg.out.join("detector_loss.csv"), &csv)
}

fn enhance_cmd(cfg: &RunConfig) -> Result<()> {
    let gan = load_gan(require(&cfg.gan, "gan")?, cfg)?;
    let paths = list_images(require(&cfg.input, "input")?)?;
    let out_dir = cfg.out.join("enhanced");
    create_dir(&out_dir)?;
    for (b, chunk) in paths.chunks(INFER_BATCH).enumerate() {
        let batch = Tensor::stack(&read_images(chunk)?)?;
        let hr = enhance(&gan, &batch, cfg.seed.wrapping_add(b as u64))?;
        for (i, p) in chunk.iter().enumerate() {
            let name = p.file_name().expect("listed files have names");
            write_image(&out_dir.join(name), &hr.sample(i)?)?;
        }
    }
    Ok(())
}

fn detect_cmd(cfg: &RunConfig) -> Result<()> {
    let ssd = load_ssd(require(&cfg.ssd, "ssd")?)?;
    let images = read_images(&list_images(require(&cfg.input, "input")?)?)?;
    let raw = detect_all(&ssd, &images, INFER_BATCH)?;
    let ecfg = eval_config(cfg);
    ecfg.validate()?;
    let kept: Vec<_> = raw.iter().map(|d| nms(d, ecfg.nms_threshold)).collect();
    write_detections_csv(&cfg.out.join("detections.csv"), &kept)
}

fn eval_cmd(cfg: &RunConfig) -> Result<()> {
    let mut dets = read_detections_csv(require(&cfg.detections, "detections")?)?;
    let mut gts = read_gt_csv(require(&cfg.gt, "gt")?)?;
    let n = dets.len().max(gts.len());
    dets.resize(n, Vec::new());
    gts.resize(n, Vec::new());
    let ecfg = eval_config(cfg);
    let curve = pr_curve(&dets, &gts, &ecfg)?;
    write_pr_csv(&cfg.out.join("pr_curve.csv"), &curve)?;
    let set = MatchedSet::new(&dets, &gts, ecfg.iou_match_threshold)?;
    let tiny = set.stratum_recall(ecfg.score_threshold, |g| is_tiny(g, cfg.image_size));
    let c = curve.counts_at_default;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let csv = format!(
        "f1,precision,recall,tiny_recall,tp,fp,fn\n{},{},{},{},{},{},{}\n",
        opt(curve.f1_at_default),
        c.precision(),
        opt(c.recall()),
        opt(tiny),
        c.tp,
        c.fp,
        c.fn_
    );
    write_text(&cfg.out.join("metrics.csv"), &csv)
}

fn compare_cmd(cfg: &RunConfig) -> Result<()> {
    let ssd = load_ssd(require(&cfg.ssd, "ssd")?)?;
    let gan = load_gan(require(&cfg.gan, "gan")?, cfg)?;
    let dir = require(&cfg.data, "data")?;
    let (images, gts) = load_dataset(dir)?;
    let scenes: Vec<SyntheticScene> = images
        .into_iter()
        .zip(gts)
        .enumerate()
        .map(|(i, (image, gts))| SyntheticScene {
            image,
            gts,
            seed: i as u64,
        })
        .collect();
    let dataset = dir
        .file_name()
        .map_or_else(|| "dataset".to_string(), |n| n.to_string_lossy().into_owned());
    let report = compare_pipelines(&dataset, &scenes, &ssd, &ssd, &gan, &eval_config(cfg), cfg.seed)?;
    write_compare_csv(&cfg.out.join("compare.csv"), &report.rows)?;
    let ann = cfg.out.join("annotated");
    create_dir(&ann)?;
    for out in &report.outputs {
        let tag = if out.row.pipeline.starts_with("SSD") { "ssd" } else { "cascade" };
        for i in 0..cfg.annotate.min(scenes.len()) {
            let img = annotate(&out.inputs[i], &scenes[i].gts, &out.detections[i])?;
            write_image(&ann.join(format!("{tag}_{i:05}.ppm")), &img)?;
        }
    }
    Ok(())
}
