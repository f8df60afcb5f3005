use std::path::Path;
use std::process::{Command, Output};

use ganshot::data_io::{encode_checkpoint, load_checkpoint, read_gt_csv, write_gt_csv};
use ganshot::detector::{write_detections_csv, BoundingBox, Detection, GroundTruth};
use ganshot::gan::{GanConfig, GanMode, GanModel};

fn ganshot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ganshot"))
        .args(args)
        .env_remove("GANSHOT_OUT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = ganshot(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = ganshot(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = ganshot(&["eval", "--learning-rate", "3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# comment\nseed=3\nwarmup=10\n").unwrap();
    let out = ganshot(&["gen-data", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warmup"));
}

#[test]
fn missing_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ganshot(&[
        "detect",
        "--ssd",
        s(&dir.path().join("absent.ckpt")),
        "--input",
        s(dir.path()),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_data_layout_and_run_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    ok(&["gen-data", "--count", "5", "--seed", "4", "--out", s(&out)]);
    for i in 0..5 {
        assert!(out.join(format!("images/{i:05}.ppm")).is_file());
        assert!(out.join(format!("low_res/{i:05}.ppm")).is_file());
    }
    let gts = read_gt_csv(&out.join("gt.csv")).unwrap();
    assert!(gts.len() <= 5 && !gts.is_empty());
    let log = String::from_utf8(read(&out.join("run.log"))).unwrap();
    assert!(log.starts_with("# ganshot gen-data\n"));
    assert!(log.contains("\nseed=4\n"));
    assert!(log.contains("\ncount=5\n"));
}

#[test]
fn out_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from_env");
    let status = Command::new(env!("CARGO_BIN_EXE_ganshot"))
        .args(["gen-data", "--count", "1"])
        .env("GANSHOT_OUT", &target)
        .env("RUST_LOG", "warn")
        .current_dir(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(target.join("gt.csv").is_file());
}

#[test]
fn zero_epoch_gan_checkpoint_is_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("gan");
    ok(&["gen-data", "--count", "4", "--out", s(&data)]);
    ok(&[
        "train-gan",
        "--epochs",
        "0",
        "--seed",
        "11",
        "--data",
        s(&data),
        "--set",
        "base_feature_maps=4",
        "--out",
        s(&out),
    ]);
    let cfg = GanConfig {
        base_feature_maps: 4,
        epochs: 0,
        ..GanConfig::default()
    };
    let init = GanModel::init(&cfg, GanMode::Enhancer, 11).unwrap();
    assert_eq!(read(&out.join("gan.ckpt")), encode_checkpoint(&init.to_named()).unwrap());
}

fn gt(x0: f32, y0: f32) -> GroundTruth {
    GroundTruth {
        bbox: BoundingBox::from_corners(x0, y0, x0 + 0.2, y0 + 0.3),
        class_id: 0,
    }
}

fn det(x0: f32, y0: f32, score: f32) -> Detection {
    Detection {
        bbox: BoundingBox::from_corners(x0, y0, x0 + 0.2, y0 + 0.3),
        class_id: 0,
        score,
    }
}

#[test]
fn eval_hand_counted_fixture() {
    // Five objects over three images; six detections including one
    // duplicate and one stray box; one object is never found.
    let dir = tempfile::tempdir().unwrap();
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
    let gt_path = dir.path().join("gt.csv");
    let det_path = dir.path().join("detections.csv");
    write_gt_csv(&gt_path, &gts).unwrap();
    write_detections_csv(&det_path, &dets).unwrap();
    let out = dir.path().join("eval");
    ok(&["eval", "--detections", s(&det_path), "--gt", s(&gt_path), "--out", s(&out)]);
    let text = String::from_utf8(read(&out.join("metrics.csv"))).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let f1: f64 = row[0].parse().unwrap();
    let precision: f64 = row[1].parse().unwrap();
    let recall: f64 = row[2].parse().unwrap();
    assert!((precision - 2.0 / 3.0).abs() < 1e-9);
    assert!((recall - 0.8).abs() < 1e-9);
    assert!((f1 - 8.0 / 11.0).abs() < 1e-9);
    assert_eq!(row[4..], ["4", "2", "1"]);
    let pr = String::from_utf8(read(&out.join("pr_curve.csv"))).unwrap();
    assert!(pr.starts_with("cutoff,precision,recall\n"));
    assert_eq!(pr.lines().count(), 22);
}

fn pipeline(root: &Path, extra: &[&str]) {
    let data = root.join("data");
    let test = root.join("test");
    let with = |mut v: Vec<String>| {
        v.extend(extra.iter().map(|x| x.to_string()));
        let refs: Vec<&str> = v.iter().map(String::as_str).collect();
        ok(&refs);
    };
    let st = |p: &Path| p.to_str().unwrap().to_string();
    with(vec!["gen-data".into(), "--count".into(), "12".into(), "--out".into(), st(&data)]);
    with(vec![
        "gen-data".into(),
        "--count".into(),
        "6".into(),
        "--seed".into(),
        "500".into(),
        "--out".into(),
        st(&test),
    ]);
    with(vec![
        "train-gan".into(),
        "--epochs".into(),
        "1".into(),
        "--batch-size".into(),
        "4".into(),
        "--set".into(),
        "base_feature_maps=4".into(),
        "--data".into(),
        st(&data),
        "--out".into(),
        st(&root.join("gan")),
    ]);
    with(vec![
        "train-detector".into(),
        "--epochs".into(),
        "1".into(),
        "--batch-size".into(),
        "4".into(),
        "--set".into(),
        "detector_width=4".into(),
        "--data".into(),
        st(&data),
        "--out".into(),
        st(&root.join("ssd")),
    ]);
    with(vec![
        "enhance".into(),
        "--gan".into(),
        st(&root.join("gan/gan.ckpt")),
        "--set".into(),
        "base_feature_maps=4".into(),
        "--input".into(),
        st(&test.join("low_res")),
        "--out".into(),
        st(&root.join("enh")),
    ]);
    with(vec![
        "detect".into(),
        "--ssd".into(),
        st(&root.join("ssd/ssd.ckpt")),
        "--input".into(),
        st(&root.join("enh/enhanced")),
        "--out".into(),
        st(&root.join("det")),
    ]);
    with(vec![
        "eval".into(),
        "--detections".into(),
        st(&root.join("det/detections.csv")),
        "--gt".into(),
        st(&test.join("gt.csv")),
        "--out".into(),
        st(&root.join("eval")),
    ]);
    with(vec![
        "compare".into(),
        "--gan".into(),
        st(&root.join("gan/gan.ckpt")),
        "--ssd".into(),
        st(&root.join("ssd/ssd.ckpt")),
        "--data".into(),
        st(&test),
        "--set".into(),
        "annotate=2".into(),
        "--out".into(),
        st(&root.join("cmp")),
    ]);
}

const ARTIFACTS: [&str; 9] = [
    "gan/gan.ckpt",
    "gan/gan_loss.csv",
    "ssd/ssd.ckpt",
    "ssd/detector_loss.csv",
    "enh/enhanced/00003.ppm",
    "det/detections.csv",
    "eval/metrics.csv",
    "eval/pr_curve.csv",
    "cmp/compare.csv",
];

#[test]
fn full_pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), &[]);
    pipeline(b.path(), &["--threads", "3"]);
    for f in ARTIFACTS {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f} differs");
    }

    let cmp = String::from_utf8(read(&a.path().join("cmp/compare.csv"))).unwrap();
    let lines: Vec<&str> = cmp.lines().collect();
    assert_eq!(lines[0], "dataset,pipeline,f1,precision,recall,tiny_recall");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("test,SSD-only,"));
    assert!(lines[2].starts_with("test,DCGAN+SSD,"));
    for tag in ["ssd", "cascade"] {
        for i in 0..2 {
            assert!(a.path().join(format!("cmp/annotated/{tag}_{i:05}.ppm")).is_file());
        }
    }
    assert!(load_checkpoint(&a.path().join("ssd/ssd.ckpt")).unwrap().contains_key("meta.num_classes"));
}

#[test]
fn run_log_replays_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--count", "6", "--out", s(&data)]);
    let first = dir.path().join("first");
    ok(&[
        "train-detector",
        "--epochs",
        "1",
        "--seed",
        "5",
        "--set",
        "detector_width=4",
        "--data",
        s(&data),
        "--out",
        s(&first),
    ]);
    let second = dir.path().join("second");
    ok(&["train-detector", "--config", s(&first.join("run.log")), "--out", s(&second)]);
    assert_eq!(read(&first.join("ssd.ckpt")), read(&second.join("ssd.ckpt")));
    assert_eq!(read(&first.join("detector_loss.csv")), read(&second.join("detector_loss.csv")));
}
