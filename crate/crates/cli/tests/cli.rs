use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use toolseg::backbone::{build_resnet, ParamStore, ResNetConfig};
use toolseg::dataset::synthetic::{tool_dataset, write_dataset};
use toolseg::dataset::{load_dataset, ClassMap, ImageTensor, LabelMask};
use toolseg::metrics::evaluate;
use toolseg::training::{load_checkpoint, save_checkpoint};
use toolseg::Tensor;

fn toolseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toolseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), stderr(out));
}

fn tiny_checkpoint(dir: &Path, classes: &str) -> PathBuf {
    let out = dir.join(format!("tiny{classes}.ckpt"));
    assert_ok(&toolseg(&[
        "convert", "--arch", "tiny", "--classes", classes, "--output-stride", "8", "--out", s(&out),
    ]));
    out
}

fn synthetic_data(dir: &Path, sequences: usize, frames: usize, size: usize) -> PathBuf {
    let root = dir.join("data");
    write_dataset(&tool_dataset(sequences, frames, size, size, 3), &root).unwrap();
    root
}

#[test]
fn convert_pretrained_weights() {
    let dir = tempfile::tempdir().unwrap();
    let classifier = build_resnet(&ResNetConfig::tiny(), 7, "tiny").unwrap();
    let weights = dir.path().join("weights");
    ParamStore::init(&classifier, 5).save_dir(&weights).unwrap();

    let out = dir.path().join("converted.ckpt");
    let args = [
        "convert", "--weights", s(&weights), "--arch", "tiny", "--classes", "3", "--output-stride", "8", "--out", s(&out),
    ];
    let run = toolseg(&args);
    assert_ok(&run);
    assert!(String::from_utf8_lossy(&run.stdout).contains("receptive field"));
    let ckpt = load_checkpoint(&out).unwrap();
    assert_eq!(ckpt.spec.output_stride, 8);
    assert_eq!(ckpt.spec.num_classes, 3);
    assert!(dir.path().join("converted.ckpt.manifest.json").exists());

    let first = std::fs::read(&out).unwrap();
    assert_ok(&toolseg(&args));
    assert_eq!(std::fs::read(&out).unwrap(), first);
}

#[test]
fn convert_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.ckpt");
    let run = toolseg(&["convert", "--arch", "tiny", "--classes", "3", "--output-stride", "16", "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(2));

    let wrong = build_resnet(&ResNetConfig::small(), 7, "small").unwrap();
    let weights = dir.path().join("weights");
    ParamStore::init(&wrong, 0).save_dir(&weights).unwrap();
    let run = toolseg(&[
        "convert", "--weights", s(&weights), "--arch", "tiny", "--classes", "3", "--output-stride", "8", "--out", s(&out),
    ]);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).contains("incompatible"), "{}", stderr(&run));
}

#[test]
fn train_writes_losses_checkpoints_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_data(dir.path(), 2, 4, 32);
    let config = dir.path().join("run.cfg");
    std::fs::write(&config, "max_iterations = 500\ncheckpoint_every = 250\nlearning_rate = 1e-3\n").unwrap();
    let out = dir.path().join("run");
    assert_ok(&toolseg(&["train", "--data", s(&data), "--config", s(&config), "--out", s(&out)]));
    let csv = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 501);
    assert_eq!(csv.lines().next(), Some("iteration,loss"));
    for name in ["checkpoint_000250.ckpt", "checkpoint_000500.ckpt", "final.ckpt", "config.txt", "manifest.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["max_iterations"], "500");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_data(dir.path(), 1, 2, 16);
    let config = dir.path().join("run.cfg");
    std::fs::write(&config, "max_iterations = 50\nseed = 4\n").unwrap();
    let out = dir.path().join("run");
    assert_ok(&toolseg(&[
        "train", "--data", s(&data), "--config", s(&config), "--out", s(&out), "--max-iterations", "3", "--seed", "9",
    ]));
    let resolved = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(resolved.contains("max_iterations = 3"));
    assert!(resolved.contains("seed = 9"));
}

#[test]
fn binary_training_targets_two_classes() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_data(dir.path(), 1, 2, 16);
    let out = dir.path().join("run");
    assert_ok(&toolseg(&["train", "--data", s(&data), "--out", s(&out), "--binary", "--max-iterations", "2"]));
    assert_eq!(load_checkpoint(&out.join("final.ckpt")).unwrap().spec.num_classes, 2);
}

#[test]
fn train_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_data(dir.path(), 1, 2, 16);
    std::fs::remove_dir_all(data.join("seq1").join("masks")).unwrap();
    let run = toolseg(&["train", "--data", s(&data), "--out", s(&dir.path().join("a")), "--max-iterations", "1"]);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).contains("masks"), "{}", stderr(&run));

    let data = synthetic_data(&dir.path().join("b"), 1, 2, 16);
    let run = toolseg(&[
        "train", "--data", s(&data), "--out", s(&dir.path().join("c")), "--max-iterations", "50", "--learning-rate", "1e30",
    ]);
    assert_eq!(run.status.code(), Some(3), "{}", stderr(&run));
    assert!(stderr(&run).contains("iteration"), "{}", stderr(&run));
}

#[test]
fn evaluate_perfect_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let mut data = tool_dataset(2, 2, 16, 16, 1);
    for seq in &mut data.sequences {
        for frame in &mut seq.frames {
            frame.mask = LabelMask::filled(16, 16, 3, 0).unwrap();
        }
    }
    write_dataset(&data, &root).unwrap();
    let ckpt_path = tiny_checkpoint(dir.path(), "3");
    let mut ckpt = load_checkpoint(&ckpt_path).unwrap();
    ckpt.params.get_mut("head.bias").unwrap().data_mut()[0] = 1e3;
    save_checkpoint(&ckpt, &ckpt_path).unwrap();

    let report = dir.path().join("report");
    assert_ok(&toolseg(&["evaluate", "--data", s(&root), "--checkpoint", s(&ckpt_path), "--report", s(&report)]));
    let csv = std::fs::read_to_string(report.join("iou.csv")).unwrap();
    let means: Vec<&str> = csv.lines().filter(|l| l.contains(",mean,")).collect();
    assert_eq!(means, ["seq1,mean,100.0", "seq2,mean,100.0", "aggregate,mean,100.0"]);
    assert!(report.join("report.txt").exists());
    assert!(report.join("manifest.json").exists());
}

#[test]
fn evaluate_matches_library_and_checks_classes() {
    let dir = tempfile::tempdir().unwrap();
    let root = synthetic_data(dir.path(), 2, 2, 16);
    let ckpt_path = tiny_checkpoint(dir.path(), "3");
    let report = dir.path().join("report");
    assert_ok(&toolseg(&["evaluate", "--data", s(&root), "--checkpoint", s(&ckpt_path), "--report", s(&report)]));

    let ckpt = load_checkpoint(&ckpt_path).unwrap();
    let data = load_dataset(&root, ClassMap::multiclass()).unwrap();
    let expected = evaluate(&ckpt.spec, &ckpt.params, &data, ckpt.normalization()).unwrap();
    assert_eq!(std::fs::read_to_string(report.join("iou.csv")).unwrap(), expected.iou_csv());
    assert_eq!(expected.rows.len(), 2);

    let binary = tiny_checkpoint(dir.path(), "2");
    let run = toolseg(&["evaluate", "--data", s(&root), "--checkpoint", s(&binary), "--report", s(&report)]);
    assert_eq!(run.status.code(), Some(2));
    assert_ok(&toolseg(&[
        "evaluate", "--data", s(&root), "--checkpoint", s(&binary), "--report", s(&report), "--binary",
    ]));
    assert!(report.join("binary.csv").exists());
}

#[test]
fn predict_shapes_overlay_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path(), "3");
    let image_path = dir.path().join("frame.png");
    let image = ImageTensor::new(Tensor::from_fn(vec![256, 320, 3], |ix| {
        ((ix[0] * 7 + ix[1] * 3 + ix[2] * 11) % 256) as f32 / 255.0
    }))
    .unwrap();
    image.save(&image_path).unwrap();

    let mask = dir.path().join("mask.png");
    assert_ok(&toolseg(&[
        "predict", "--image", s(&image_path), "--checkpoint", s(&ckpt), "--out", s(&mask), "--overlay", "--alpha", "0",
    ]));
    let labels = LabelMask::read(&mask, 3).unwrap();
    assert_eq!((labels.height(), labels.width()), (256, 320));
    let overlay = ImageTensor::read(&dir.path().join("mask_overlay.png")).unwrap();
    assert_eq!(overlay.to_rgb8(), ImageTensor::read(&image_path).unwrap().to_rgb8());
    assert!(dir.path().join("mask.png.manifest.json").exists());

    let missing = toolseg(&[
        "predict", "--image", s(&dir.path().join("nope.png")), "--checkpoint", s(&ckpt), "--out", s(&mask),
    ]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn seeded_runs_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_data(dir.path(), 2, 3, 24);
    let image = data.join("seq2").join("images").join("frame0001.png");
    let mut outputs = Vec::new();
    for run in ["one", "two"] {
        let out = dir.path().join(run);
        assert_ok(&toolseg(&[
            "train", "--data", s(&data), "--out", s(&out), "--max-iterations", "20", "--learning-rate", "1e-3", "--seed", "5",
        ]));
        let mask = out.join("mask.png");
        assert_ok(&toolseg(&[
            "predict", "--image", s(&image), "--checkpoint", s(&out.join("final.ckpt")), "--out", s(&mask),
        ]));
        outputs.push((
            std::fs::read(out.join("loss.csv")).unwrap(),
            std::fs::read(&mask).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}
