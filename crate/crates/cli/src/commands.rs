use std::path::{Path, PathBuf};

use anyhow::anyhow;
use log::info;
use serde_json::json;

use toolseg::backbone::{
    apply_output_stride, build_resnet, compute_receptive_field, convert_to_fcn_with_params, BatchNormMode,
    ParamStore, ResNetConfig, FC_WEIGHT,
};
use toolseg::dataset::{load_dataset, render_overlay, Binarized, ClassMap, FrameSource, Palette, SequenceDataset};
use toolseg::metrics::{evaluate as evaluate_dataset, predict_mask};
use toolseg::training::{initial_checkpoint, load_checkpoint, loss_csv, save_checkpoint, train_from, Checkpoint};
use toolseg::{Error, ImageTensor, TrainingConfig};

use crate::manifest::{beside, now_ms, RunManifest};
use crate::{ConvertArgs, EvaluateArgs, PredictArgs, TrainArgs};

/// Bad input or usage (exit 2) versus a failure while running (exit 3).
pub enum CliError {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn source(&self) -> &anyhow::Error {
        match self {
            CliError::Input(e) | CliError::Runtime(e) => e,
        }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        match err {
            Error::Diverged { .. } => CliError::Runtime(err.into()),
            _ => CliError::Input(err.into()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn runtime<T, E: Into<anyhow::Error>>(result: Result<T, E>) -> CliResult<T> {
    result.map_err(|e| CliError::Runtime(e.into()))
}

fn input_error(msg: String) -> CliError {
    CliError::Input(anyhow!(msg))
}

fn create_dir(dir: &Path) -> CliResult {
    runtime(std::fs::create_dir_all(dir).map_err(|e| anyhow!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    runtime(std::fs::write(path, contents).map_err(|e| anyhow!("cannot write {}: {e}", path.display())))
}

fn save(ckpt: &Checkpoint, path: &Path) -> CliResult {
    runtime(save_checkpoint(ckpt, path))
}

fn config_json(config: &TrainingConfig) -> serde_json::Value {
    serde_json::Value::Object(
        config
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
            .collect(),
    )
}

fn load_data(root: &Path, binary: bool) -> CliResult<Box<dyn FrameSource>> {
    let data: SequenceDataset = load_dataset(root, ClassMap::multiclass())?;
    Ok(if binary {
        Box::new(Binarized::new(data))
    } else {
        Box::new(data)
    })
}

pub fn convert(args: &ConvertArgs) -> CliResult {
    let started = now_ms();
    let layout = ResNetConfig::by_name(&args.arch)
        .ok_or_else(|| input_error(format!("unknown architecture {:?}", args.arch)))?;
    let (mut classifier, params) = match &args.weights {
        Some(dir) => {
            let params = ParamStore::load_dir(dir)?;
            let classes = params
                .get(FC_WEIGHT)
                .and_then(|t| t.shape().get(1).copied())
                .ok_or_else(|| Error::IncompatibleCheckpoint(format!("{FC_WEIGHT} is missing from {}", dir.display())))?;
            let classifier = build_resnet(&layout, classes, &args.arch)?;
            params.check_against(&classifier)?;
            (classifier, params)
        }
        None => {
            let classifier = build_resnet(&layout, 1000, &args.arch)?;
            let params = ParamStore::init(&classifier, args.seed);
            (classifier, params)
        }
    };
    let pretrained = args.weights.is_some();
    if pretrained {
        classifier.batch_norm_mode = BatchNormMode::Frozen;
    }
    let (fcn, params) = convert_to_fcn_with_params(&classifier, params, usize::from(args.classes), args.seed)?;
    let spec = apply_output_stride(&fcn.model, args.output_stride)?;
    let before = compute_receptive_field(&fcn.model);
    let after = compute_receptive_field(&spec);
    println!(
        "receptive field: {}x{} at output stride {} -> {}x{} at output stride {}",
        before[0], before[1], fcn.model.output_stride, after[0], after[1], spec.output_stride
    );
    let config = TrainingConfig {
        arch: args.arch.clone(),
        output_stride: args.output_stride,
        seed: args.seed,
        freeze_batch_norm: pretrained,
        ..TrainingConfig::default()
    };
    let ckpt = Checkpoint::new(spec, params, config.clone());
    save(&ckpt, &args.out)?;
    let mut manifest = RunManifest::new("convert", args.seed, started).output("checkpoint", &args.out);
    if let Some(w) = &args.weights {
        manifest = manifest.input("weights", w);
    }
    manifest.config = json!({
        "arch": args.arch,
        "classes": args.classes,
        "output_stride": args.output_stride,
        "pretrained": pretrained,
        "receptive_field_before": before,
        "receptive_field_after": after,
    });
    runtime(manifest.write(&beside(&args.out)))
}

fn resolve_config(args: &TrainArgs) -> CliResult<TrainingConfig> {
    let mut config = match &args.config {
        Some(path) => TrainingConfig::read(path)?,
        None => TrainingConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.max_iterations {
        config.max_iterations = n;
    }
    if let Some(lr) = args.learning_rate {
        config.learning_rate = lr;
    }
    if let Some(init) = &args.init {
        config.init_checkpoint = Some(init.clone());
    }
    config.validate()?;
    Ok(config)
}

pub fn train(args: &TrainArgs) -> CliResult {
    let started = now_ms();
    let config = resolve_config(args)?;
    let data = load_data(&args.data, args.binary)?;
    let start = initial_checkpoint(&config, data.num_classes())?;
    create_dir(&args.out)?;
    info!(
        "training {} on {} frames for {} iterations",
        start.spec.name,
        data.total_frames(),
        config.max_iterations
    );
    let mut written: Vec<PathBuf> = Vec::new();
    let outcome = train_from(start, data.as_ref(), |ckpt| {
        let path = args.out.join(format!("checkpoint_{:06}.ckpt", ckpt.iteration));
        save_checkpoint(ckpt, &path)?;
        written.push(path);
        Ok(())
    })?;
    let final_path = args.out.join("final.ckpt");
    save(&outcome.checkpoint, &final_path)?;
    let loss_path = args.out.join("loss.csv");
    write_file(&loss_path, loss_csv(&outcome.losses))?;
    let config_path = args.out.join("config.txt");
    write_file(&config_path, config.to_text())?;
    if let Some(last) = outcome.losses.last() {
        println!("final training loss after {} iterations: {last:.6}", outcome.losses.len());
    }

    let mut manifest = RunManifest::new("train", config.seed, started)
        .input("data", &args.data)
        .output("final_checkpoint", &final_path)
        .output("loss", &loss_path)
        .output("config", &config_path);
    if let Some(c) = &args.config {
        manifest = manifest.input("config", c);
    }
    for (i, path) in written.iter().enumerate() {
        manifest = manifest.output(&format!("checkpoint_{i}"), path);
    }
    manifest.config = config_json(&config);
    manifest.config["binary"] = json!(args.binary);
    runtime(manifest.write(&args.out.join("manifest.json")))
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult {
    let started = now_ms();
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let data = load_data(&args.data, args.binary)?;
    if ckpt.spec.num_classes != data.num_classes() {
        return Err(input_error(format!(
            "checkpoint predicts {} classes but the data has {}{}",
            ckpt.spec.num_classes,
            data.num_classes(),
            if ckpt.spec.num_classes == 2 && !args.binary { " (pass --binary)" } else { "" }
        )));
    }
    let report = evaluate_dataset(&ckpt.spec, &ckpt.params, data.as_ref(), ckpt.normalization())?;
    create_dir(&args.report)?;
    let iou_path = args.report.join("iou.csv");
    write_file(&iou_path, report.iou_csv())?;
    let table_path = args.report.join("report.txt");
    let table = report.table();
    write_file(&table_path, &table)?;
    print!("{table}");
    let mut manifest = RunManifest::new("evaluate", ckpt.config.seed, started)
        .input("data", &args.data)
        .input("checkpoint", &args.checkpoint)
        .output("iou", &iou_path)
        .output("table", &table_path);
    if let Some(csv) = report.binary_csv() {
        let path = args.report.join("binary.csv");
        write_file(&path, csv)?;
        manifest = manifest.output("binary", &path);
    }
    manifest.config = json!({ "binary": args.binary, "classes": ckpt.spec.num_classes });
    runtime(manifest.write(&args.report.join("manifest.json")))
}

fn default_overlay_path(mask: &Path) -> PathBuf {
    let stem = mask.file_stem().unwrap_or_default().to_string_lossy();
    mask.with_file_name(format!("{stem}_overlay.png"))
}

pub fn predict(args: &PredictArgs) -> CliResult {
    let started = now_ms();
    let image = ImageTensor::read(&args.image)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let palette = match &args.palette {
        Some(path) => Palette::read(path)?,
        None => Palette::default_for(ckpt.spec.num_classes),
    };
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(input_error(format!("alpha {} is not in [0, 1]", args.alpha)));
    }
    let mask = predict_mask(&ckpt.spec, &ckpt.params, ckpt.normalization(), &image)?;
    runtime(mask.save(&args.out))?;
    let mut manifest = RunManifest::new("predict", ckpt.config.seed, started)
        .input("image", &args.image)
        .input("checkpoint", &args.checkpoint)
        .output("mask", &args.out);
    if let Some(target) = &args.overlay {
        let path = target.clone().unwrap_or_else(|| default_overlay_path(&args.out));
        let blended = render_overlay(&image, &mask, &palette, args.alpha)?;
        runtime(blended.save(&path))?;
        manifest = manifest.output("overlay", &path);
    }
    manifest.config = json!({ "alpha": args.alpha, "overlay": args.overlay.is_some() });
    runtime(manifest.write(&beside(&args.out)))
}
