use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::checkpoint::{load_checkpoint, Checkpoint};
use super::config::TrainingConfig;
use super::loss::cross_entropy_with_grad;
use crate::backbone::engine::{self, Batch, BN_MOMENTUM};
use crate::backbone::{
    apply_output_stride, backward, build_resnet, convert_to_fcn_with_params, crop_batch, forward_train,
    pad_batch, padding_for, BatchNormMode, ModelSpec, ParamStore, ResNetConfig, MIN_INPUT_SIZE,
};
use crate::dataset::{encode_one_hot, FrameSource};
use crate::error::{Error, Result};

/// Width of the classifier a fresh backbone is built with before conversion.
const IMAGENET_CLASSES: usize = 1000;

/// Final state of a run and its per-iteration training losses.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub losses: Vec<f64>,
}

/// `iteration,loss` with one-based iterations.
pub fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("iteration,loss\n");
    for (i, loss) in losses.iter().enumerate() {
        out.push_str(&format!("{},{loss}\n", i + 1));
    }
    out
}

/// Seeded, epoch-wise shuffled stream of frame indices.
struct Sampler {
    frames: Vec<(usize, usize)>,
    order: Vec<usize>,
    cursor: usize,
}

impl Sampler {
    fn new(frames: Vec<(usize, usize)>) -> Self {
        Self {
            order: (0..frames.len()).collect(),
            cursor: frames.len(),
            frames,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        if self.cursor == self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.frames[self.order[self.cursor - 1]]
    }
}

/// Normalised images and one-hot targets for one mini-batch.
fn load_batch<S: FrameSource + ?Sized>(
    data: &S,
    config: &TrainingConfig,
    sampler: &mut Sampler,
    rng: &mut ChaCha8Rng,
) -> Result<(Batch<f32>, Vec<f32>)> {
    let classes = data.num_classes();
    let mut images = Vec::new();
    let mut targets = Vec::new();
    let mut size = None;
    for _ in 0..config.batch_size {
        let (seq, idx) = sampler.next(rng);
        let mut frame = data.frame(seq, idx)?;
        if let Some(crop) = config.crop_size {
            let (h, w) = (frame.mask.height(), frame.mask.width());
            if crop.height > h || crop.width > w {
                return Err(Error::invalid(format!(
                    "crop {crop} is larger than frame {}/{idx} ({h}×{w})",
                    data.sequence_id(seq)
                )));
            }
            let top = rng.random_range(0..=h - crop.height);
            let left = rng.random_range(0..=w - crop.width);
            frame.image = frame.image.crop(top, left, crop.height, crop.width);
            frame.mask = frame.mask.crop(top, left, crop.height, crop.width);
        }
        let shape = (frame.mask.height(), frame.mask.width());
        if *size.get_or_insert(shape) != shape {
            return Err(Error::ShapeMismatch(
                "frames in a batch differ in size; set crop_size or use batch_size 1".into(),
            ));
        }
        images.extend_from_slice(config.normalization.apply(&frame.image).data());
        targets.extend(
            encode_one_hot(&frame.mask, classes)?
                .values()
                .iter()
                .map(|&v| f32::from(v)),
        );
    }
    let (h, w) = size.expect("batch_size is positive");
    Ok((Batch::from_vec(config.batch_size, h, w, 3, images), targets))
}

fn update_running_stats(params: &mut ParamStore<f32>, stats: &[(String, Vec<f32>, Vec<f32>)]) {
    let m = BN_MOMENTUM as f32;
    for (layer, mean, var) in stats {
        for (field, batch) in [("mean", mean), ("var", var)] {
            let running = params
                .get_mut(&format!("{layer}.bn.{field}"))
                .expect("running statistics exist for every BN layer");
            for (r, &b) in running.data_mut().iter_mut().zip(batch) {
                *r = (1.0 - m) * *r + m * b;
            }
        }
    }
}

/// Batch mean and variance per batch-norm tensor name.
type BnStats = Vec<(String, Vec<f32>, Vec<f32>)>;

/// One forward/backward pass: loss and parameter gradients.
fn step_gradients(
    spec: &ModelSpec,
    params: &ParamStore<f32>,
    input: &Batch<f32>,
    targets: &[f32],
) -> Result<(f64, ParamStore<f32>, BnStats)> {
    let stride = spec.output_stride;
    let (top, left, ph, pw) = padding_for(input.h, input.w, stride);
    let padded = pad_batch(input, top, left, ph, pw);
    let (coarse, tape) = forward_train(spec, params, &padded)?;
    let full = engine::upsample_forward(&coarse, stride);
    let logits = crop_batch(&full, top, left, input.h, input.w);
    let (loss, grad) = cross_entropy_with_grad(&logits.data, targets, logits.c)?;
    let grad = Batch::from_vec(logits.n, logits.h, logits.w, logits.c, grad);
    let grad_full = pad_batch(&grad, top, left, ph, pw);
    let grad_coarse = engine::upsample_backward(&grad_full, coarse.h, coarse.w);
    let grads = backward(spec, params, &tape, &grad_coarse);
    Ok((loss, grads, tape.bn_batch_stats))
}

/// Run `config.max_iterations` Adam steps from `start`, calling
/// `on_checkpoint` every `config.checkpoint_every` iterations.
///
/// Batches are drawn from a seeded shuffle of every frame, reshuffled each
/// epoch. A non-finite loss aborts with [`Error::Diverged`] carrying the
/// one-based iteration.
pub fn train_from<S: FrameSource + ?Sized>(
    start: Checkpoint,
    data: &S,
    mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut ckpt = start;
    let config = ckpt.config.clone();
    config.validate()?;
    if data.total_frames() == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    if ckpt.spec.num_classes != data.num_classes() {
        return Err(Error::invalid(format!(
            "model predicts {} classes, data has {}",
            ckpt.spec.num_classes,
            data.num_classes()
        )));
    }
    if !ckpt.spec.is_fully_convolutional() {
        return Err(Error::invalid("training requires a fully convolutional model"));
    }
    if let Some(crop) = config.crop_size {
        if crop.height < MIN_INPUT_SIZE || crop.width < MIN_INPUT_SIZE {
            return Err(Error::invalid(format!("crop {crop} is below the minimum input size")));
        }
    }
    let adam = Adam {
        learning_rate: config.learning_rate,
        beta1: config.beta1,
        beta2: config.beta2,
        epsilon: config.epsilon,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler = Sampler::new(data.frame_index());
    let mut losses = Vec::with_capacity(config.max_iterations);
    for i in 1..=config.max_iterations {
        let (input, targets) = load_batch(data, &config, &mut sampler, &mut rng)?;
        let (loss, grads, stats) = step_gradients(&ckpt.spec, &ckpt.params, &input, &targets)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: i, loss });
        }
        adam.step(&mut ckpt.params, &grads, &mut ckpt.optimizer);
        update_running_stats(&mut ckpt.params, &stats);
        ckpt.iteration += 1;
        losses.push(loss);
        debug!("iteration {i}: loss {loss:.6}");
        if i % config.checkpoint_every == 0 {
            info!("iteration {i}: loss {loss:.6}");
            on_checkpoint(&ckpt)?;
        }
    }
    Ok(TrainOutcome { checkpoint: ckpt, losses })
}

/// Starting point for a run: `config.init_checkpoint` with a fresh optimiser
/// when set, otherwise the `config.arch` backbone drawn from `config.seed`,
/// converted to a `num_classes` FCN at `config.output_stride`.
pub fn initial_checkpoint(config: &TrainingConfig, num_classes: usize) -> Result<Checkpoint> {
    config.validate()?;
    let (mut spec, params) = match &config.init_checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.spec.num_classes != num_classes {
                return Err(Error::invalid(format!(
                    "{} predicts {} classes, data has {num_classes}",
                    path.display(),
                    ckpt.spec.num_classes
                )));
            }
            (apply_output_stride(&ckpt.spec, config.output_stride)?, ckpt.params)
        }
        None => {
            let layout = ResNetConfig::by_name(&config.arch)
                .ok_or_else(|| Error::invalid(format!("unknown architecture {:?}", config.arch)))?;
            let classifier = build_resnet(&layout, IMAGENET_CLASSES, &config.arch)?;
            let params = ParamStore::init(&classifier, config.seed);
            let (fcn, params) = convert_to_fcn_with_params(&classifier, params, num_classes, config.seed)?;
            (apply_output_stride(&fcn.model, config.output_stride)?, params)
        }
    };
    if config.freeze_batch_norm {
        spec.batch_norm_mode = BatchNormMode::Frozen;
    }
    Ok(Checkpoint::new(spec, params, config.clone()))
}

/// Train `params` on `data` from scratch with a fresh optimiser.
pub fn train<S: FrameSource + ?Sized>(
    spec: &ModelSpec,
    params: ParamStore<f32>,
    data: &S,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    params.check_against(spec)?;
    train_from(Checkpoint::new(spec.clone(), params, config.clone()), data, |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{apply_output_stride, build_resnet, convert_to_fcn_with_params, ResNetConfig};
    use crate::dataset::synthetic::tool_dataset;

    fn model(classes: usize) -> (ModelSpec, ParamStore<f32>) {
        let classifier = build_resnet(&ResNetConfig::tiny(), 10, "tiny").unwrap();
        let params = ParamStore::init(&classifier, 3);
        let (fcn, params) = convert_to_fcn_with_params(&classifier, params, classes, 4).unwrap();
        (apply_output_stride(&fcn.model, 8).unwrap(), params)
    }

    fn config(iterations: usize) -> TrainingConfig {
        TrainingConfig {
            max_iterations: iterations,
            learning_rate: 1e-3,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn zero_iterations_leave_parameters_unchanged() {
        let (spec, params) = model(3);
        let data = tool_dataset(1, 2, 16, 16, 0);
        let out = train(&spec, params.clone(), &data, &config(0)).unwrap();
        assert_eq!(out.checkpoint.params, params);
        assert!(out.losses.is_empty());
    }

    #[test]
    fn same_seed_same_losses() {
        let (spec, params) = model(3);
        let data = tool_dataset(2, 2, 16, 24, 1);
        let a = train(&spec, params.clone(), &data, &config(4)).unwrap();
        let b = train(&spec, params, &data, &config(4)).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.checkpoint, b.checkpoint);
    }

    #[test]
    fn loss_decreases_on_a_single_frame() {
        let (spec, params) = model(3);
        let data = tool_dataset(1, 1, 16, 16, 2);
        let out = train(&spec, params, &data, &config(30)).unwrap();
        assert!(out.losses[29] < out.losses[0]);
    }

    #[test]
    fn checkpoints_on_schedule() {
        let (spec, params) = model(3);
        let data = tool_dataset(1, 2, 16, 16, 0);
        let mut seen = Vec::new();
        let cfg = TrainingConfig {
            checkpoint_every: 2,
            ..config(5)
        };
        train_from(Checkpoint::new(spec, params, cfg), &data, |c| {
            seen.push(c.iteration);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, [2, 4]);
    }

    #[test]
    fn crops_and_batches() {
        let (spec, params) = model(3);
        let data = tool_dataset(2, 3, 20, 28, 5);
        let cfg = TrainingConfig {
            crop_size: Some(super::super::CropSize { height: 12, width: 16 }),
            batch_size: 3,
            ..config(2)
        };
        assert_eq!(train(&spec, params, &data, &cfg).unwrap().losses.len(), 2);
    }

    #[test]
    fn divergence_reports_iteration() {
        let (spec, mut params) = model(3);
        for (_, t) in params.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = f32::NAN);
        }
        let data = tool_dataset(1, 1, 16, 16, 0);
        assert!(matches!(
            train(&spec, params, &data, &config(3)),
            Err(Error::Diverged { iteration: 1, .. })
        ));
    }

    #[test]
    fn class_count_must_match() {
        let (spec, params) = model(2);
        let data = tool_dataset(1, 1, 16, 16, 0);
        assert!(matches!(train(&spec, params, &data, &config(1)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn initial_checkpoint_from_arch() {
        let cfg = TrainingConfig {
            freeze_batch_norm: true,
            ..TrainingConfig::default()
        };
        let ckpt = initial_checkpoint(&cfg, 2).unwrap();
        assert_eq!(ckpt.spec.output_stride, 8);
        assert_eq!(ckpt.spec.num_classes, 2);
        assert_eq!(ckpt.spec.batch_norm_mode, BatchNormMode::Frozen);
        ckpt.params.check_against(&ckpt.spec).unwrap();
        assert_eq!(initial_checkpoint(&cfg, 2).unwrap(), ckpt);
        let unknown = TrainingConfig {
            arch: "vgg".into(),
            ..TrainingConfig::default()
        };
        assert!(matches!(initial_checkpoint(&unknown, 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn csv_layout() {
        assert_eq!(loss_csv(&[0.5, 0.25]), "iteration,loss\n1,0.5\n2,0.25\n");
    }
}
