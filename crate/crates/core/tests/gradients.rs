//! Whole-network gradients against central finite differences, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use toolseg::backbone::engine::{upsample_backward, upsample_forward, Batch};
use toolseg::backbone::{
    apply_output_stride, backward, build_resnet, convert_to_fcn_with_params, crop_batch, forward_train,
    is_trainable, pad_batch, padding_for, BatchNormMode, ModelSpec, ParamStore, ResNetConfig,
};
use toolseg::training::cross_entropy_with_grad;

fn micro_config() -> ResNetConfig {
    ResNetConfig {
        in_channels: 3,
        stem_channels: 4,
        stage_units: vec![1, 1, 1, 1],
        stage_widths: vec![2, 2, 3, 3],
        batch_norm: true,
    }
}

fn setup(stride: usize, mode: BatchNormMode) -> (ModelSpec, ParamStore<f64>) {
    let classifier = build_resnet(&micro_config(), 5, "micro").unwrap();
    let (fcn, params) = convert_to_fcn_with_params(&classifier, ParamStore::init(&classifier, 5), 3, 5).unwrap();
    let mut spec = apply_output_stride(&fcn.model, stride).unwrap();
    spec.batch_norm_mode = mode;
    let mut params = params.to_f64();
    // Non-trivial BN statistics and affine parameters.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (name, t) in params.iter_mut() {
        if name.ends_with(".bn.var") || name.ends_with(".bn.gamma") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        } else if name.ends_with(".bn.mean") || name.ends_with(".bn.beta") || name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        } else if name.starts_with("head.") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    }
    (spec, params)
}

fn inputs(n: usize, h: usize, w: usize) -> (Batch<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = Batch::from_vec(n, h, w, 3, (0..n * h * w * 3).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut targets = vec![0.0; n * h * w * 3];
    for px in targets.chunks_exact_mut(3) {
        px[rng.random_range(0..3)] = 1.0;
    }
    (x, targets)
}

fn loss_and_grads(spec: &ModelSpec, params: &ParamStore<f64>, x: &Batch<f64>, targets: &[f64]) -> (f64, ParamStore<f64>) {
    let s = spec.output_stride;
    let (top, left, ph, pw) = padding_for(x.h, x.w, s);
    let (coarse, tape) = forward_train(spec, params, &pad_batch(x, top, left, ph, pw)).unwrap();
    let logits = crop_batch(&upsample_forward(&coarse, s), top, left, x.h, x.w);
    let (loss, g) = cross_entropy_with_grad(&logits.data, targets, 3).unwrap();
    let g = pad_batch(&Batch::from_vec(x.n, x.h, x.w, 3, g), top, left, ph, pw);
    let grads = backward(spec, params, &tape, &upsample_backward(&g, coarse.h, coarse.w));
    (loss, grads)
}

fn check(stride: usize, mode: BatchNormMode) {
    let (spec, params) = setup(stride, mode);
    let (x, targets) = inputs(2, 18, 21);
    let (_, grads) = loss_and_grads(&spec, &params, &x, &targets);
    let frozen = mode == BatchNormMode::Frozen;
    let trainable: Vec<&String> = params.names().filter(|n| is_trainable(n, frozen)).collect();
    assert_eq!(grads.len(), trainable.len(), "one gradient per trainable tensor");
    let eps = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for name in trainable {
        let len = params.get(name).unwrap().len();
        for _ in 0..3.min(len) {
            let i = rng.random_range(0..len);
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += eps;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= eps;
            let fd = (loss_and_grads(&spec, &plus, &x, &targets).0 - loss_and_grads(&spec, &minus, &x, &targets).0)
                / (2.0 * eps);
            let analytic = grads.get(name).unwrap().data()[i];
            assert!(
                (fd - analytic).abs() <= 1e-6 + 1e-4 * fd.abs().max(analytic.abs()),
                "{name}[{i}]: analytic {analytic} vs finite difference {fd}"
            );
        }
    }
}

#[test]
fn stride_eight_batch_statistics() {
    check(8, BatchNormMode::Trainable);
}

#[test]
fn stride_eight_frozen_batch_norm() {
    check(8, BatchNormMode::Frozen);
}

#[test]
fn stride_thirty_two() {
    check(32, BatchNormMode::Trainable);
}
