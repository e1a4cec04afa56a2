use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use toolseg::backbone::engine::{conv2d_forward, upsample_forward, Batch};
use toolseg::backbone::forward;
use toolseg::dataset::synthetic::tool_dataset;
use toolseg::metrics::{evaluate, ConfusionCounts};
use toolseg::tensor_ops::{bilinear_upsample, dilated_conv_2d, DilatedConvSpec};
use toolseg::training::{train, TrainingConfig};
use toolseg::{LabelMask, Tensor};
use toolseg_bench::{fcn, pattern};

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("dilated_conv_3x3_64x64x32");
    let (h, w, ch) = (64, 64, 32);
    let x = pattern(h * w * ch);
    let batch = Batch::from_vec(1, h, w, ch, x.clone());
    let tensor = Tensor::new(vec![h, w, ch], x).unwrap();
    let weights = Tensor::new(vec![3, 3, ch, ch], pattern(9 * ch * ch)).unwrap();
    for rate in [1, 2, 4] {
        let g = DilatedConvSpec::square(3, rate, 1, rate, ch, ch);
        group.bench_with_input(BenchmarkId::new("engine", rate), &g, |b, g| {
            b.iter(|| conv2d_forward(black_box(&batch), g, weights.data(), None))
        });
        group.bench_with_input(BenchmarkId::new("reference", rate), &g, |b, g| {
            b.iter(|| dilated_conv_2d(black_box(&tensor), g, &weights, None).unwrap())
        });
    }
    group.finish();
}

fn upsample(c: &mut Criterion) {
    let mut group = c.benchmark_group("bilinear_upsample_x8_32x40x3");
    let data = pattern(32 * 40 * 3);
    let batch = Batch::from_vec(1, 32, 40, 3, data.clone());
    let tensor = Tensor::new(vec![32, 40, 3], data).unwrap();
    group.bench_function("engine", |b| b.iter(|| upsample_forward(black_box(&batch), 8)));
    group.bench_function("reference", |b| b.iter(|| bilinear_upsample(black_box(&tensor), 8).unwrap()));
    group.finish();
}

fn network(c: &mut Criterion) {
    let mut group = c.benchmark_group("network");
    group.sample_size(10);
    let (spec, params) = fcn("tiny", 3, 8);
    let image = Tensor::new(vec![256, 320, 3], pattern(256 * 320 * 3)).unwrap();
    group.bench_function("tiny_forward_256x320", |b| b.iter(|| forward(&spec, &params, black_box(&image)).unwrap()));
    let (resnet, resnet_params) = fcn("resnet101", 3, 8);
    let small = Tensor::new(vec![64, 64, 3], pattern(64 * 64 * 3)).unwrap();
    group.bench_function("resnet101_forward_64x64", |b| {
        b.iter(|| forward(&resnet, &resnet_params, black_box(&small)).unwrap())
    });
    let data = tool_dataset(1, 2, 64, 64, 0);
    let config = TrainingConfig {
        max_iterations: 10,
        ..TrainingConfig::default()
    };
    group.bench_function("tiny_train_10_iterations_64x64", |b| {
        b.iter(|| train(&spec, params.clone(), &data, &config).unwrap())
    });
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut group = c.benchmark_group("metrics");
    let (h, w) = (256, 320);
    let gt = LabelMask::new(h, w, 3, (0..h * w).map(|i| (i % 3) as u8).collect()).unwrap();
    let pred = LabelMask::new(h, w, 3, (0..h * w).map(|i| (i % 5 % 3) as u8).collect()).unwrap();
    group.bench_function("confusion_256x320", |b| {
        b.iter(|| {
            let mut counts = ConfusionCounts::new(3);
            counts.add(black_box(&pred), black_box(&gt)).unwrap();
            counts
        })
    });
    let (spec, params) = fcn("tiny", 3, 8);
    let data = tool_dataset(2, 4, 64, 64, 0);
    group.sample_size(10);
    group.bench_function("evaluate_8_frames_64x64", |b| {
        b.iter(|| evaluate(&spec, &params, &data, &Default::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, conv, upsample, network, metrics);
criterion_main!(benches);
