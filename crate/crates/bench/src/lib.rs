//! Fixtures shared by the benchmarks in `benches/`.

use toolseg::backbone::{apply_output_stride, build_resnet, convert_to_fcn_with_params, ModelSpec, ParamStore, ResNetConfig};

/// Deterministic values in `[-1, 1]`.
pub fn pattern(len: usize) -> Vec<f32> {
    (0..len).map(|i| ((i as f32) * 0.618).sin()).collect()
}

/// Fully convolutional `arch` network with `classes` outputs at `stride`.
pub fn fcn(arch: &str, classes: usize, stride: usize) -> (ModelSpec, ParamStore<f32>) {
    let layout = ResNetConfig::by_name(arch).expect("known architecture");
    let classifier = build_resnet(&layout, 1000, arch).expect("valid layout");
    let params = ParamStore::init(&classifier, 0);
    let (converted, params) = convert_to_fcn_with_params(&classifier, params, classes, 0).expect("conversion");
    let spec = apply_output_stride(&converted.model, stride).expect("surgery");
    (spec, params)
}
