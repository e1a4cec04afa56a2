//! Residual backbone: model specs, FCN conversion, output-stride surgery,
//! receptive fields, parameters and the compute engine.

pub mod engine;
mod network;
mod params;
mod receptive;
mod spec;
mod surgery;

pub use network::{
    backward, crop_batch, forward, forward_batch, forward_coarse, forward_train, pad_batch,
    padding_for, residual_forward, Phase, Tape, MIN_INPUT_SIZE,
};
pub use params::{is_trainable, ParamStore, HEAD_INIT_STD, MANIFEST_FILE};
pub use receptive::compute_receptive_field;
pub use spec::{
    build_resnet, build_resnet101, Activation, BatchNormMode, Block, BottleneckSpec, ConvLayer,
    Head, ModelSpec, PoolLayer, ResNetConfig, ResidualUnitSpec, Skip, BOTTLENECK_EXPANSION,
    FC_BIAS, FC_WEIGHT, HEAD_NAME,
};
pub use surgery::{apply_output_stride, convert_to_fcn, convert_to_fcn_with_params, FcnConversion};

use std::path::Path;

use crate::error::Result;

/// ResNet-101 classifier and its parameters, loaded from a parameter
/// directory when `pretrained` is given and drawn from `seed` otherwise.
/// Loaded parameters switch batch norm to frozen mode.
pub fn build_resnet101_with_params(
    num_classes: usize,
    pretrained: Option<&Path>,
    seed: u64,
) -> Result<(ModelSpec, ParamStore<f32>)> {
    let mut spec = build_resnet101(num_classes)?;
    let params = match pretrained {
        Some(dir) => {
            let params = ParamStore::load_dir(dir)?;
            params.check_against(&spec)?;
            spec.batch_norm_mode = BatchNormMode::Frozen;
            params
        }
        None => ParamStore::init(&spec, seed),
    };
    Ok((spec, params))
}
