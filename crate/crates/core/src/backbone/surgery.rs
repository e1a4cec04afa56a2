//! Weight-preserving structural edits: classifier → FCN, and output stride
//! 32 → 8 by un-striding the last two downsampling blocks and dilating every
//! convolution after them.

use log::warn;

use super::params::ParamStore;
use super::spec::{Activation, Block, ConvLayer, Head, ModelSpec, Skip, HEAD_NAME};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FcnConversion {
    pub model: ModelSpec,
    /// Set when the input already had a convolutional head; the model is
    /// returned unchanged in that case.
    pub already_convolutional: bool,
}

/// Drop global pooling and the fully connected layer, and attach a 1×1
/// convolution with `num_classes` outputs.
pub fn convert_to_fcn(model: &ModelSpec, num_classes: usize) -> Result<FcnConversion> {
    if num_classes == 0 {
        return Err(Error::invalid("num_classes must be positive"));
    }
    let in_channels = match &model.head {
        Head::Conv(_) => {
            warn!("{} is already fully convolutional; leaving it unchanged", model.name);
            return Ok(FcnConversion {
                model: model.clone(),
                already_convolutional: true,
            });
        }
        Head::Classifier { in_channels, .. } => *in_channels,
    };
    // The head sits after every modified layer, so it inherits the current rate.
    let rate = model.conv_layers().last().map_or(1, |c| c.rate());
    let mut head = ConvLayer::new(HEAD_NAME, 1, 1, in_channels, num_classes)
        .with_bias(true)
        .with_batch_norm(false)
        .with_activation(Activation::Identity);
    head.geometry.rate = [rate; 2];
    let mut out = model.clone();
    out.head = Head::Conv(head);
    out.num_classes = num_classes;
    Ok(FcnConversion {
        model: out,
        already_convolutional: false,
    })
}

/// [`convert_to_fcn`] plus parameter bookkeeping: the classifier tensors are
/// dropped and the new head is drawn from N(0, 0.01²) with zero bias. Every
/// other tensor is moved across untouched.
pub fn convert_to_fcn_with_params(
    model: &ModelSpec,
    params: ParamStore<f32>,
    num_classes: usize,
    seed: u64,
) -> Result<(FcnConversion, ParamStore<f32>)> {
    let conversion = convert_to_fcn(model, num_classes)?;
    if conversion.already_convolutional {
        return Ok((conversion, params));
    }
    let params = params.adopt(&conversion.model, seed)?;
    Ok((conversion, params))
}

/// Un-stride the last two downsampling blocks and dilate what follows.
///
/// Rates compose multiplicatively: convolutions after the first modified block
/// get rate 2, after the second rate 4. Paddings scale with the rate so every
/// surviving position sees the same taps as before. Supports 32 → 8 through
/// two stride-2 blocks; asking for the current stride is a no-op.
pub fn apply_output_stride(model: &ModelSpec, target_stride: usize) -> Result<ModelSpec> {
    if target_stride == model.output_stride {
        return Ok(model.clone());
    }
    if target_stride != 8 || model.output_stride != 32 {
        return Err(Error::invalid(format!(
            "output stride {target_stride} is not reachable from {} by removing two stride-2 layers",
            model.output_stride
        )));
    }
    let downsampling: Vec<usize> = model
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.stride() > 1)
        .map(|(i, _)| i)
        .collect();
    if downsampling.len() < 2 {
        return Err(Error::invalid("model has fewer than two downsampling blocks"));
    }
    let targets = &downsampling[downsampling.len() - 2..];
    for &t in targets {
        if model.blocks[t].stride() != 2 {
            return Err(Error::invalid(format!(
                "{} downsamples by {}, expected 2",
                model.blocks[t].name(),
                model.blocks[t].stride()
            )));
        }
    }

    let mut out = model.clone();
    let mut rate = 1;
    for (index, block) in out.blocks.iter_mut().enumerate() {
        let modified = targets.contains(&index);
        match block {
            Block::Conv(c) => {
                dilate(c, rate);
                if modified {
                    unstride(c);
                    rate *= 2;
                }
            }
            Block::MaxPool(p) => {
                p.padding *= rate;
                p.dilation *= rate;
                if modified {
                    p.stride = 1;
                    rate *= 2;
                }
            }
            Block::Residual(unit) => {
                let unit_rate = rate;
                let mut inner_rate = rate;
                for layer in &mut unit.inner {
                    dilate(layer, inner_rate);
                    if modified && layer.stride() == 2 {
                        unstride(layer);
                        inner_rate *= 2;
                    }
                }
                if let Skip::Projection(p) = &mut unit.skip {
                    dilate(p, unit_rate);
                    if modified {
                        unstride(p);
                    }
                }
                rate = inner_rate;
            }
        }
    }
    if let Head::Conv(c) = &mut out.head {
        dilate(c, rate);
    }
    out.output_stride = out.body_stride();
    debug_assert_eq!(out.output_stride, target_stride);
    out.validate()?;
    Ok(out)
}

fn dilate(layer: &mut ConvLayer, factor: usize) {
    if factor == 1 {
        return;
    }
    let g = &mut layer.geometry;
    for a in 0..2 {
        g.rate[a] *= factor;
        g.padding[a] *= factor;
    }
}

fn unstride(layer: &mut ConvLayer) {
    layer.geometry.stride = [1, 1];
}
