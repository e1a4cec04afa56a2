//! Running a [`ModelSpec`]: inference, recorded training passes and the
//! matching backward pass.

use super::engine::{self, Batch, BnCache, Real};
use super::params::{is_trainable, ParamStore};
use super::spec::{
    Activation, BatchNormMode, Block, ConvLayer, Head, ModelSpec, ResidualUnitSpec, Skip, FC_BIAS,
    FC_WEIGHT,
};
use crate::error::{Error, Result};
use crate::tensor_ops::Tensor;

/// Smallest spatial extent `forward` accepts.
pub const MIN_INPUT_SIZE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Eval,
    Train,
}

struct ConvTape<T> {
    input: Batch<T>,
    bn: Option<BnCache<T>>,
    output: Batch<T>,
}

enum BlockTape<T> {
    Conv(ConvTape<T>),
    Pool {
        input_shape: (usize, usize, usize, usize),
        argmax: Vec<usize>,
    },
    Residual {
        inner: Vec<ConvTape<T>>,
        skip: Option<ConvTape<T>>,
        output: Batch<T>,
    },
}

/// Everything the backward pass needs from a training forward pass.
pub struct Tape<T> {
    blocks: Vec<BlockTape<T>>,
    head: ConvTape<T>,
    /// Batch statistics `(layer, mean, unbiased var)` to fold into the running
    /// estimates.
    pub bn_batch_stats: Vec<(String, Vec<T>, Vec<T>)>,
}

struct Ctx<T> {
    use_batch_stats: bool,
    record: bool,
    bn_batch_stats: Vec<(String, Vec<T>, Vec<T>)>,
}

fn conv_unit<T: Real>(
    layer: &ConvLayer,
    params: &ParamStore<T>,
    x: Batch<T>,
    ctx: &mut Ctx<T>,
) -> (Batch<T>, Option<ConvTape<T>>) {
    let bias = layer.bias.then(|| params.values(&layer.bias_name()));
    let mut y = engine::conv2d_forward(&x, &layer.geometry, params.values(&layer.weight_name()), bias);
    let mut bn_cache = None;
    if layer.batch_norm {
        let gamma = params.values(&layer.bn_name("gamma"));
        let beta = params.values(&layer.bn_name("beta"));
        let stats = (!ctx.use_batch_stats).then(|| {
            (
                params.values(&layer.bn_name("mean")),
                params.values(&layer.bn_name("var")),
            )
        });
        let (out, cache) = engine::batch_norm_forward(&y, gamma, beta, stats);
        if cache.batch_stats {
            let count = (y.n * y.h * y.w) as f64;
            let correction = T::from_f64(if count > 1.0 { count / (count - 1.0) } else { 1.0 });
            let unbiased = cache.var.iter().map(|&v| v * correction).collect();
            ctx.bn_batch_stats
                .push((layer.name.clone(), cache.mean.clone(), unbiased));
        }
        y = out;
        bn_cache = Some(cache);
    }
    if layer.activation == Activation::Relu {
        engine::relu_forward(&mut y);
    }
    let tape = ctx.record.then(|| ConvTape {
        input: x,
        bn: bn_cache,
        output: y.clone(),
    });
    (y, tape)
}

fn add_grad<T: Real>(grads: &mut ParamStore<T>, name: String, shape: Vec<usize>, values: Vec<T>) {
    match grads.get_mut(&name) {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(values) {
                *a += b;
            }
        }
        None => {
            grads.insert(name, Tensor::new(shape, values).expect("gradient shape"));
        }
    }
}

fn conv_unit_backward<T: Real>(
    layer: &ConvLayer,
    params: &ParamStore<T>,
    tape: &ConvTape<T>,
    mut grad: Batch<T>,
    frozen_bn: bool,
    need_input_grad: bool,
    grads: &mut ParamStore<T>,
) -> Option<Batch<T>> {
    if layer.activation == Activation::Relu {
        engine::relu_backward(&tape.output, &mut grad);
    }
    let c = layer.out_channels();
    if let Some(cache) = &tape.bn {
        let gamma = params.values(&layer.bn_name("gamma"));
        let bn = engine::batch_norm_backward(cache, gamma, &grad);
        if is_trainable(&layer.bn_name("gamma"), frozen_bn) {
            add_grad(grads, layer.bn_name("gamma"), vec![c], bn.gamma);
            add_grad(grads, layer.bn_name("beta"), vec![c], bn.beta);
        }
        grad = bn.input;
    }
    let weight = params.values(&layer.weight_name());
    let cg = engine::conv2d_backward(&tape.input, &layer.geometry, weight, &grad, need_input_grad);
    let g = &layer.geometry;
    add_grad(
        grads,
        layer.weight_name(),
        vec![g.kernel[0], g.kernel[1], g.in_channels, g.out_channels],
        cg.weight,
    );
    if layer.bias {
        add_grad(grads, layer.bias_name(), vec![c], cg.bias);
    }
    cg.input
}

fn residual_unit<T: Real>(
    unit: &ResidualUnitSpec,
    params: &ParamStore<T>,
    x: Batch<T>,
    ctx: &mut Ctx<T>,
) -> (Batch<T>, Option<BlockTape<T>>) {
    let (skip_out, skip_tape) = match &unit.skip {
        Skip::Identity => (x.clone(), None),
        Skip::Projection(p) => conv_unit(p, params, x.clone(), ctx),
    };
    let mut h = x;
    let mut inner = Vec::with_capacity(unit.inner.len());
    for layer in &unit.inner {
        let (out, tape) = conv_unit(layer, params, h, ctx);
        inner.extend(tape);
        h = out;
    }
    h.add_assign(&skip_out);
    if unit.activation == Activation::Relu {
        engine::relu_forward(&mut h);
    }
    let tape = ctx.record.then(|| BlockTape::Residual {
        inner,
        skip: skip_tape,
        output: h.clone(),
    });
    (h, tape)
}

fn run_body<T: Real>(
    spec: &ModelSpec,
    params: &ParamStore<T>,
    x: &Batch<T>,
    ctx: &mut Ctx<T>,
) -> Result<(Batch<T>, Vec<BlockTape<T>>)> {
    if x.c != spec.in_channels {
        return Err(Error::invalid(format!(
            "input has {} channels, model expects {}",
            x.c, spec.in_channels
        )));
    }
    spec.feature_shape(x.h, x.w)?;
    let mut h = x.clone();
    let mut tapes = Vec::new();
    for block in &spec.blocks {
        h = match block {
            Block::Conv(layer) => {
                let (out, tape) = conv_unit(layer, params, h, ctx);
                tapes.extend(tape.map(BlockTape::Conv));
                out
            }
            Block::MaxPool(p) => {
                let (out, argmax) = engine::max_pool_forward(&h, p.kernel, p.stride, p.padding, p.dilation);
                if ctx.record {
                    tapes.push(BlockTape::Pool {
                        input_shape: (h.n, h.h, h.w, h.c),
                        argmax,
                    });
                }
                out
            }
            Block::Residual(unit) => {
                let (out, tape) = residual_unit(unit, params, h, ctx);
                tapes.extend(tape);
                out
            }
        };
    }
    Ok((h, tapes))
}

fn eval_ctx<T>() -> Ctx<T> {
    Ctx {
        use_batch_stats: false,
        record: false,
        bn_batch_stats: Vec::new(),
    }
}

/// Body and head without upsampling. A classifier head yields `n × 1 × 1 × C`.
pub fn forward_coarse<T: Real>(spec: &ModelSpec, params: &ParamStore<T>, x: &Batch<T>) -> Result<Batch<T>> {
    let mut ctx = eval_ctx();
    let (features, _) = run_body(spec, params, x, &mut ctx)?;
    Ok(match &spec.head {
        Head::Conv(layer) => conv_unit(layer, params, features, &mut ctx).0,
        Head::Classifier {
            in_channels,
            num_classes,
        } => {
            let pooled = engine::global_avg_pool(&features);
            let mut out = Batch::zeros(pooled.n, 1, 1, *num_classes);
            T::gemm(
                pooled.n,
                *in_channels,
                *num_classes,
                &pooled.data,
                false,
                params.values(FC_WEIGHT),
                false,
                &mut out.data,
                false,
            );
            let bias = params.values(FC_BIAS);
            for row in out.data.chunks_exact_mut(*num_classes) {
                for (v, &b) in row.iter_mut().zip(bias) {
                    *v += b;
                }
            }
            out
        }
    })
}

/// Training-mode pass over a batch whose spatial size the network accepts.
/// Returns coarse logits and the tape for [`backward`].
pub fn forward_train<T: Real>(
    spec: &ModelSpec,
    params: &ParamStore<T>,
    x: &Batch<T>,
) -> Result<(Batch<T>, Tape<T>)> {
    let Head::Conv(head) = &spec.head else {
        return Err(Error::invalid("training requires a fully convolutional head"));
    };
    let mut ctx = Ctx {
        use_batch_stats: spec.batch_norm_mode == BatchNormMode::Trainable,
        record: true,
        bn_batch_stats: Vec::new(),
    };
    let (features, blocks) = run_body(spec, params, x, &mut ctx)?;
    let (logits, head_tape) = conv_unit(head, params, features, &mut ctx);
    Ok((
        logits,
        Tape {
            blocks,
            head: head_tape.expect("recording"),
            bn_batch_stats: ctx.bn_batch_stats,
        },
    ))
}

/// Gradients of every trainable tensor given the gradient of the coarse
/// logits.
pub fn backward<T: Real>(
    spec: &ModelSpec,
    params: &ParamStore<T>,
    tape: &Tape<T>,
    grad_logits: &Batch<T>,
) -> ParamStore<T> {
    let Head::Conv(head) = &spec.head else {
        panic!("backward requires a fully convolutional head");
    };
    let frozen = spec.batch_norm_mode == BatchNormMode::Frozen;
    let mut grads = ParamStore::new();
    let mut grad = conv_unit_backward(head, params, &tape.head, grad_logits.clone(), frozen, true, &mut grads)
        .expect("input gradient requested");
    for (index, (block, block_tape)) in spec.blocks.iter().zip(&tape.blocks).enumerate().rev() {
        let need_input = index > 0;
        let next = match (block, block_tape) {
            (Block::Conv(layer), BlockTape::Conv(t)) => {
                conv_unit_backward(layer, params, t, grad, frozen, need_input, &mut grads)
            }
            (Block::MaxPool(_), BlockTape::Pool { input_shape, argmax }) => {
                need_input.then(|| engine::max_pool_backward(*input_shape, argmax, &grad))
            }
            (Block::Residual(unit), BlockTape::Residual { inner, skip, output }) => {
                if unit.activation == Activation::Relu {
                    engine::relu_backward(output, &mut grad);
                }
                let skip_grad = match (&unit.skip, skip) {
                    (Skip::Identity, _) => need_input.then(|| grad.clone()),
                    (Skip::Projection(p), Some(t)) => {
                        conv_unit_backward(p, params, t, grad.clone(), frozen, need_input, &mut grads)
                    }
                    (Skip::Projection(_), None) => unreachable!("projection is recorded"),
                };
                let mut g = Some(grad);
                for (i, (layer, t)) in unit.inner.iter().zip(inner).enumerate().rev() {
                    let upstream = g.take().expect("inner gradient");
                    g = conv_unit_backward(layer, params, t, upstream, frozen, i > 0 || need_input, &mut grads);
                }
                match (skip_grad, g) {
                    (Some(mut s), Some(g)) => {
                        s.add_assign(&g);
                        Some(s)
                    }
                    _ => None,
                }
            }
            _ => unreachable!("tape out of sync with spec"),
        };
        match next {
            Some(g) => grad = g,
            None => break,
        }
    }
    grads
}

/// `(top, left, padded_h, padded_w)` for symmetric zero padding up to a
/// multiple of `multiple`.
pub fn padding_for(h: usize, w: usize, multiple: usize) -> (usize, usize, usize, usize) {
    let ph = h.div_ceil(multiple) * multiple;
    let pw = w.div_ceil(multiple) * multiple;
    ((ph - h) / 2, (pw - w) / 2, ph, pw)
}

pub fn pad_batch<T: Real>(x: &Batch<T>, top: usize, left: usize, h: usize, w: usize) -> Batch<T> {
    if (top, left, h, w) == (0, 0, x.h, x.w) {
        return x.clone();
    }
    let mut out = Batch::zeros(x.n, h, w, x.c);
    for i in 0..x.n {
        let src = x.image(i);
        let dst = out.image_mut(i);
        for y in 0..x.h {
            let s = y * x.w * x.c;
            let d = ((y + top) * w + left) * x.c;
            dst[d..d + x.w * x.c].copy_from_slice(&src[s..s + x.w * x.c]);
        }
    }
    out
}

pub fn crop_batch<T: Real>(x: &Batch<T>, top: usize, left: usize, h: usize, w: usize) -> Batch<T> {
    if (top, left, h, w) == (0, 0, x.h, x.w) {
        return x.clone();
    }
    let mut out = Batch::zeros(x.n, h, w, x.c);
    for i in 0..x.n {
        let src = x.image(i);
        let dst = out.image_mut(i);
        for y in 0..h {
            let s = ((y + top) * x.w + left) * x.c;
            let d = y * w * x.c;
            dst[d..d + w * x.c].copy_from_slice(&src[s..s + w * x.c]);
        }
    }
    out
}

/// Full-resolution logits for a batch: symmetric zero padding to a multiple
/// of the output stride, the network, bilinear upsampling by the output
/// stride, and a crop back to the input size.
pub fn forward_batch<T: Real>(spec: &ModelSpec, params: &ParamStore<T>, x: &Batch<T>) -> Result<Batch<T>> {
    if !spec.is_fully_convolutional() {
        return Err(Error::invalid("dense prediction requires a fully convolutional head"));
    }
    if x.h < MIN_INPUT_SIZE || x.w < MIN_INPUT_SIZE {
        return Err(Error::invalid(format!(
            "input {}×{} is smaller than {MIN_INPUT_SIZE}×{MIN_INPUT_SIZE}",
            x.h, x.w
        )));
    }
    let stride = spec.output_stride;
    let (top, left, ph, pw) = padding_for(x.h, x.w, stride);
    let padded = pad_batch(x, top, left, ph, pw);
    let coarse = forward_coarse(spec, params, &padded)?;
    let full = engine::upsample_forward(&coarse, stride);
    Ok(crop_batch(&full, top, left, x.h, x.w))
}

/// Full-resolution `h × w × C` logits for one `h × w × c` network input.
pub fn forward<T: Real>(spec: &ModelSpec, params: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let &[h, w, c] = input.shape() else {
        return Err(Error::ShapeMismatch(format!("expected h×w×c input, got {:?}", input.shape())));
    };
    let batch = Batch::from_vec(1, h, w, c, input.data().to_vec());
    let out = forward_batch(spec, params, &batch)?;
    Tensor::new(vec![out.h, out.w, out.c], out.data)
}

/// `f(h(x) + F(x))` for one unit in inference mode.
pub fn residual_forward<T: Real>(
    x: &Tensor<T>,
    unit: &ResidualUnitSpec,
    params: &ParamStore<T>,
) -> Result<Tensor<T>> {
    unit.validate()?;
    let &[h, w, c] = x.shape() else {
        return Err(Error::ShapeMismatch(format!("expected h×w×c input, got {:?}", x.shape())));
    };
    if c != unit.in_channels() {
        return Err(Error::invalid(format!(
            "{}: input has {c} channels, unit expects {}",
            unit.name,
            unit.in_channels()
        )));
    }
    let batch = Batch::from_vec(1, h, w, c, x.data().to_vec());
    let mut shape = (h, w);
    for layer in &unit.inner {
        match (
            layer.geometry.output_len(0, shape.0),
            layer.geometry.output_len(1, shape.1),
        ) {
            (Some(a), Some(b)) => shape = (a, b),
            _ => return Err(Error::invalid(format!("{}: input too small", layer.name))),
        }
    }
    if let Skip::Identity = unit.skip {
        if shape != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "{}: residual branch yields {}×{}, identity skip {h}×{w}",
                unit.name, shape.0, shape.1
            )));
        }
    }
    let (out, _) = residual_unit(unit, params, batch, &mut eval_ctx());
    Tensor::new(vec![out.h, out.w, out.c], out.data)
}
