//! Declarative description of the network: layers, residual units, head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_ops::DilatedConvSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
}

/// How batch normalisation behaves while training. Evaluation always uses the
/// stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchNormMode {
    /// Batch statistics, trainable scale/shift, running statistics updated.
    Trainable,
    /// Stored statistics and fixed scale/shift (used when fine-tuning
    /// pretrained weights).
    Frozen,
}

/// Convolution followed by optional batch norm and an activation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub name: String,
    pub geometry: DilatedConvSpec,
    pub bias: bool,
    pub batch_norm: bool,
    pub activation: Activation,
}

impl ConvLayer {
    /// Square conv with "same"-style padding `rate (K - 1) / 2`.
    pub fn new(
        name: impl Into<String>,
        kernel: usize,
        stride: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        Self {
            name: name.into(),
            geometry: DilatedConvSpec::square(
                kernel,
                1,
                stride,
                (kernel - 1) / 2,
                in_channels,
                out_channels,
            ),
            bias: false,
            batch_norm: true,
            activation: Activation::Relu,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_batch_norm(mut self, batch_norm: bool) -> Self {
        self.batch_norm = batch_norm;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.geometry.padding = [padding; 2];
        self
    }

    pub fn in_channels(&self) -> usize {
        self.geometry.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.geometry.out_channels
    }

    pub fn stride(&self) -> usize {
        self.geometry.stride[0]
    }

    pub fn rate(&self) -> usize {
        self.geometry.rate[0]
    }

    pub fn kernel(&self) -> usize {
        self.geometry.kernel[0]
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn bn_name(&self, field: &str) -> String {
        format!("{}.bn.{field}", self.name)
    }

    fn param_shapes(&self, out: &mut Vec<(String, Vec<usize>)>) {
        let g = &self.geometry;
        out.push((
            self.weight_name(),
            vec![g.kernel[0], g.kernel[1], g.in_channels, g.out_channels],
        ));
        if self.bias {
            out.push((self.bias_name(), vec![g.out_channels]));
        }
        if self.batch_norm {
            for field in BN_FIELDS {
                out.push((self.bn_name(field), vec![g.out_channels]));
            }
        }
    }
}

pub(crate) const BN_FIELDS: [&str; 4] = ["gamma", "beta", "mean", "var"];

/// Max pooling window. Out-of-range taps are ignored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolLayer {
    pub name: String,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Skip {
    Identity,
    Projection(ConvLayer),
}

/// `x_{l+1} = f(h(x_l) + F(x_l))` where `F` is the chain of `inner` layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidualUnitSpec {
    pub name: String,
    pub inner: Vec<ConvLayer>,
    pub skip: Skip,
    pub activation: Activation,
}

impl ResidualUnitSpec {
    pub fn in_channels(&self) -> usize {
        self.inner[0].in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.inner.last().map_or(0, ConvLayer::out_channels)
    }

    pub fn stride(&self) -> usize {
        self.inner.iter().map(ConvLayer::stride).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.inner.is_empty() {
            return Err(Error::invalid(format!("{}: empty residual function", self.name)));
        }
        for pair in self.inner.windows(2) {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(Error::invalid(format!(
                    "{}: {} emits {} channels but {} expects {}",
                    self.name,
                    pair[0].name,
                    pair[0].out_channels(),
                    pair[1].name,
                    pair[1].in_channels()
                )));
            }
        }
        match &self.skip {
            Skip::Identity => {
                if self.in_channels() != self.out_channels() || self.stride() != 1 {
                    return Err(Error::invalid(format!(
                        "{}: identity skip needs matching channels and unit stride",
                        self.name
                    )));
                }
            }
            Skip::Projection(p) => {
                if p.in_channels() != self.in_channels()
                    || p.out_channels() != self.out_channels()
                    || p.stride() != self.stride()
                {
                    return Err(Error::invalid(format!(
                        "{}: projection {} does not match the residual branch",
                        self.name, p.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Bottleneck unit: 1×1 reduce, 3×3 spatial, 1×1 expand (×4).
///
/// The downsampling stride, when present, sits on the reduce convolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BottleneckSpec {
    pub reduce: ConvLayer,
    pub spatial: ConvLayer,
    pub expand: ConvLayer,
    pub batch_norm: bool,
}

pub const BOTTLENECK_EXPANSION: usize = 4;

impl BottleneckSpec {
    pub fn new(
        name: &str,
        in_channels: usize,
        width: usize,
        stride: usize,
        batch_norm: bool,
    ) -> Self {
        let layer = |suffix: &str, k, s, cin, cout| {
            ConvLayer::new(format!("{name}.{suffix}"), k, s, cin, cout)
                .with_batch_norm(batch_norm)
                .with_bias(!batch_norm)
        };
        Self {
            reduce: layer("reduce", 1, stride, in_channels, width),
            spatial: layer("spatial", 3, 1, width, width),
            expand: layer("expand", 1, 1, width, width * BOTTLENECK_EXPANSION)
                .with_activation(Activation::Identity),
            batch_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let width = self.reduce.out_channels();
        if self.spatial.in_channels() != width
            || self.spatial.out_channels() != width
            || self.expand.in_channels() != width
        {
            return Err(Error::invalid("bottleneck inner widths disagree"));
        }
        if self.expand.out_channels() != BOTTLENECK_EXPANSION * width {
            return Err(Error::invalid("bottleneck expand must emit 4× the reduced width"));
        }
        Ok(())
    }

    /// Residual unit with an identity skip when shapes allow, a strided 1×1
    /// projection otherwise.
    pub fn into_unit(self, name: &str) -> Result<ResidualUnitSpec> {
        self.validate()?;
        let cin = self.reduce.in_channels();
        let cout = self.expand.out_channels();
        let stride = self.reduce.stride();
        let skip = if cin == cout && stride == 1 {
            Skip::Identity
        } else {
            Skip::Projection(
                ConvLayer::new(format!("{name}.shortcut"), 1, stride, cin, cout)
                    .with_batch_norm(self.batch_norm)
                    .with_bias(!self.batch_norm)
                    .with_activation(Activation::Identity),
            )
        };
        let unit = ResidualUnitSpec {
            name: name.to_string(),
            inner: vec![self.reduce, self.spatial, self.expand],
            skip,
            activation: Activation::Relu,
        };
        unit.validate()?;
        Ok(unit)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Conv(ConvLayer),
    MaxPool(PoolLayer),
    Residual(ResidualUnitSpec),
}

impl Block {
    pub fn name(&self) -> &str {
        match self {
            Block::Conv(c) => &c.name,
            Block::MaxPool(p) => &p.name,
            Block::Residual(r) => &r.name,
        }
    }

    pub fn stride(&self) -> usize {
        match self {
            Block::Conv(c) => c.stride(),
            Block::MaxPool(p) => p.stride,
            Block::Residual(r) => r.stride(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// Global average pooling followed by a fully connected layer.
    Classifier {
        in_channels: usize,
        num_classes: usize,
    },
    /// Per-position 1×1 convolution producing class logits.
    Conv(ConvLayer),
}

pub const FC_WEIGHT: &str = "head.fc.weight";
pub const FC_BIAS: &str = "head.fc.bias";
pub const HEAD_NAME: &str = "head";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub in_channels: usize,
    pub blocks: Vec<Block>,
    pub head: Head,
    pub output_stride: usize,
    pub num_classes: usize,
    pub batch_norm_mode: BatchNormMode,
}

impl ModelSpec {
    pub fn is_fully_convolutional(&self) -> bool {
        matches!(self.head, Head::Conv(_))
    }

    pub fn feature_channels(&self) -> usize {
        self.blocks
            .iter()
            .rev()
            .find_map(|b| match b {
                Block::Conv(c) => Some(c.out_channels()),
                Block::Residual(r) => Some(r.out_channels()),
                Block::MaxPool(_) => None,
            })
            .unwrap_or(self.in_channels)
    }

    /// Product of all strides in the body.
    pub fn body_stride(&self) -> usize {
        self.blocks.iter().map(Block::stride).product()
    }

    /// Every convolution in execution order, projections included, head last.
    pub fn conv_layers(&self) -> Vec<&ConvLayer> {
        let mut out = Vec::new();
        for block in &self.blocks {
            match block {
                Block::Conv(c) => out.push(c),
                Block::MaxPool(_) => {}
                Block::Residual(r) => {
                    if let Skip::Projection(p) = &r.skip {
                        out.push(p);
                    }
                    out.extend(r.inner.iter());
                }
            }
        }
        if let Head::Conv(c) = &self.head {
            out.push(c);
        }
        out
    }

    pub fn count_conv_layers(&self) -> usize {
        self.conv_layers().len()
    }

    /// Names and shapes of every stored tensor, in execution order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for block in &self.blocks {
            match block {
                Block::Conv(c) => c.param_shapes(&mut out),
                Block::MaxPool(_) => {}
                Block::Residual(r) => {
                    for layer in &r.inner {
                        layer.param_shapes(&mut out);
                    }
                    if let Skip::Projection(p) = &r.skip {
                        p.param_shapes(&mut out);
                    }
                }
            }
        }
        match &self.head {
            Head::Classifier {
                in_channels,
                num_classes,
            } => {
                out.push((FC_WEIGHT.into(), vec![*in_channels, *num_classes]));
                out.push((FC_BIAS.into(), vec![*num_classes]));
            }
            Head::Conv(c) => c.param_shapes(&mut out),
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Spatial size and channels of the feature map entering the head.
    pub fn feature_shape(&self, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        let mut shape = (h, w, self.in_channels);
        for block in &self.blocks {
            shape = match block {
                Block::Conv(c) => conv_shape(c, shape)?,
                Block::MaxPool(p) => {
                    let len = |n: usize| {
                        let ext = (p.kernel - 1) * p.dilation + 1;
                        let padded = n + 2 * p.padding;
                        (padded >= ext).then(|| (padded - ext) / p.stride + 1)
                    };
                    match (len(shape.0), len(shape.1)) {
                        (Some(a), Some(b)) => (a, b, shape.2),
                        _ => return Err(too_small(&p.name, shape)),
                    }
                }
                Block::Residual(r) => {
                    let mut s = shape;
                    for layer in &r.inner {
                        s = conv_shape(layer, s)?;
                    }
                    s
                }
            };
        }
        Ok(shape)
    }

    /// Shape of the head output: `h' × w' × C` for an FCN, `1 × 1 × C` for a
    /// classifier.
    pub fn logit_shape(&self, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        let (fh, fw, _) = self.feature_shape(h, w)?;
        Ok(match self.head {
            Head::Classifier { num_classes, .. } => (1, 1, num_classes),
            Head::Conv(_) => (fh, fw, self.num_classes),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut channels = self.in_channels;
        for block in &self.blocks {
            match block {
                Block::Conv(c) => {
                    c.geometry.validate()?;
                    if c.in_channels() != channels {
                        return Err(channel_error(&c.name, channels, c.in_channels()));
                    }
                    channels = c.out_channels();
                }
                Block::MaxPool(p) => {
                    if p.kernel == 0 || p.stride == 0 || p.dilation == 0 {
                        return Err(Error::invalid(format!("{}: degenerate pooling", p.name)));
                    }
                }
                Block::Residual(r) => {
                    r.validate()?;
                    if r.in_channels() != channels {
                        return Err(channel_error(&r.name, channels, r.in_channels()));
                    }
                    channels = r.out_channels();
                }
            }
        }
        let (head_in, head_classes) = match &self.head {
            Head::Classifier {
                in_channels,
                num_classes,
            } => (*in_channels, *num_classes),
            Head::Conv(c) => (c.in_channels(), c.out_channels()),
        };
        if head_in != channels {
            return Err(channel_error(HEAD_NAME, channels, head_in));
        }
        if head_classes != self.num_classes || self.num_classes == 0 {
            return Err(Error::invalid(format!(
                "head emits {head_classes} classes, model declares {}",
                self.num_classes
            )));
        }
        let stride = self.body_stride();
        if stride != self.output_stride {
            return Err(Error::invalid(format!(
                "declared output stride {} but layers compose to {stride}",
                self.output_stride
            )));
        }
        Ok(())
    }
}

fn conv_shape(c: &ConvLayer, (h, w, _): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
    match (c.geometry.output_len(0, h), c.geometry.output_len(1, w)) {
        (Some(a), Some(b)) => Ok((a, b, c.out_channels())),
        _ => Err(too_small(&c.name, (h, w, c.in_channels()))),
    }
}

fn too_small(layer: &str, shape: (usize, usize, usize)) -> Error {
    Error::invalid(format!(
        "input too small at {layer}: {}×{} cannot hold the kernel",
        shape.0, shape.1
    ))
}

fn channel_error(layer: &str, have: usize, want: usize) -> Error {
    Error::invalid(format!("{layer}: receives {have} channels, expects {want}"))
}

/// Layout of a bottleneck ResNet.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResNetConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stage_units: Vec<usize>,
    pub stage_widths: Vec<usize>,
    pub batch_norm: bool,
}

impl ResNetConfig {
    /// 3/4/23/3 bottleneck units with widths 64..512.
    pub fn resnet101() -> Self {
        Self {
            in_channels: 3,
            stem_channels: 64,
            stage_units: vec![3, 4, 23, 3],
            stage_widths: vec![64, 128, 256, 512],
            batch_norm: true,
        }
    }

    pub fn resnet50() -> Self {
        Self {
            stage_units: vec![3, 4, 6, 3],
            ..Self::resnet101()
        }
    }

    /// One narrow unit per stage; same stride layout as ResNet-101.
    pub fn tiny() -> Self {
        Self {
            in_channels: 3,
            stem_channels: 16,
            stage_units: vec![1, 1, 1, 1],
            stage_widths: vec![8, 8, 16, 16],
            batch_norm: true,
        }
    }

    /// `tiny` at four times the width; still narrower than ResNet-101.
    pub fn small() -> Self {
        Self {
            stem_channels: 64,
            stage_widths: vec![32, 32, 64, 64],
            ..Self::tiny()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "small" => Some(Self::small()),
            "resnet101" => Some(Self::resnet101()),
            "resnet50" => Some(Self::resnet50()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }
}

/// Classification ResNet: 7×7/2 stem, 3×3/2 max pool, then one stage per
/// entry of `stage_units` (stride 1 for the first, 2 afterwards), global
/// pooling and a fully connected layer. Output stride 32 for four stages.
pub fn build_resnet(config: &ResNetConfig, num_classes: usize, name: &str) -> Result<ModelSpec> {
    if num_classes == 0 {
        return Err(Error::invalid("num_classes must be positive"));
    }
    if config.stage_units.len() != config.stage_widths.len() || config.stage_units.is_empty() {
        return Err(Error::invalid("stage_units and stage_widths must be non-empty and equal length"));
    }
    let bn = config.batch_norm;
    let mut blocks = vec![
        Block::Conv(
            ConvLayer::new("stem.conv", 7, 2, config.in_channels, config.stem_channels)
                .with_batch_norm(bn)
                .with_bias(!bn),
        ),
        Block::MaxPool(PoolLayer {
            name: "stem.pool".into(),
            kernel: 3,
            stride: 2,
            padding: 1,
            dilation: 1,
        }),
    ];
    let mut channels = config.stem_channels;
    for (stage, (&units, &width)) in config
        .stage_units
        .iter()
        .zip(&config.stage_widths)
        .enumerate()
    {
        for unit in 0..units {
            let stride = if stage > 0 && unit == 0 { 2 } else { 1 };
            let unit_name = format!("layer{}.{unit}", stage + 1);
            let spec = BottleneckSpec::new(&unit_name, channels, width, stride, bn)
                .into_unit(&unit_name)?;
            channels = spec.out_channels();
            blocks.push(Block::Residual(spec));
        }
    }
    let model = ModelSpec {
        name: name.to_string(),
        in_channels: config.in_channels,
        output_stride: 1,
        blocks,
        head: Head::Classifier {
            in_channels: channels,
            num_classes,
        },
        num_classes,
        batch_norm_mode: BatchNormMode::Trainable,
    };
    let model = ModelSpec {
        output_stride: model.body_stride(),
        ..model
    };
    model.validate()?;
    Ok(model)
}

/// Standard ResNet-101 classifier, output stride 32.
pub fn build_resnet101(num_classes: usize) -> Result<ModelSpec> {
    build_resnet(&ResNetConfig::resnet101(), num_classes, "resnet101")
}
