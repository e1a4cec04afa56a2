use super::spec::{Block, ConvLayer, Head, ModelSpec, Skip};
use crate::tensor_ops::DilatedConvSpec;

/// Receptive field and cumulative stride along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Field {
    size: usize,
    jump: usize,
}

impl Field {
    fn through(self, kernel: usize, rate: usize, stride: usize) -> Self {
        let extent = kernel + (kernel - 1) * (rate - 1);
        Field {
            size: self.size + (extent - 1) * self.jump,
            jump: self.jump * stride,
        }
    }

    fn conv(self, geometry: &DilatedConvSpec, axis: usize) -> Self {
        self.through(geometry.kernel[axis], geometry.rate[axis], geometry.stride[axis])
    }
}

/// Receptive field `[rows, cols]` of one head output.
///
/// Uses effective kernel extents `K + (K-1)(r-1)` and cumulative strides; a
/// residual unit contributes the larger of its two branches. Global pooling
/// in a classifier head is not counted, so the result is the field of one
/// position of the pooled feature map.
pub fn compute_receptive_field(model: &ModelSpec) -> [usize; 2] {
    [0, 1].map(|axis| {
        let mut field = Field { size: 1, jump: 1 };
        for block in &model.blocks {
            field = match block {
                Block::Conv(c) => field.conv(&c.geometry, axis),
                Block::MaxPool(p) => field.through(p.kernel, p.dilation, p.stride),
                Block::Residual(unit) => {
                    let main = unit
                        .inner
                        .iter()
                        .fold(field, |f, layer: &ConvLayer| f.conv(&layer.geometry, axis));
                    let skip = match &unit.skip {
                        Skip::Identity => field,
                        Skip::Projection(p) => field.conv(&p.geometry, axis),
                    };
                    Field {
                        size: main.size.max(skip.size),
                        jump: main.jump,
                    }
                }
            };
        }
        if let Head::Conv(c) = &model.head {
            field = field.conv(&c.geometry, axis);
        }
        field.size
    })
}
