//! Layer definitions and their forward evaluation.
//!
//! A linear layer computes `x A + b` with `A` stored input-rows by
//! output-cols; a convolutional layer holds a `[P][C][kh][kw]` kernel with
//! per-side input padding and stride. Max pooling exists both as a
//! standalone node and as an activation.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::math;
use crate::tensor::Tensor;

/// Elementwise or structural nonlinearity applied after a layer.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ActivationKind {
    Identity,
    Relu,
    Softmax,
    MaxPool { size: usize, stride: usize },
}

impl ActivationKind {
    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::Identity => "identity",
            ActivationKind::Relu => "relu",
            ActivationKind::Softmax => "softmax",
            ActivationKind::MaxPool { .. } => "maxpool",
        }
    }
}

/// Fully connected layer: weights `A` (m inputs x n outputs), bias length n.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    weights: Mat,
    bias: Vec<f64>,
    activation: ActivationKind,
}

impl LinearLayer {
    pub fn new(weights: Mat, bias: Vec<f64>, activation: ActivationKind) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::DimensionMismatch {
                context: "linear bias",
                expected: weights.cols(),
                got: bias.len(),
            });
        }
        validate_activation(&activation)?;
        Ok(LinearLayer {
            weights,
            bias,
            activation,
        })
    }

    pub fn weights(&self) -> &Mat {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Convolutional layer over `[C][H][W]` inputs producing `[P][H'][W']`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[P][C][kh][kw]` kernel tensor.
    kernel: Tensor,
    bias: Vec<f64>,
    /// Input padding per side: top, bottom, left, right.
    input_padding: [usize; 4],
    /// Vertical and horizontal stride.
    stride: [usize; 2],
    activation: ActivationKind,
}

impl ConvLayer {
    pub fn new(
        kernel: Tensor,
        bias: Vec<f64>,
        input_padding: [usize; 4],
        stride: [usize; 2],
        activation: ActivationKind,
    ) -> Result<Self> {
        if kernel.rank() != 4 {
            return Err(Error::InvalidTensor {
                reason: alloc::format!("conv kernel must be rank 4, got rank {}", kernel.rank()),
            });
        }
        let maps = kernel.shape()[0];
        if bias.len() != maps {
            return Err(Error::DimensionMismatch {
                context: "conv bias",
                expected: maps,
                got: bias.len(),
            });
        }
        if stride[0] == 0 || stride[1] == 0 {
            return Err(Error::InvalidTensor {
                reason: alloc::format!("stride must be positive, got {stride:?}"),
            });
        }
        validate_activation(&activation)?;
        Ok(ConvLayer {
            kernel,
            bias,
            input_padding,
            stride,
            activation,
        })
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn input_padding(&self) -> [usize; 4] {
        self.input_padding
    }

    pub fn stride(&self) -> [usize; 2] {
        self.stride
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn maps(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel_height(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn kernel_width(&self) -> usize {
        self.kernel.shape()[3]
    }

    /// Output spatial dims for an `[C][H][W]` input, or the errors the
    /// forward pass would produce.
    pub fn output_dims(&self, input: &[usize]) -> Result<[usize; 3]> {
        if input.len() != 3 {
            return Err(Error::DimensionMismatch {
                context: "conv input rank",
                expected: 3,
                got: input.len(),
            });
        }
        if input[0] != self.channels() {
            return Err(Error::DimensionMismatch {
                context: "conv input channels",
                expected: self.channels(),
                got: input[0],
            });
        }
        let [pt, pb, pl, pr] = self.input_padding;
        let padded_h = input[1] + pt + pb;
        let padded_w = input[2] + pl + pr;
        if padded_h < self.kernel_height() || padded_w < self.kernel_width() {
            return Err(Error::EmptyOutput);
        }
        let out_h = (padded_h - self.kernel_height()) / self.stride[0] + 1;
        let out_w = (padded_w - self.kernel_width()) / self.stride[1] + 1;
        Ok([self.maps(), out_h, out_w])
    }
}

/// Standalone max-pooling node (square window, no padding).
#[derive(Debug, Clone, PartialEq)]
pub struct PoolLayer {
    size: usize,
    stride: usize,
}

impl PoolLayer {
    pub fn new(size: usize, stride: usize) -> Result<Self> {
        if size == 0 || stride == 0 {
            return Err(Error::InvalidTensor {
                reason: alloc::format!("pool size/stride must be positive, got {size}/{stride}"),
            });
        }
        Ok(PoolLayer { size, stride })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }
}

/// One node of a model graph.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerNode {
    Linear(LinearLayer),
    Conv(ConvLayer),
    Pool(PoolLayer),
}

impl LayerNode {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerNode::Linear(_) => "linear",
            LayerNode::Conv(_) => "conv",
            LayerNode::Pool(_) => "pool",
        }
    }

    /// Weight buffer in container order (`A` row-major for linear,
    /// `[P][C][kh][kw]` for conv); pooling layers carry no weights.
    pub fn flat_weights(&self) -> Option<&[f64]> {
        match self {
            LayerNode::Linear(l) => Some(l.weights().data()),
            LayerNode::Conv(c) => Some(c.kernel().data()),
            LayerNode::Pool(_) => None,
        }
    }

    pub fn is_eligible(&self) -> bool {
        !matches!(self, LayerNode::Pool(_))
    }

    pub fn param_count(&self) -> usize {
        match self {
            LayerNode::Linear(l) => l.weights().data().len() + l.bias().len(),
            LayerNode::Conv(c) => c.kernel().len() + c.bias().len(),
            LayerNode::Pool(_) => 0,
        }
    }
}

fn validate_activation(activation: &ActivationKind) -> Result<()> {
    if let ActivationKind::MaxPool { size, stride } = activation {
        if *size == 0 || *stride == 0 {
            return Err(Error::InvalidTensor {
                reason: alloc::format!(
                    "maxpool activation size/stride must be positive, got {size}/{stride}"
                ),
            });
        }
    }
    Ok(())
}

/// `x A + b` followed by the configured activation.
pub fn forward_linear(layer: &LinearLayer, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != layer.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "linear input",
            expected: layer.input_dim(),
            got: x.len(),
        });
    }
    let mut out = layer.weights().row_vec_mul(x)?;
    for (o, b) in out.iter_mut().zip(layer.bias()) {
        *o += b;
    }
    apply_activation_vec(layer.activation(), out)
}

/// Convolution of a `[C][H][W]` input; each output element is the bias plus
/// the sum over channels and kernel offsets of input times kernel weight.
/// Padding cells contribute zero.
pub fn forward_conv(layer: &ConvLayer, x: &Tensor) -> Result<Tensor> {
    let dims = layer.output_dims(x.shape())?;
    let [maps, out_h, out_w] = dims;
    let channels = layer.channels();
    let (kh, kw) = (layer.kernel_height(), layer.kernel_width());
    let [pt, _, pl, _] = layer.input_padding();
    let [sh, sw] = layer.stride();
    let (in_h, in_w) = (x.shape()[1], x.shape()[2]);

    let mut out = vec![0.0; maps * out_h * out_w];
    for p in 0..maps {
        let base = p * out_h * out_w;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = layer.bias()[p];
                for c in 0..channels {
                    for ky in 0..kh {
                        // Signed coordinate into the unpadded input.
                        let iy = (oy * sh + ky) as isize - pt as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * sw + kx) as isize - pl as isize;
                            if ix < 0 || ix >= in_w as isize {
                                continue;
                            }
                            acc += x.at3(c, iy as usize, ix as usize)
                                * layer.kernel().at4(p, c, ky, kx);
                        }
                    }
                }
                out[base + oy * out_w + ox] = acc;
            }
        }
    }
    let tensor = Tensor::new(vec![maps, out_h, out_w], out)?;
    apply_activation_tensor(layer.activation(), tensor)
}

/// Max pooling: spatial per channel for rank-3 input, windowed for rank-1.
pub fn forward_pool(layer: &PoolLayer, x: &Tensor) -> Result<Tensor> {
    max_pool(x, layer.size(), layer.stride())
}

fn max_pool(x: &Tensor, size: usize, stride: usize) -> Result<Tensor> {
    match x.rank() {
        1 => {
            let len = x.len();
            if size > len {
                return Err(Error::EmptyOutput);
            }
            let out_len = (len - size) / stride + 1;
            let mut out = Vec::with_capacity(out_len);
            for o in 0..out_len {
                let start = o * stride;
                let m = x.data()[start..start + size]
                    .iter()
                    .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                out.push(m);
            }
            Tensor::from_vec(out)
        }
        3 => {
            let (c_dim, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            if size > h || size > w {
                return Err(Error::EmptyOutput);
            }
            let out_h = (h - size) / stride + 1;
            let out_w = (w - size) / stride + 1;
            let mut out = vec![0.0; c_dim * out_h * out_w];
            for c in 0..c_dim {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut m = f64::NEG_INFINITY;
                        for dy in 0..size {
                            for dx in 0..size {
                                m = m.max(x.at3(c, oy * stride + dy, ox * stride + dx));
                            }
                        }
                        out[(c * out_h + oy) * out_w + ox] = m;
                    }
                }
            }
            Tensor::new(vec![c_dim, out_h, out_w], out)
        }
        r => Err(Error::DimensionMismatch {
            context: "pool input rank",
            expected: 3,
            got: r,
        }),
    }
}

pub(crate) fn apply_activation_vec(kind: ActivationKind, mut v: Vec<f64>) -> Result<Vec<f64>> {
    match kind {
        ActivationKind::Identity => Ok(v),
        ActivationKind::Relu => {
            for x in v.iter_mut() {
                if *x < 0.0 {
                    *x = 0.0;
                }
            }
            Ok(v)
        }
        ActivationKind::Softmax => Ok(softmax(&v)),
        ActivationKind::MaxPool { size, stride } => {
            let t = max_pool(&Tensor::from_vec(v)?, size, stride)?;
            Ok(t.into_data())
        }
    }
}

fn apply_activation_tensor(kind: ActivationKind, t: Tensor) -> Result<Tensor> {
    match kind {
        ActivationKind::Identity => Ok(t),
        ActivationKind::Relu => {
            let shape = t.shape().to_vec();
            let data = t
                .into_data()
                .into_iter()
                .map(|x| if x < 0.0 { 0.0 } else { x })
                .collect();
            Tensor::new(shape, data)
        }
        ActivationKind::Softmax => {
            let shape = t.shape().to_vec();
            let data = softmax(t.data());
            Tensor::new(shape, data)
        }
        ActivationKind::MaxPool { size, stride } => max_pool(&t, size, stride),
    }
}

/// Softmax with max subtraction for stability.
pub(crate) fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = v.iter().map(|&x| math::exp(x - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
