//! Convolutional-layer obfuscation.
//!
//! Base mode pads every kernel with a frame of zeros and adds the same frame
//! to the layer's input padding; every new kernel tap lands on a padded
//! input cell or multiplies a zero weight, so outputs are unchanged at any
//! stride. Advanced mode fills the frame with per-map noise instead and
//! rescales the whole layer by a random factor, compensated in the next
//! weight-bearing layer.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::layer::{ActivationKind, ConvLayer, LayerNode, LinearLayer};
use crate::linalg::InvertiblePair;
use crate::math;
use crate::obfuscate::{SuccessorAdjustment, TransformRecord};
use crate::rng;
use crate::tensor::Tensor;

/// Pad widths per kernel side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrameSpec {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl FrameSpec {
    pub fn uniform(width: usize) -> Self {
        FrameSpec {
            top: width,
            bottom: width,
            left: width,
            right: width,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.top == 0 && self.bottom == 0 && self.left == 0 && self.right == 0
    }
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec::uniform(1)
    }
}

/// Which magnitude statistic scales the frame noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NoiseMode {
    Median,
    Min,
}

/// Frame-noise parameters: `eps_p = beta * stat(|K_p|) * N(mu, sigma^2)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseConfig {
    pub beta: f64,
    pub mu: f64,
    pub sigma: f64,
    pub mode: NoiseMode,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            beta: 10.0,
            mu: 0.33,
            sigma: 0.1,
            mode: NoiseMode::Min,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Range the rescaling factor is drawn from, with a dead band around 1 so
/// the scaling is never trivial.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LambdaRange {
    pub lo: f64,
    pub hi: f64,
    pub exclude_lo: f64,
    pub exclude_hi: f64,
}

impl Default for LambdaRange {
    fn default() -> Self {
        LambdaRange {
            lo: 0.5,
            hi: 2.0,
            exclude_lo: 0.95,
            exclude_hi: 1.05,
        }
    }
}

impl LambdaRange {
    /// A degenerate range that always yields `value` (tests, calibration).
    pub fn fixed(value: f64) -> Self {
        LambdaRange {
            lo: value,
            hi: value,
            exclude_lo: value,
            exclude_hi: value,
        }
    }

    fn sample(&self, rng: &mut rng::Rng) -> f64 {
        if self.hi <= self.lo {
            return self.lo;
        }
        let seg1 = (self.exclude_lo.min(self.hi) - self.lo).max(0.0);
        let seg2 = (self.hi - self.exclude_hi.max(self.lo)).max(0.0);
        if seg1 + seg2 <= 0.0 {
            return rng.gen_range(self.lo..=self.hi);
        }
        let u: f64 = rng.gen_range(0.0..(seg1 + seg2));
        if u < seg1 {
            self.lo + u
        } else {
            self.exclude_hi.max(self.lo) + (u - seg1)
        }
    }
}

fn target_conv(model: &ModelGraph, index: usize) -> Result<&ConvLayer> {
    match model.layer(index) {
        Some(LayerNode::Conv(c)) => Ok(c),
        _ => Err(Error::NotConv { layer: index }),
    }
}

/// Pad every kernel of layer `index` with a zero frame and grow the input
/// padding to match. Outputs are preserved exactly.
pub fn base_obfuscate_conv(
    model: &ModelGraph,
    index: usize,
    frame: &FrameSpec,
) -> Result<(ModelGraph, TransformRecord)> {
    let layer = target_conv(model, index)?;
    let record = TransformRecord::BaseConv {
        layer: index,
        frame: *frame,
    };
    if frame.is_zero() {
        return Ok((model.clone(), record));
    }
    let padded = pad_layer(layer, frame, &vec![0.0; layer.maps()], 1.0)?;
    let rewritten = model.splice(index, 1, vec![LayerNode::Conv(padded)])?;
    Ok((rewritten, record))
}

/// One frame-noise scalar for feature map `map_index`:
/// `beta * stat(|kernel_map|) * g` with `g ~ N(mu, sigma^2)` drawn from a
/// counter-based stream, so per-map values do not depend on evaluation
/// order.
pub fn compute_frame_noise(kernel_map: &[f64], cfg: &NoiseConfig, map_index: u64) -> f64 {
    if cfg.beta == 0.0 {
        return 0.0;
    }
    let stat = match cfg.mode {
        NoiseMode::Median => math::median_abs(kernel_map),
        NoiseMode::Min => math::min_abs(kernel_map),
    };
    let normal = Normal::new(cfg.mu, cfg.sigma).expect("sigma is non-negative");
    let g: f64 = normal.sample(&mut rng::new_rng(rng::derive_seed(cfg.seed, map_index)));
    cfg.beta * stat * g
}

const LAMBDA_STREAM: u64 = u64::MAX;
const PAIR_STREAM: u64 = u64::MAX - 1;

/// Pad layer `index` with per-map noise frames, multiply the padded kernel
/// and bias by a random `lambda`, and divide the next weight-bearing layer
/// by the same factor. Pooling between the two commutes with positive
/// scaling, as does ReLU.
pub fn advanced_obfuscate_conv(
    model: &ModelGraph,
    index: usize,
    frame: &FrameSpec,
    cfg: &NoiseConfig,
    lambda_range: &LambdaRange,
) -> Result<(ModelGraph, TransformRecord)> {
    let layer = target_conv(model, index)?;
    let successor_index = (index + 1..model.len())
        .find(|&j| model.layers()[j].is_eligible())
        .ok_or(Error::NoSuccessor { layer: index })?;

    let maps = layer.maps();
    let (c, kh, kw) = (layer.channels(), layer.kernel_height(), layer.kernel_width());
    let map_len = c * kh * kw;
    let mut eps_per_map = Vec::with_capacity(maps);
    for p in 0..maps {
        let map = &layer.kernel().data()[p * map_len..(p + 1) * map_len];
        eps_per_map.push(compute_frame_noise(map, cfg, p as u64));
    }
    let lambda = lambda_range.sample(&mut rng::new_rng(rng::derive_seed(cfg.seed, LAMBDA_STREAM)));

    let padded = pad_layer(layer, frame, &eps_per_map, lambda)?;
    let mut rewritten = model.splice(index, 1, vec![LayerNode::Conv(padded)])?;

    let adjustment = match &rewritten.layers()[successor_index] {
        LayerNode::Conv(next) => {
            let scaled_kernel = Tensor::new(
                next.kernel().shape().to_vec(),
                next.kernel().data().iter().map(|w| w / lambda).collect(),
            )?;
            let scaled = ConvLayer::new(
                scaled_kernel,
                next.bias().to_vec(),
                next.input_padding(),
                next.stride(),
                next.activation(),
            )?;
            rewritten = rewritten.splice(successor_index, 1, vec![LayerNode::Conv(scaled)])?;
            SuccessorAdjustment::ConvDivided {
                layer: successor_index,
            }
        }
        LayerNode::Linear(next) => {
            let n = next.output_dim();
            let h = 2 * n;
            let pair =
                InvertiblePair::generate(n, h, rng::derive_seed(cfg.seed, PAIR_STREAM))?;
            let first = LinearLayer::new(
                next.weights().matmul(pair.h())?,
                vec![0.0; h],
                ActivationKind::Identity,
            )?;
            let second = LinearLayer::new(
                pair.h_inv().scale(1.0 / lambda),
                next.bias().to_vec(),
                next.activation(),
            )?;
            rewritten = rewritten.splice(
                successor_index,
                1,
                vec![LayerNode::Linear(first), LayerNode::Linear(second)],
            )?;
            SuccessorAdjustment::LinearSplit {
                layer: successor_index,
                h,
            }
        }
        LayerNode::Pool(_) => unreachable!("successor search skips pooling layers"),
    };

    Ok((
        rewritten,
        TransformRecord::AdvancedConv {
            layer: index,
            frame: *frame,
            lambda,
            eps_per_map,
            mode: cfg.mode,
            seed: cfg.seed,
            successor: adjustment,
        },
    ))
}

/// Build the frame-padded copy of a conv layer: kernels grow by the frame
/// (original weights centered, frame cells set to the map's fill value),
/// input padding grows by the same frame, and everything including the bias
/// is multiplied by `scale`.
fn pad_layer(
    layer: &ConvLayer,
    frame: &FrameSpec,
    frame_fill: &[f64],
    scale: f64,
) -> Result<ConvLayer> {
    let (maps, channels) = (layer.maps(), layer.channels());
    let (kh, kw) = (layer.kernel_height(), layer.kernel_width());
    let new_kh = kh + frame.top + frame.bottom;
    let new_kw = kw + frame.left + frame.right;
    let mut data = vec![0.0; maps * channels * new_kh * new_kw];
    for p in 0..maps {
        for c in 0..channels {
            for y in 0..new_kh {
                for x in 0..new_kw {
                    let inside = y >= frame.top
                        && y < frame.top + kh
                        && x >= frame.left
                        && x < frame.left + kw;
                    let value = if inside {
                        layer.kernel().at4(p, c, y - frame.top, x - frame.left)
                    } else {
                        frame_fill[p]
                    };
                    data[((p * channels + c) * new_kh + y) * new_kw + x] = scale * value;
                }
            }
        }
    }
    let kernel = Tensor::new(vec![maps, channels, new_kh, new_kw], data)?;
    let bias = layer.bias().iter().map(|b| scale * b).collect();
    let [pt, pb, pl, pr] = layer.input_padding();
    ConvLayer::new(
        kernel,
        bias,
        [
            pt + frame.top,
            pb + frame.bottom,
            pl + frame.left,
            pr + frame.right,
        ],
        layer.stride(),
        layer.activation(),
    )
}
