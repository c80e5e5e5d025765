//! Active verification: undo attempts an inspector runs before extracting.
//!
//! Three strategies: re-flatten the suspect layer's weights to the key's
//! dimension, multiply adjacent linear layers back together to reconstruct a
//! candidate weight matrix, and crop an all-zero kernel frame. Each strategy
//! yields its own outcome; the best one is the verifier's answer.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::ModelGraph;
use crate::layer::{ConvLayer, LayerNode};
use crate::math;
use crate::obfuscate::FrameSpec;
use crate::tensor::Tensor;
use crate::watermark::{
    mean_activation, outcome_from_confidence, project_bits, sign_bits, similarity, ExtractOutcome,
    SchemeKind, SecretKey, SignatureMessage, VerificationOutcome,
};

/// Undo attempts available to an active verifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Strategy {
    /// Re-flatten the layer's weights row-major and truncate or zero-pad to
    /// the key's dimension.
    ReshapeTruncate,
    /// Multiply the layer with its successor to reconstruct a candidate for
    /// the original weights.
    MergeAdjacent,
    /// Detect an all-zero kernel frame, crop it, and shrink the input
    /// padding to match.
    CropZeroFrame,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::ReshapeTruncate,
        Strategy::MergeAdjacent,
        Strategy::CropZeroFrame,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::ReshapeTruncate => "reshape_truncate",
            Strategy::MergeAdjacent => "merge_adjacent",
            Strategy::CropZeroFrame => "crop_zero_frame",
        }
    }
}

/// Outcome of one strategy attempt.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StrategyTrace {
    pub strategy: Strategy,
    pub outcome: VerificationOutcome,
    pub note: String,
}

/// Best outcome across the attempted strategies plus the full trace.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ActiveVerification {
    pub best: VerificationOutcome,
    pub traces: Vec<StrategyTrace>,
}

/// Run each strategy, extract after it, and keep the highest-confidence
/// outcome.
pub fn active_verify(
    model: &ModelGraph,
    key: &SecretKey,
    m_o: &SignatureMessage,
    delta: f64,
    strategies: &[Strategy],
) -> ActiveVerification {
    let mut traces = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let (extraction, note) = match strategy {
            Strategy::ReshapeTruncate => reshape_truncate(model, key),
            Strategy::MergeAdjacent => merge_adjacent(model, key),
            Strategy::CropZeroFrame => crop_zero_frame(model, key),
        };
        let outcome = match extraction {
            ExtractOutcome::NoSignature { reason } => VerificationOutcome::NoSignature { reason },
            ExtractOutcome::Message(m_e) => match similarity(m_o, &m_e) {
                Ok(confidence) => outcome_from_confidence(confidence, delta),
                Err(e) => VerificationOutcome::NoSignature {
                    reason: format!("{e}"),
                },
            },
        };
        traces.push(StrategyTrace {
            strategy,
            outcome,
            note,
        });
    }

    let best = traces
        .iter()
        .filter_map(|t| t.outcome.confidence().map(|c| (c, t)))
        .max_by(|a, b| a.0.partial_cmp(&b.0).expect("confidences are finite"))
        .map(|(_, t)| t.outcome.clone())
        .unwrap_or(VerificationOutcome::NoSignature {
            reason: String::from("no strategy recovered a signature"),
        });
    ActiveVerification { best, traces }
}

/// Truncate or zero-pad a candidate vector to the dimension the key expects.
fn resize(mut v: Vec<f64>, dim: usize) -> Vec<f64> {
    v.resize(dim, 0.0);
    v
}

fn extract_weight_candidate(key: &SecretKey, candidate: Vec<f64>) -> ExtractOutcome {
    match key.scheme {
        SchemeKind::WeightProjection => {
            let projection = key.projection.as_ref().expect("projection key");
            let w = resize(candidate, projection.cols());
            ExtractOutcome::Message(project_bits(projection, &w))
        }
        SchemeKind::WeightSelection => {
            let positions = key.positions.as_ref().expect("selection key");
            let w = resize(candidate, key.expected_dim);
            ExtractOutcome::Message(sign_bits(&w, positions))
        }
        SchemeKind::ActivationProjection => ExtractOutcome::NoSignature {
            reason: String::from("weight candidates do not apply to activation keys"),
        },
    }
}

fn extract_activation_candidate(key: &SecretKey, model: &ModelGraph, upto: usize) -> ExtractOutcome {
    let projection = key.projection.as_ref().expect("projection key");
    match mean_activation(model, key, upto) {
        Ok(mean) => {
            let a = resize(mean, projection.cols());
            ExtractOutcome::Message(project_bits(projection, &a))
        }
        Err(e) => ExtractOutcome::NoSignature {
            reason: format!("activation probe failed: {e}"),
        },
    }
}

fn reshape_truncate(model: &ModelGraph, key: &SecretKey) -> (ExtractOutcome, String) {
    let index = key.layer_index;
    let Some(node) = model.layer(index) else {
        return (
            ExtractOutcome::NoSignature {
                reason: format!("layer {index} out of range"),
            },
            String::from("layer missing"),
        );
    };
    match key.scheme {
        SchemeKind::ActivationProjection => (
            extract_activation_candidate(key, model, index),
            format!("activations after layer {index} resized to the key dimension"),
        ),
        _ => match node.flat_weights() {
            Some(w) => (
                extract_weight_candidate(key, w.to_vec()),
                format!(
                    "weights re-flattened from {} to {} entries",
                    w.len(),
                    key.expected_dim
                ),
            ),
            None => (
                ExtractOutcome::NoSignature {
                    reason: format!("layer {index} carries no weights"),
                },
                String::from("layer carries no weights"),
            ),
        },
    }
}

fn merge_adjacent(model: &ModelGraph, key: &SecretKey) -> (ExtractOutcome, String) {
    let index = key.layer_index;
    let (Some(LayerNode::Linear(first)), Some(LayerNode::Linear(second))) =
        (model.layer(index), model.layer(index + 1))
    else {
        return (
            ExtractOutcome::NoSignature {
                reason: format!("layers {index} and {} are not an adjacent linear pair", index + 1),
            },
            String::from("no adjacent linear pair to merge"),
        );
    };
    match key.scheme {
        SchemeKind::ActivationProjection => (
            extract_activation_candidate(key, model, index + 1),
            format!("activations after merged layers {index},{} resized", index + 1),
        ),
        _ => match first.weights().matmul(second.weights()) {
            Ok(product) => (
                extract_weight_candidate(key, product.data().to_vec()),
                format!("layers {index},{} multiplied into a candidate", index + 1),
            ),
            Err(e) => (
                ExtractOutcome::NoSignature {
                    reason: format!("merge failed: {e}"),
                },
                String::from("adjacent layers are dimensionally incompatible"),
            ),
        },
    }
}

/// Relative magnitude below which a kernel entry counts as zero for frame
/// detection.
const CROP_REL_TOL: f64 = 1e-9;

fn crop_zero_frame(model: &ModelGraph, key: &SecretKey) -> (ExtractOutcome, String) {
    let index = key.layer_index;
    let Some(LayerNode::Conv(conv)) = model.layer(index) else {
        return (
            ExtractOutcome::NoSignature {
                reason: format!("layer {index} is not convolutional"),
            },
            String::from("layer is not convolutional"),
        );
    };
    let frame = detect_zero_frame(conv);
    if frame.is_zero() {
        return (
            ExtractOutcome::NoSignature {
                reason: String::from("kernel has no zero frame to crop"),
            },
            String::from("no zero frame detected"),
        );
    }
    let cropped = match crop_conv(conv, &frame) {
        Ok(c) => c,
        Err(e) => {
            return (
                ExtractOutcome::NoSignature {
                    reason: format!("crop failed: {e}"),
                },
                String::from("crop failed"),
            )
        }
    };
    let note = format!(
        "cropped zero frame top={} bottom={} left={} right={}",
        frame.top, frame.bottom, frame.left, frame.right
    );
    match key.scheme {
        SchemeKind::ActivationProjection => {
            match model.splice(index, 1, vec![LayerNode::Conv(cropped)]) {
                Ok(rewritten) => (extract_activation_candidate(key, &rewritten, index), note),
                Err(e) => (
                    ExtractOutcome::NoSignature {
                        reason: format!("cropped model invalid: {e}"),
                    },
                    note,
                ),
            }
        }
        _ => (
            extract_weight_candidate(key, cropped.kernel().data().to_vec()),
            note,
        ),
    }
}

/// Widest frame of near-zero rows/columns shared by every kernel map.
fn detect_zero_frame(conv: &ConvLayer) -> FrameSpec {
    let (kh, kw) = (conv.kernel_height(), conv.kernel_width());
    let max_mag = conv
        .kernel()
        .data()
        .iter()
        .map(|v| math::abs(*v))
        .fold(0.0, f64::max);
    if max_mag == 0.0 {
        return FrameSpec::uniform(0);
    }
    let tol = CROP_REL_TOL * max_mag;
    let row_zero = |y: usize| -> bool {
        (0..conv.maps()).all(|p| {
            (0..conv.channels())
                .all(|c| (0..kw).all(|x| math::abs(conv.kernel().at4(p, c, y, x)) <= tol))
        })
    };
    let col_zero = |x: usize| -> bool {
        (0..conv.maps()).all(|p| {
            (0..conv.channels())
                .all(|c| (0..kh).all(|y| math::abs(conv.kernel().at4(p, c, y, x)) <= tol))
        })
    };
    let mut top = 0;
    while top < kh - 1 && row_zero(top) {
        top += 1;
    }
    let mut bottom = 0;
    while bottom < kh - 1 - top && row_zero(kh - 1 - bottom) {
        bottom += 1;
    }
    let mut left = 0;
    while left < kw - 1 && col_zero(left) {
        left += 1;
    }
    let mut right = 0;
    while right < kw - 1 - left && col_zero(kw - 1 - right) {
        right += 1;
    }
    FrameSpec {
        top,
        bottom,
        left,
        right,
    }
}

fn crop_conv(conv: &ConvLayer, frame: &FrameSpec) -> crate::error::Result<ConvLayer> {
    let (maps, channels) = (conv.maps(), conv.channels());
    let (kh, kw) = (conv.kernel_height(), conv.kernel_width());
    let new_kh = kh - frame.top - frame.bottom;
    let new_kw = kw - frame.left - frame.right;
    let mut data = Vec::with_capacity(maps * channels * new_kh * new_kw);
    for p in 0..maps {
        for c in 0..channels {
            for y in 0..new_kh {
                for x in 0..new_kw {
                    data.push(conv.kernel().at4(p, c, y + frame.top, x + frame.left));
                }
            }
        }
    }
    let kernel = Tensor::new(vec![maps, channels, new_kh, new_kw], data)?;
    let [pt, pb, pl, pr] = conv.input_padding();
    ConvLayer::new(
        kernel,
        conv.bias().to_vec(),
        [
            pt.saturating_sub(frame.top),
            pb.saturating_sub(frame.bottom),
            pl.saturating_sub(frame.left),
            pr.saturating_sub(frame.right),
        ],
        conv.stride(),
        conv.activation(),
    )
}
