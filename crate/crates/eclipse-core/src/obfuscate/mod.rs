//! Structure-rewriting transforms that hide a layer's original shape and
//! values while preserving (base) or approximately preserving (advanced)
//! the model's behavior.

pub mod conv;
pub mod linear;

use alloc::string::String;
use alloc::vec::Vec;

pub use conv::{FrameSpec, LambdaRange, NoiseConfig, NoiseMode};

/// One entry of the transform log. Layer indices refer to the model as it
/// was when the transform ran.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "op", rename_all = "snake_case"))]
pub enum TransformRecord {
    BaseLinear {
        layer: usize,
        h: usize,
        seed: u64,
        /// None when not requested, otherwise whether a non-negative
        /// `A * H` draw was found.
        relu_camouflage: Option<bool>,
    },
    AdvancedLinear {
        layer: usize,
        h: usize,
        seed: u64,
        /// Activation that sat between the split layer and its successor
        /// and is skipped by the merge.
        dropped_activation: Option<String>,
        /// True when no linear successor existed and one was synthesized.
        synthesized_successor: bool,
    },
    BaseConv {
        layer: usize,
        frame: FrameSpec,
    },
    AdvancedConv {
        layer: usize,
        frame: FrameSpec,
        lambda: f64,
        eps_per_map: Vec<f64>,
        mode: NoiseMode,
        seed: u64,
        successor: SuccessorAdjustment,
    },
}

/// How the layer following an advanced conv transform absorbed the `1/lambda`
/// compensation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum SuccessorAdjustment {
    /// The successor conv kernel was divided by lambda (bias untouched).
    ConvDivided { layer: usize },
    /// The successor linear layer was split through a pair scaled so that
    /// `H * h_inv = (1/lambda) * I`.
    LinearSplit { layer: usize, h: usize },
}
