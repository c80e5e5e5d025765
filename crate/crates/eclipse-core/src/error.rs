//! Error type shared by every module in the crate.

use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors emitted by inference, transforms, detection, and the watermark
/// simulator.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or tensor does not have the size an operation requires.
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    /// A tensor constructor received a shape inconsistent with its data.
    InvalidTensor { reason: String },
    /// Kernel larger than the padded input; the convolution has no output.
    EmptyOutput,
    /// An operation received an empty input where at least one element is
    /// required.
    EmptyInput,
    /// Moving-average window outside `1..=len`.
    WindowTooLarge { window: usize, len: usize },
    /// A series is too short for the requested statistic.
    SeriesTooShort { len: usize },
    /// Identity-pair construction requires `h > n >= 1`.
    InvalidShape { n: usize, h: usize },
    /// No full-row-rank draw with an acceptable inverse residual within the
    /// retry budget; the RNG configuration is degenerate.
    RankDeficient { attempts: usize },
    /// A singular matrix was passed to the dense inverse.
    Singular,
    /// The targeted layer is not a linear layer.
    NotLinear { layer: usize },
    /// The targeted layer is not a convolutional layer.
    NotConv { layer: usize },
    /// The transform needs a successor layer and none exists.
    NoSuccessor { layer: usize },
    /// The targeted layer is not eligible for the requested operation.
    NotEligible { layer: usize },
    /// Two bit strings of different lengths were compared.
    LengthMismatch { left: usize, right: usize },
    /// Embedding did not reach the required similarity within the step
    /// budget.
    FailedToConverge { similarity: f64 },
    /// An inner error tagged with the index of the layer it occurred at.
    AtLayer { layer: usize, source: Box<Error> },
}

impl Error {
    /// Wrap the error with the index of the layer being processed.
    pub fn at_layer(self, layer: usize) -> Error {
        Error::AtLayer {
            layer,
            source: Box::new(self),
        }
    }
}

impl core::error::Error for Error {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        match self {
            Error::AtLayer { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                context,
                expected,
                got,
            } => write!(f, "dimension mismatch in {context}: expected {expected}, got {got}"),
            Error::InvalidTensor { reason } => write!(f, "invalid tensor: {reason}"),
            Error::EmptyOutput => write!(f, "kernel exceeds padded input; output would be empty"),
            Error::EmptyInput => write!(f, "input must not be empty"),
            Error::WindowTooLarge { window, len } => {
                write!(f, "window {window} outside 1..={len}")
            }
            Error::SeriesTooShort { len } => write!(f, "series of length {len} is too short"),
            Error::InvalidShape { n, h } => {
                write!(f, "identity pair requires h > n >= 1, got n={n}, h={h}")
            }
            Error::RankDeficient { attempts } => {
                write!(f, "no full-rank draw after {attempts} attempts")
            }
            Error::Singular => write!(f, "matrix is singular"),
            Error::NotLinear { layer } => write!(f, "layer {layer} is not linear"),
            Error::NotConv { layer } => write!(f, "layer {layer} is not convolutional"),
            Error::NoSuccessor { layer } => write!(f, "layer {layer} has no successor layer"),
            Error::NotEligible { layer } => write!(f, "layer {layer} is not eligible"),
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::FailedToConverge { similarity } => {
                write!(f, "embedding failed to converge: similarity {similarity}")
            }
            Error::AtLayer { layer, source } => write!(f, "at layer {layer}: {source}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_layer_wraps_and_displays() {
        let err = Error::EmptyOutput.at_layer(3);
        assert_eq!(
            format!("{err}"),
            "at layer 3: kernel exceeds padded input; output would be empty"
        );
    }
}
