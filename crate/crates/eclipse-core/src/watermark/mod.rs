//! Simulated white-box watermark schemes and their verifiers.
//!
//! Three scheme families cover the common extraction styles: projecting the
//! flattened layer weights through a secret matrix, reading the sign of
//! weights at secret positions, and projecting the layer's mean activation
//! over a secret probe set. Embedding is data-free gradient descent on a
//! per-scheme bit loss over the target layer's weights, with a proximal
//! `penalty * ||dW||^2` term bounding the change.

mod active;

pub use active::{active_verify, ActiveVerification, Strategy, StrategyTrace};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::eval::gen_probes;
use crate::graph::ModelGraph;
use crate::layer::{ActivationKind, ConvLayer, LayerNode, LinearLayer};
use crate::linalg::Mat;
use crate::math;
use crate::rng;
use crate::tensor::Tensor;

/// Owner or extracted signature: a bit string of length N.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SignatureMessage {
    bits: Vec<u8>,
}

impl SignatureMessage {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::EmptyInput);
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidTensor {
                reason: "signature bits must be 0 or 1".to_string(),
            });
        }
        Ok(SignatureMessage { bits })
    }

    pub fn random(n: usize, seed: u64) -> Result<Self> {
        let mut r = rng::new_rng(seed);
        SignatureMessage::new((0..n).map(|_| u8::from(r.gen::<bool>())).collect())
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Fraction of matching bits between two equal-length messages.
pub fn similarity(m_o: &SignatureMessage, m_e: &SignatureMessage) -> Result<f64> {
    if m_o.len() != m_e.len() {
        return Err(Error::LengthMismatch {
            left: m_o.len(),
            right: m_e.len(),
        });
    }
    let matches = m_o
        .bits()
        .iter()
        .zip(m_e.bits())
        .filter(|(a, b)| a == b)
        .count();
    Ok(matches as f64 / m_o.len() as f64)
}

/// Scheme family a key belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SchemeKind {
    WeightProjection,
    WeightSelection,
    ActivationProjection,
}

impl SchemeKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::WeightProjection => "weight_projection",
            SchemeKind::WeightSelection => "weight_selection",
            SchemeKind::ActivationProjection => "activation_projection",
        }
    }
}

/// Extraction material for one scheme on one layer.
///
/// `expected_dim` records the flattened weight dimension (or activation
/// dimension for the activation scheme) of the target layer at key-creation
/// time; active verifiers reshape candidates to it.
#[derive(Debug, Clone, PartialEq)]
pub struct SecretKey {
    pub scheme: SchemeKind,
    pub layer_index: usize,
    pub expected_dim: usize,
    /// `N x expected_dim` secret matrix for the projection schemes.
    pub projection: Option<Mat>,
    /// Secret weight positions for the selection scheme.
    pub positions: Option<Vec<usize>>,
    /// Secret probe inputs for the activation scheme.
    pub probes: Option<Vec<Tensor>>,
    /// Verification threshold; `Verified` requires `sim > 0.5 + delta`.
    pub delta: f64,
}

pub const DEFAULT_DELTA: f64 = 0.05;

impl SecretKey {
    pub fn n_bits(&self) -> usize {
        match self.scheme {
            SchemeKind::WeightSelection => self.positions.as_ref().map_or(0, Vec::len),
            _ => self.projection.as_ref().map_or(0, Mat::rows),
        }
    }
}

/// Draw fresh extraction material for `scheme` against layer `layer_index`.
/// Projection entries are standard normal; selection positions are a
/// uniform sample without replacement.
pub fn generate_key(
    model: &ModelGraph,
    scheme: SchemeKind,
    layer_index: usize,
    n_bits: usize,
    probe_count: usize,
    seed: u64,
) -> Result<SecretKey> {
    if n_bits == 0 {
        return Err(Error::EmptyInput);
    }
    let node = model
        .layer(layer_index)
        .ok_or(Error::NotEligible { layer: layer_index })?;
    let weights = node
        .flat_weights()
        .ok_or(Error::NotEligible { layer: layer_index })?;
    let mut r = rng::new_rng(seed);
    match scheme {
        SchemeKind::WeightProjection => {
            let dim = weights.len();
            Ok(SecretKey {
                scheme,
                layer_index,
                expected_dim: dim,
                projection: Some(normal_matrix(n_bits, dim, &mut r)),
                positions: None,
                probes: None,
                delta: DEFAULT_DELTA,
            })
        }
        SchemeKind::WeightSelection => {
            let dim = weights.len();
            if n_bits > dim {
                return Err(Error::DimensionMismatch {
                    context: "selection positions",
                    expected: dim,
                    got: n_bits,
                });
            }
            let mut pool: Vec<usize> = (0..dim).collect();
            for i in 0..n_bits {
                let j = r.gen_range(i..dim);
                pool.swap(i, j);
            }
            let mut positions = pool[..n_bits].to_vec();
            positions.sort_unstable();
            Ok(SecretKey {
                scheme,
                layer_index,
                expected_dim: dim,
                projection: None,
                positions: Some(positions),
                probes: None,
                delta: DEFAULT_DELTA,
            })
        }
        SchemeKind::ActivationProjection => {
            if probe_count == 0 {
                return Err(Error::EmptyInput);
            }
            let act_dim = model.layer_output_len(layer_index)?;
            let probes = gen_probes(
                model.input_shape(),
                probe_count,
                rng::derive_seed(seed, 1),
            );
            Ok(SecretKey {
                scheme,
                layer_index,
                expected_dim: act_dim,
                projection: Some(normal_matrix(n_bits, act_dim, &mut r)),
                positions: None,
                probes: Some(probes),
                delta: DEFAULT_DELTA,
            })
        }
    }
}

fn normal_matrix(rows: usize, cols: usize, r: &mut rng::Rng) -> Mat {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(r))
        .collect();
    Mat::new(rows, cols, data).expect("normal matrix dimensions are positive")
}

/// Extraction result. Failure is a value, not an error: a verifier that
/// cannot extract reports no signature and halts.
#[derive(Debug, Clone, PartialEq)]
pub enum ExtractOutcome {
    Message(SignatureMessage),
    NoSignature { reason: String },
}

impl ExtractOutcome {
    pub fn message(&self) -> Option<&SignatureMessage> {
        match self {
            ExtractOutcome::Message(m) => Some(m),
            ExtractOutcome::NoSignature { .. } => None,
        }
    }
}

/// Follow the scheme's extraction protocol exactly (the passive verifier's
/// view of the model).
pub fn extract(model: &ModelGraph, key: &SecretKey) -> ExtractOutcome {
    let Some(node) = model.layer(key.layer_index) else {
        return ExtractOutcome::NoSignature {
            reason: format!("layer {} out of range", key.layer_index),
        };
    };
    match key.scheme {
        SchemeKind::WeightProjection => {
            let Some(weights) = node.flat_weights() else {
                return ExtractOutcome::NoSignature {
                    reason: format!("layer {} carries no weights", key.layer_index),
                };
            };
            let projection = key.projection.as_ref().expect("projection key");
            if weights.len() != projection.cols() {
                return ExtractOutcome::NoSignature {
                    reason: format!(
                        "flattened dim {} != key dim {}",
                        weights.len(),
                        projection.cols()
                    ),
                };
            }
            ExtractOutcome::Message(project_bits(projection, weights))
        }
        SchemeKind::WeightSelection => {
            let Some(weights) = node.flat_weights() else {
                return ExtractOutcome::NoSignature {
                    reason: format!("layer {} carries no weights", key.layer_index),
                };
            };
            let positions = key.positions.as_ref().expect("selection key");
            for &p in positions {
                if p >= weights.len() {
                    return ExtractOutcome::NoSignature {
                        reason: format!("position {p} out of bounds for {} weights", weights.len()),
                    };
                }
            }
            ExtractOutcome::Message(sign_bits(weights, positions))
        }
        SchemeKind::ActivationProjection => {
            let projection = key.projection.as_ref().expect("projection key");
            match mean_activation(model, key, key.layer_index) {
                Ok(mean) => {
                    if mean.len() != projection.cols() {
                        return ExtractOutcome::NoSignature {
                            reason: format!(
                                "activation dim {} != key dim {}",
                                mean.len(),
                                projection.cols()
                            ),
                        };
                    }
                    ExtractOutcome::Message(project_bits(projection, &mean))
                }
                Err(e) => ExtractOutcome::NoSignature {
                    reason: format!("activation probe failed: {e}"),
                },
            }
        }
    }
}

pub(crate) fn project_bits(projection: &Mat, v: &[f64]) -> SignatureMessage {
    let bits = (0..projection.rows())
        .map(|r| {
            let z: f64 = projection.row(r).iter().zip(v).map(|(s, x)| s * x).sum();
            u8::from(math::sigmoid(z) > 0.5)
        })
        .collect();
    SignatureMessage::new(bits).expect("projection rows are non-empty")
}

pub(crate) fn sign_bits(weights: &[f64], positions: &[usize]) -> SignatureMessage {
    let bits = positions.iter().map(|&p| u8::from(weights[p] > 0.0)).collect();
    SignatureMessage::new(bits).expect("positions are non-empty")
}

/// Mean flattened activation after layer `upto` over the key's probe set.
pub(crate) fn mean_activation(
    model: &ModelGraph,
    key: &SecretKey,
    upto: usize,
) -> Result<Vec<f64>> {
    let probes = key.probes.as_ref().ok_or(Error::EmptyInput)?;
    if probes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut mean: Vec<f64> = Vec::new();
    for probe in probes {
        let out = model.forward_through(probe, upto)?;
        if mean.is_empty() {
            mean = out;
        } else {
            if mean.len() != out.len() {
                return Err(Error::DimensionMismatch {
                    context: "activation lengths across probes",
                    expected: mean.len(),
                    got: out.len(),
                });
            }
            for (m, o) in mean.iter_mut().zip(&out) {
                *m += o;
            }
        }
    }
    let k = probes.len() as f64;
    for m in mean.iter_mut() {
        *m /= k;
    }
    Ok(mean)
}

/// Embedding summary returned alongside the watermarked model.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EmbedStats {
    pub similarity: f64,
    pub steps_run: usize,
    /// Max absolute weight change on the target layer.
    pub delta_w_inf: f64,
}

/// Gradient-descend the target layer's weights until extraction reproduces
/// `message`. The penalty acts as a proximal step toward the original
/// weights, so `penalty -> inf` leaves the layer untouched. Fails with
/// [`Error::FailedToConverge`] when `steps > 0` and the final similarity is
/// below 0.9.
pub fn embed(
    model: &ModelGraph,
    key: &SecretKey,
    message: &SignatureMessage,
    steps: usize,
    rate: f64,
    penalty: f64,
) -> Result<(ModelGraph, EmbedStats)> {
    if message.len() != key.n_bits() {
        return Err(Error::LengthMismatch {
            left: message.len(),
            right: key.n_bits(),
        });
    }
    let node = model
        .layer(key.layer_index)
        .ok_or(Error::NotEligible { layer: key.layer_index })?;
    let weights = node
        .flat_weights()
        .ok_or(Error::NotEligible { layer: key.layer_index })?;

    let new_flat = match key.scheme {
        SchemeKind::WeightProjection => {
            let projection = key.projection.as_ref().expect("projection key");
            if weights.len() != projection.cols() {
                return Err(Error::DimensionMismatch {
                    context: "embedding target",
                    expected: projection.cols(),
                    got: weights.len(),
                });
            }
            embed_projection(weights, projection, message, steps, rate, penalty)
        }
        SchemeKind::WeightSelection => {
            let positions = key.positions.as_ref().expect("selection key");
            if positions.iter().any(|&p| p >= weights.len()) {
                return Err(Error::DimensionMismatch {
                    context: "embedding target",
                    expected: weights.len(),
                    got: key.expected_dim,
                });
            }
            embed_selection(weights, positions, message, steps, rate, penalty)
        }
        SchemeKind::ActivationProjection => {
            embed_activation(model, key, message, steps, rate, penalty)?
        }
    };

    let delta_w_inf = weights
        .iter()
        .zip(&new_flat)
        .map(|(a, b)| math::abs(a - b))
        .fold(0.0, f64::max);
    let rewritten = set_layer_flat_weights(model, key.layer_index, new_flat)?;
    let sim = match extract(&rewritten, key) {
        ExtractOutcome::Message(m) => similarity(message, &m)?,
        ExtractOutcome::NoSignature { .. } => 0.0,
    };
    if steps > 0 && sim < 0.9 {
        return Err(Error::FailedToConverge { similarity: sim });
    }
    Ok((
        rewritten,
        EmbedStats {
            similarity: sim,
            steps_run: steps,
            delta_w_inf,
        },
    ))
}

/// One proximal step of `penalty * ||w - w0||^2` at step size `rate`.
fn prox_toward(w: &mut [f64], w0: &[f64], rate: f64, penalty: f64) {
    if penalty == 0.0 {
        return;
    }
    let shrink = 2.0 * rate * penalty;
    let denom = 1.0 + shrink;
    for (wi, oi) in w.iter_mut().zip(w0) {
        *wi = (*wi + shrink * oi) / denom;
    }
}

fn embed_projection(
    weights: &[f64],
    projection: &Mat,
    message: &SignatureMessage,
    steps: usize,
    rate: f64,
    penalty: f64,
) -> Vec<f64> {
    let mut w = weights.to_vec();
    let w0 = weights.to_vec();
    let n = projection.rows();
    for _ in 0..steps {
        let mut grad = vec![0.0; w.len()];
        for j in 0..n {
            let row = projection.row(j);
            let z: f64 = row.iter().zip(&w).map(|(s, x)| s * x).sum();
            let resid = math::sigmoid(z) - f64::from(message.bits()[j]);
            if resid == 0.0 {
                continue;
            }
            for (g, s) in grad.iter_mut().zip(row) {
                *g += resid * s;
            }
        }
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= rate * g;
        }
        prox_toward(&mut w, &w0, rate, penalty);
    }
    w
}

fn embed_selection(
    weights: &[f64],
    positions: &[usize],
    message: &SignatureMessage,
    steps: usize,
    rate: f64,
    penalty: f64,
) -> Vec<f64> {
    let mut w = weights.to_vec();
    let w0 = weights.to_vec();
    // Squared hinge pushing each selected weight past a margin of twice the
    // layer's weight spread, on the side encoding its bit.
    let margin = 2.0 * math::population_std(&w0).max(1e-12);
    for _ in 0..steps {
        for (j, &p) in positions.iter().enumerate() {
            let target = if message.bits()[j] == 1 { 1.0 } else { -1.0 };
            let gap = margin - target * w[p];
            if gap > 0.0 {
                w[p] += rate * 2.0 * gap * target;
            }
        }
        prox_toward(&mut w, &w0, rate, penalty);
    }
    w
}

fn embed_activation(
    model: &ModelGraph,
    key: &SecretKey,
    message: &SignatureMessage,
    steps: usize,
    rate: f64,
    penalty: f64,
) -> Result<Vec<f64>> {
    let layer_index = key.layer_index;
    let Some(LayerNode::Linear(layer)) = model.layer(layer_index) else {
        return Err(Error::NotEligible { layer: layer_index });
    };
    let activation = layer.activation();
    if !matches!(activation, ActivationKind::Identity | ActivationKind::Relu) {
        return Err(Error::NotEligible { layer: layer_index });
    }
    let projection = key.projection.as_ref().expect("projection key");
    if layer.output_dim() != projection.cols() {
        return Err(Error::DimensionMismatch {
            context: "embedding target",
            expected: projection.cols(),
            got: layer.output_dim(),
        });
    }
    let probes = key.probes.as_ref().ok_or(Error::EmptyInput)?;
    if probes.is_empty() {
        return Err(Error::EmptyInput);
    }

    // Inputs to the target layer are constant while its weights move.
    let mut inputs = Vec::with_capacity(probes.len());
    for probe in probes {
        let x = if layer_index == 0 {
            probe.flattened().into_data()
        } else {
            model.forward_through(probe, layer_index - 1)?
        };
        inputs.push(x);
    }

    let (m, n) = (layer.input_dim(), layer.output_dim());
    let bias = layer.bias().to_vec();
    let mut w = layer.weights().data().to_vec();
    let w0 = w.clone();
    let k = inputs.len() as f64;
    for _ in 0..steps {
        // Mean post-activation response and per-probe active masks.
        let mut mean = vec![0.0; n];
        let mut pre_all = Vec::with_capacity(inputs.len());
        for x in &inputs {
            let mut pre = bias.clone();
            for (u, &xu) in x.iter().enumerate() {
                if xu == 0.0 {
                    continue;
                }
                let row = &w[u * n..(u + 1) * n];
                for (p, wv) in pre.iter_mut().zip(row) {
                    *p += xu * wv;
                }
            }
            for (acc, p) in mean.iter_mut().zip(&pre) {
                *acc += match activation {
                    ActivationKind::Relu => p.max(0.0),
                    _ => *p,
                };
            }
            pre_all.push(pre);
        }
        for v in mean.iter_mut() {
            *v /= k;
        }

        let mut back = vec![0.0; n];
        for j in 0..projection.rows() {
            let row = projection.row(j);
            let z: f64 = row.iter().zip(&mean).map(|(s, a)| s * a).sum();
            let resid = math::sigmoid(z) - f64::from(message.bits()[j]);
            if resid == 0.0 {
                continue;
            }
            for (b, s) in back.iter_mut().zip(row) {
                *b += resid * s;
            }
        }

        for (x, pre) in inputs.iter().zip(&pre_all) {
            for u in 0..m {
                let xu = x[u];
                if xu == 0.0 {
                    continue;
                }
                let row = &mut w[u * n..(u + 1) * n];
                for v in 0..n {
                    let active = match activation {
                        ActivationKind::Relu => pre[v] > 0.0,
                        _ => true,
                    };
                    if active {
                        row[v] -= rate * xu * back[v] / k;
                    }
                }
            }
        }
        prox_toward(&mut w, &w0, rate, penalty);
    }
    Ok(w)
}

/// Rebuild layer `index` with new flattened weights, keeping its structure.
pub(crate) fn set_layer_flat_weights(
    model: &ModelGraph,
    index: usize,
    flat: Vec<f64>,
) -> Result<ModelGraph> {
    let node = model
        .layer(index)
        .ok_or(Error::NotEligible { layer: index })?;
    let replacement = match node {
        LayerNode::Linear(l) => {
            let weights = Mat::new(l.input_dim(), l.output_dim(), flat)?;
            LayerNode::Linear(LinearLayer::new(
                weights,
                l.bias().to_vec(),
                l.activation(),
            )?)
        }
        LayerNode::Conv(c) => {
            let kernel = Tensor::new(c.kernel().shape().to_vec(), flat)?;
            LayerNode::Conv(ConvLayer::new(
                kernel,
                c.bias().to_vec(),
                c.input_padding(),
                c.stride(),
                c.activation(),
            )?)
        }
        LayerNode::Pool(_) => return Err(Error::NotEligible { layer: index }),
    };
    model.splice(index, 1, vec![replacement])
}

/// Tri-state verification result.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "outcome", rename_all = "snake_case"))]
pub enum VerificationOutcome {
    Verified { confidence: f64 },
    BelowThreshold { confidence: f64 },
    NoSignature { reason: String },
}

impl VerificationOutcome {
    pub fn confidence(&self) -> Option<f64> {
        match self {
            VerificationOutcome::Verified { confidence }
            | VerificationOutcome::BelowThreshold { confidence } => Some(*confidence),
            VerificationOutcome::NoSignature { .. } => None,
        }
    }

    pub fn is_verified(&self) -> bool {
        matches!(self, VerificationOutcome::Verified { .. })
    }
}

/// A similarity is `Verified` only strictly above chance plus the margin.
pub fn outcome_from_confidence(confidence: f64, delta: f64) -> VerificationOutcome {
    if confidence > 0.5 + delta {
        VerificationOutcome::Verified { confidence }
    } else {
        VerificationOutcome::BelowThreshold { confidence }
    }
}

/// Passive verification: extract by the book, compare with the owner's
/// message, halt on failure.
pub fn verify(
    model: &ModelGraph,
    key: &SecretKey,
    m_o: &SignatureMessage,
    delta: f64,
) -> VerificationOutcome {
    match extract(model, key) {
        ExtractOutcome::NoSignature { reason } => VerificationOutcome::NoSignature { reason },
        ExtractOutcome::Message(m_e) => match similarity(m_o, &m_e) {
            Ok(confidence) => outcome_from_confidence(confidence, delta),
            Err(e) => VerificationOutcome::NoSignature {
                reason: format!("{e}"),
            },
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{linear_model, DtypeTag};

    fn random_linear_model(m: usize, n: usize, seed: u64) -> ModelGraph {
        let mut r = rng::new_rng(seed);
        let scale = 1.0 / math::sqrt(m as f64);
        let data = (0..m * n)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut r);
                g * scale
            })
            .collect();
        let w = Mat::new(m, n, data).unwrap();
        linear_model(
            LinearLayer::new(w, vec![0.0; n], ActivationKind::Identity).unwrap(),
            DtypeTag::F64,
        )
        .unwrap()
    }

    #[test]
    fn similarity_basics() {
        let a = SignatureMessage::new(vec![1, 1, 0, 0]).unwrap();
        let b = SignatureMessage::new(vec![1, 0, 0, 1]).unwrap();
        let complement = SignatureMessage::new(vec![0, 0, 1, 1]).unwrap();
        assert_eq!(similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(similarity(&a, &complement).unwrap(), 0.0);
        assert_eq!(similarity(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn similarity_rejects_length_mismatch() {
        let a = SignatureMessage::new(vec![1, 0]).unwrap();
        let b = SignatureMessage::new(vec![1, 0, 1]).unwrap();
        assert!(matches!(
            similarity(&a, &b),
            Err(Error::LengthMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn similarity_equals_one_minus_normalized_hamming_exhaustively() {
        // All 4-bit pairs: 256 cases against the brute-force oracle.
        for a in 0u8..16 {
            for b in 0u8..16 {
                let bits = |v: u8| (0..4).map(|i| (v >> i) & 1).collect::<Vec<u8>>();
                let ma = SignatureMessage::new(bits(a)).unwrap();
                let mb = SignatureMessage::new(bits(b)).unwrap();
                let hamming = (a ^ b).count_ones() as f64;
                assert_eq!(similarity(&ma, &mb).unwrap(), 1.0 - hamming / 4.0);
            }
        }
    }

    #[test]
    fn verify_threshold_boundary_is_strict() {
        assert!(matches!(
            outcome_from_confidence(0.5, 0.0),
            VerificationOutcome::BelowThreshold { .. }
        ));
        assert!(matches!(
            outcome_from_confidence(0.55, 0.05),
            VerificationOutcome::BelowThreshold { .. }
        ));
        assert!(outcome_from_confidence(0.5500001, 0.05).is_verified());
    }

    #[test]
    fn verify_is_monotone_in_confidence() {
        let delta = 0.05;
        let mut verified_seen = false;
        for k in 0..=100 {
            let c = k as f64 / 100.0;
            let outcome = outcome_from_confidence(c, delta);
            if verified_seen {
                assert!(outcome.is_verified());
            } else if outcome.is_verified() {
                verified_seen = true;
            }
        }
        assert!(verified_seen);
    }

    #[test]
    fn keygen_rejects_oversized_selection() {
        let model = random_linear_model(4, 4, 1);
        assert!(generate_key(&model, SchemeKind::WeightSelection, 0, 17, 0, 2).is_err());
    }

    #[test]
    fn embed_extract_round_trip_weight_projection() {
        let model = random_linear_model(32, 32, 3);
        let key = generate_key(&model, SchemeKind::WeightProjection, 0, 128, 0, 4).unwrap();
        let message = SignatureMessage::random(128, 5).unwrap();
        let (wm, stats) = embed(&model, &key, &message, 300, 0.05, 1e-3).unwrap();
        assert!(stats.similarity >= 0.98, "similarity {}", stats.similarity);
        let extracted = extract(&wm, &key);
        let m_e = extracted.message().expect("signature present");
        assert!(similarity(&message, m_e).unwrap() >= 0.98);
    }

    #[test]
    fn embed_extract_round_trip_weight_selection() {
        let model = random_linear_model(32, 32, 6);
        let key = generate_key(&model, SchemeKind::WeightSelection, 0, 200, 0, 7).unwrap();
        let message = SignatureMessage::random(200, 8).unwrap();
        let (wm, stats) = embed(&model, &key, &message, 300, 0.05, 1e-3).unwrap();
        assert!(stats.similarity >= 0.98, "similarity {}", stats.similarity);
        assert!(verify(&wm, &key, &message, 0.05).is_verified());
    }

    #[test]
    fn embed_extract_round_trip_activation_projection() {
        // The mean activation is n-dimensional, so the bit count must stay
        // well below the layer's output dim for the constraints to be
        // satisfiable.
        let model = random_linear_model(32, 32, 9);
        let key =
            generate_key(&model, SchemeKind::ActivationProjection, 0, 16, 16, 10).unwrap();
        let message = SignatureMessage::random(16, 11).unwrap();
        let (wm, stats) = embed(&model, &key, &message, 400, 0.15, 1e-4).unwrap();
        assert!(stats.similarity >= 0.98, "similarity {}", stats.similarity);
        assert!(verify(&wm, &key, &message, 0.05).is_verified());
    }

    #[test]
    fn zero_steps_leaves_similarity_at_chance() {
        let model = random_linear_model(64, 64, 12);
        let key = generate_key(&model, SchemeKind::WeightProjection, 0, 256, 0, 13).unwrap();
        let message = SignatureMessage::random(256, 14).unwrap();
        let (wm, stats) = embed(&model, &key, &message, 0, 0.05, 1e-3).unwrap();
        assert_eq!(stats.delta_w_inf, 0.0);
        assert!((stats.similarity - 0.5).abs() < 0.07, "sim {}", stats.similarity);
        assert_eq!(&wm, &model);
    }

    #[test]
    fn infinite_penalty_freezes_the_layer() {
        let model = random_linear_model(16, 16, 15);
        let key = generate_key(&model, SchemeKind::WeightProjection, 0, 32, 0, 16).unwrap();
        let message = SignatureMessage::random(32, 17).unwrap();
        let before = match extract(&model, &key) {
            ExtractOutcome::Message(m) => m,
            _ => panic!("extraction must succeed"),
        };
        let huge = 1e150;
        let result = embed(&model, &key, &message, 50, 0.05, huge);
        // Unchanged weights mean the similarity stays at its initial value;
        // convergence may legitimately fail.
        let (wm, sim) = match result {
            Ok((wm, stats)) => (wm, stats.similarity),
            Err(Error::FailedToConverge { similarity }) => (model.clone(), similarity),
            Err(e) => panic!("unexpected error {e}"),
        };
        let after = match extract(&wm, &key) {
            ExtractOutcome::Message(m) => m,
            _ => panic!("extraction must succeed"),
        };
        assert_eq!(before, after);
        assert_eq!(sim, similarity(&message, &before).unwrap());
    }

    #[test]
    fn embed_fails_to_converge_with_zero_rate() {
        let model = random_linear_model(32, 32, 18);
        let key = generate_key(&model, SchemeKind::WeightProjection, 0, 256, 0, 19).unwrap();
        let message = SignatureMessage::random(256, 20).unwrap();
        match embed(&model, &key, &message, 1, 0.0, 0.0) {
            Err(Error::FailedToConverge { similarity }) => {
                assert!(similarity < 0.9);
            }
            other => panic!("expected FailedToConverge, got {other:?}"),
        }
    }

    #[test]
    fn random_key_similarity_concentrates_at_chance() {
        let model = random_linear_model(32, 32, 21);
        let owner = SignatureMessage::random(256, 22).unwrap();
        let mut total = 0.0;
        let trials = 50;
        for s in 0..trials {
            let key =
                generate_key(&model, SchemeKind::WeightProjection, 0, 256, 0, 1000 + s).unwrap();
            let extracted = extract(&model, &key);
            total += similarity(&owner, extracted.message().unwrap()).unwrap();
        }
        let mean = total / trials as f64;
        assert!((mean - 0.5).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn extraction_reports_dimension_reason_after_reshape() {
        let model = random_linear_model(8, 8, 23);
        let key = generate_key(&model, SchemeKind::WeightProjection, 0, 16, 0, 24).unwrap();
        // Stand-in for a base-obfuscated layer: same layer index, wider shape.
        let wider = random_linear_model(8, 16, 25);
        match extract(&wider, &key) {
            ExtractOutcome::NoSignature { reason } => {
                assert!(reason.contains("128"), "reason {reason}");
                assert!(reason.contains("64"), "reason {reason}");
            }
            other => panic!("expected NoSignature, got {other:?}"),
        }
    }
}
