//! Seeded synthetic models and watermark fixtures. Everything here is a
//! pure function of its seed, so experiment suites need no external data.

use eclipse_core::error::Result;
use eclipse_core::graph::{DtypeTag, ModelGraph};
use eclipse_core::layer::{ActivationKind, ConvLayer, LayerNode, LinearLayer, PoolLayer};
use eclipse_core::linalg::Mat;
use eclipse_core::rng::{self, Rng};
use eclipse_core::tensor::Tensor;
use eclipse_core::watermark::{
    embed, generate_key, EmbedStats, SchemeKind, SecretKey, SignatureMessage,
};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(r: &mut Rng) -> f64 {
    StandardNormal.sample(r)
}

/// Dense linear weights at the usual 1/sqrt(fan_in) scale.
fn linear_weights(rows: usize, cols: usize, gain: f64, r: &mut Rng) -> Mat {
    let scale = gain / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| gaussian(r) * scale).collect();
    Mat::new(rows, cols, data).expect("fixture dims are positive")
}

/// Hidden-layer bias, shifted positive so most units stay active. Keeps
/// toy models meaningful under transforms that skip a ReLU.
fn active_bias(len: usize, r: &mut Rng) -> Vec<f64> {
    (0..len).map(|_| 0.3 + 0.05 * gaussian(r)).collect()
}

/// Conv kernels drawn as rescaled cubed gaussians: same variance as a
/// gaussian draw but with a dense near-zero mass, matching the heavy-tailed
/// look of trained kernels.
fn conv_kernel(maps: usize, channels: usize, kh: usize, kw: usize, r: &mut Rng) -> Tensor {
    let fan_in = (channels * kh * kw) as f64;
    let scale = 1.0 / (fan_in.sqrt() * 15.0f64.sqrt());
    let data = (0..maps * channels * kh * kw)
        .map(|_| {
            let g = gaussian(r);
            g * g * g * scale
        })
        .collect();
    Tensor::new(vec![maps, channels, kh, kw], data).expect("fixture dims are positive")
}

/// A stack of `depth` linear layers, all `width x width`: ReLU with
/// positive-shifted bias on hidden layers, Softmax on the last. Identical
/// layer sizes keep spectrum volatilities comparable across layers.
pub fn uniform_mlp(depth: usize, width: usize, seed: u64) -> ModelGraph {
    assert!(depth >= 1);
    let mut r = rng::new_rng(seed);
    let mut layers = Vec::with_capacity(depth);
    for i in 0..depth {
        let last = i + 1 == depth;
        let weights = linear_weights(width, width, 1.0, &mut r);
        let (bias, act) = if last {
            (vec![0.0; width], ActivationKind::Softmax)
        } else {
            (active_bias(width, &mut r), ActivationKind::Relu)
        };
        layers.push(LayerNode::Linear(
            LinearLayer::new(weights, bias, act).expect("fixture layer is valid"),
        ));
    }
    ModelGraph::new(layers, vec![width], DtypeTag::F64).expect("fixture chain is valid")
}

/// A random classifier MLP: 3-6 layers, dims drawn from 16..=256, ReLU
/// hidden layers, Softmax output.
pub fn random_mlp(seed: u64) -> ModelGraph {
    let mut r = rng::new_rng(seed);
    let depth = r.gen_range(3..=6usize);
    let dims: Vec<usize> = (0..=depth).map(|_| r.gen_range(16..=256usize)).collect();
    let mut layers = Vec::with_capacity(depth);
    for (i, pair) in dims.windows(2).enumerate() {
        let last = i + 1 == depth;
        let weights = linear_weights(pair[0], pair[1], 1.0, &mut r);
        let (bias, act) = if last {
            (vec![0.0; pair[1]], ActivationKind::Softmax)
        } else {
            (active_bias(pair[1], &mut r), ActivationKind::Relu)
        };
        layers.push(LayerNode::Linear(
            LinearLayer::new(weights, bias, act).expect("fixture layer is valid"),
        ));
    }
    ModelGraph::new(layers, vec![dims[0]], DtypeTag::F64).expect("fixture chain is valid")
}

/// The convolutional test model: two conv/pool stages on a 1x16x16 input,
/// then three fully connected layers (256 -> 64 -> 32 -> 10).
pub fn toy_cnn(seed: u64) -> ModelGraph {
    let mut r = rng::new_rng(seed);
    let conv1 = ConvLayer::new(
        conv_kernel(8, 1, 3, 3, &mut r),
        active_bias(8, &mut r),
        [1; 4],
        [1, 1],
        ActivationKind::Relu,
    )
    .expect("conv1 is valid");
    let conv2 = ConvLayer::new(
        conv_kernel(16, 8, 3, 3, &mut r),
        active_bias(16, &mut r),
        [1; 4],
        [1, 1],
        ActivationKind::Relu,
    )
    .expect("conv2 is valid");
    let fc1 = LinearLayer::new(
        linear_weights(256, 64, 1.0, &mut r),
        active_bias(64, &mut r),
        ActivationKind::Relu,
    )
    .expect("fc1 is valid");
    let fc2 = LinearLayer::new(
        linear_weights(64, 32, 1.0, &mut r),
        active_bias(32, &mut r),
        ActivationKind::Relu,
    )
    .expect("fc2 is valid");
    let fc3 = LinearLayer::new(
        linear_weights(32, 10, 2.0, &mut r),
        vec![0.0; 10],
        ActivationKind::Softmax,
    )
    .expect("fc3 is valid");
    ModelGraph::new(
        vec![
            LayerNode::Conv(conv1),
            LayerNode::Pool(PoolLayer::new(2, 2).expect("pool is valid")),
            LayerNode::Conv(conv2),
            LayerNode::Pool(PoolLayer::new(2, 2).expect("pool is valid")),
            LayerNode::Linear(fc1),
            LayerNode::Linear(fc2),
            LayerNode::Linear(fc3),
        ],
        vec![1, 16, 16],
        DtypeTag::F64,
    )
    .expect("fixture chain is valid")
}

/// Watermark embedding parameters for fixture generation.
#[derive(Debug, Clone, Copy)]
pub struct WatermarkSpec {
    pub scheme: SchemeKind,
    pub layer: usize,
    pub bits: usize,
    pub probes: usize,
    pub steps: usize,
    pub rate: f64,
    pub penalty: f64,
}

/// Generate a key and message from the seed and embed into the model.
pub fn watermark_fixture(
    model: &ModelGraph,
    spec: &WatermarkSpec,
    seed: u64,
) -> Result<(ModelGraph, SecretKey, SignatureMessage, EmbedStats)> {
    let key = generate_key(
        model,
        spec.scheme,
        spec.layer,
        spec.bits,
        spec.probes,
        rng::derive_seed(seed, 1),
    )?;
    let message = SignatureMessage::random(spec.bits, rng::derive_seed(seed, 2))?;
    let (watermarked, stats) = embed(model, &key, &message, spec.steps, spec.rate, spec.penalty)?;
    Ok((watermarked, key, message, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_seed_deterministic() {
        assert_eq!(uniform_mlp(4, 16, 5), uniform_mlp(4, 16, 5));
        assert_eq!(toy_cnn(9), toy_cnn(9));
        assert_eq!(random_mlp(7), random_mlp(7));
        assert_ne!(random_mlp(7), random_mlp(8));
    }

    #[test]
    fn toy_cnn_forwards_and_classifies() {
        let model = toy_cnn(1);
        let probes = eclipse_core::eval::gen_probes(&[1, 16, 16], 4, 2);
        for p in &probes {
            let out = model.forward(p).unwrap();
            assert_eq!(out.len(), 10);
            assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn conv_kernels_have_small_minimum_magnitudes() {
        let model = toy_cnn(3);
        let LayerNode::Conv(conv) = &model.layers()[2] else {
            panic!("expected conv at index 2");
        };
        let min = conv
            .kernel()
            .data()
            .iter()
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min);
        let max = conv
            .kernel()
            .data()
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(min < 1e-4 * max, "min {min}, max {max}");
    }

    #[test]
    fn watermark_fixture_round_trips() {
        let model = uniform_mlp(3, 32, 11);
        let spec = WatermarkSpec {
            scheme: SchemeKind::WeightProjection,
            layer: 1,
            bits: 64,
            probes: 0,
            steps: 200,
            rate: 0.05,
            penalty: 1e-3,
        };
        let (wm, key, message, stats) = watermark_fixture(&model, &spec, 13).unwrap();
        assert!(stats.similarity >= 0.98);
        assert!(eclipse_core::watermark::verify(&wm, &key, &message, 0.05).is_verified());
    }
}
