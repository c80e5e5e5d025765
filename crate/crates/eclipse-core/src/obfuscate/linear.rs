//! Linear-layer obfuscation.
//!
//! Base mode splits layer `F` with weights `A` into `F1 = A H` and
//! `F2 = h_inv` (bias and activation move to `F2`); the composition is
//! `x A (H h_inv) + b = x A + b`, so outputs are preserved while both new
//! layers look unrelated to `A`. Advanced mode keeps `F1` and hides `F2`
//! inside the following linear layer: its weights become `h_inv A_next` and
//! its bias `b A_next + b_next`, skipping whatever activation sat in
//! between.

use alloc::string::ToString;
use alloc::vec;

use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::layer::{ActivationKind, LayerNode, LinearLayer};
use crate::linalg::{InvertiblePair, Mat};
use crate::obfuscate::TransformRecord;
use crate::rng;

/// Options shared by both linear transforms.
#[derive(Debug, Clone)]
pub struct LinearObfOptions {
    /// Hidden width of the split; defaults to `2n` for an `m x n` layer.
    pub h: Option<usize>,
    /// Resample `H` looking for a non-negative `A * H` so the split layer
    /// can wear a ReLU without changing outputs. Best effort.
    pub relu_camouflage: bool,
}

impl Default for LinearObfOptions {
    fn default() -> Self {
        LinearObfOptions {
            h: None,
            relu_camouflage: false,
        }
    }
}

const CAMOUFLAGE_ATTEMPTS: usize = 32;

fn target_linear(model: &ModelGraph, index: usize) -> Result<&LinearLayer> {
    match model.layer(index) {
        Some(LayerNode::Linear(l)) => Ok(l),
        _ => Err(Error::NotLinear { layer: index }),
    }
}

fn split_width(layer: &LinearLayer, opts: &LinearObfOptions) -> Result<usize> {
    let n = layer.output_dim();
    let h = opts.h.unwrap_or(2 * n);
    if h <= n {
        return Err(Error::InvalidShape { n, h });
    }
    Ok(h)
}

/// Replace layer `index` with the pair `F1 = A H` (no bias, identity
/// activation) and `F2 = h_inv` (original bias and activation). Outputs are
/// preserved for every input.
pub fn base_obfuscate_linear(
    model: &ModelGraph,
    index: usize,
    opts: &LinearObfOptions,
    seed: u64,
) -> Result<(ModelGraph, TransformRecord)> {
    let layer = target_linear(model, index)?;
    let h = split_width(layer, opts)?;
    let n = layer.output_dim();

    let mut pair = InvertiblePair::generate(n, h, seed)?;
    let mut front = layer.weights().matmul(pair.h())?;
    let mut camouflage = None;
    if opts.relu_camouflage {
        let mut achieved = all_non_negative(&front);
        let mut attempt = 1u64;
        while !achieved && attempt < CAMOUFLAGE_ATTEMPTS as u64 {
            let cand = InvertiblePair::generate(n, h, rng::derive_seed(seed, attempt))?;
            let cand_front = layer.weights().matmul(cand.h())?;
            if all_non_negative(&cand_front) {
                pair = cand;
                front = cand_front;
                achieved = true;
            }
            attempt += 1;
        }
        camouflage = Some(achieved);
    }

    // The inserted ReLU is a no-op only when F1's outputs are non-negative,
    // which needs both A*H >= 0 and non-negative inputs (a preceding ReLU).
    let relu_is_safe = camouflage == Some(true)
        && index > 0
        && match model.layer(index - 1) {
            Some(LayerNode::Linear(prev)) => prev.activation() == ActivationKind::Relu,
            Some(LayerNode::Conv(prev)) => prev.activation() == ActivationKind::Relu,
            _ => false,
        };
    let front_activation = if relu_is_safe {
        ActivationKind::Relu
    } else {
        ActivationKind::Identity
    };

    let first = LinearLayer::new(front, vec![0.0; h], front_activation)?;
    let second = LinearLayer::new(
        pair.h_inv().clone(),
        layer.bias().to_vec(),
        layer.activation(),
    )?;
    let rewritten = model.splice(
        index,
        1,
        vec![LayerNode::Linear(first), LayerNode::Linear(second)],
    )?;
    Ok((
        rewritten,
        TransformRecord::BaseLinear {
            layer: index,
            h,
            seed,
            relu_camouflage: camouflage,
        },
    ))
}

/// Split layer `index` and fold the second half into the following linear
/// layer. When no linear successor exists (absent, conv, or pool) a carrier
/// layer is synthesized from the pair itself, which keeps the transform
/// exact. Otherwise the activation between the two layers is skipped and
/// recorded.
pub fn advanced_obfuscate_linear(
    model: &ModelGraph,
    index: usize,
    opts: &LinearObfOptions,
    seed: u64,
) -> Result<(ModelGraph, TransformRecord)> {
    let layer = target_linear(model, index)?;
    let h = split_width(layer, opts)?;
    let n = layer.output_dim();

    let pair = InvertiblePair::generate(n, h, seed)?;
    let front = LinearLayer::new(
        layer.weights().matmul(pair.h())?,
        vec![0.0; h],
        ActivationKind::Identity,
    )?;

    match model.layer(index + 1) {
        Some(LayerNode::Linear(next)) => {
            let merged_weights = pair.h_inv().matmul(next.weights())?;
            let mut merged_bias = next.weights().row_vec_mul(layer.bias())?;
            for (m, b) in merged_bias.iter_mut().zip(next.bias()) {
                *m += b;
            }
            let merged = LinearLayer::new(merged_weights, merged_bias, next.activation())?;
            let dropped = match layer.activation() {
                ActivationKind::Identity => None,
                other => Some(other.name().to_string()),
            };
            let rewritten = model.splice(
                index,
                2,
                vec![LayerNode::Linear(front), LayerNode::Linear(merged)],
            )?;
            Ok((
                rewritten,
                TransformRecord::AdvancedLinear {
                    layer: index,
                    h,
                    seed,
                    dropped_activation: dropped,
                    synthesized_successor: false,
                },
            ))
        }
        _ => {
            let carrier = LinearLayer::new(
                pair.h_inv().clone(),
                layer.bias().to_vec(),
                layer.activation(),
            )?;
            let rewritten = model.splice(
                index,
                1,
                vec![LayerNode::Linear(front), LayerNode::Linear(carrier)],
            )?;
            Ok((
                rewritten,
                TransformRecord::AdvancedLinear {
                    layer: index,
                    h,
                    seed,
                    dropped_activation: None,
                    synthesized_successor: true,
                },
            ))
        }
    }
}

fn all_non_negative(m: &Mat) -> bool {
    m.data().iter().all(|&v| v >= 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{equivalence_report, gen_probes};
    use crate::graph::{linear_model, DtypeTag};

    fn layer(rows: usize, cols: usize, seed: u64, act: ActivationKind) -> LinearLayer {
        let mut rng = rng::new_rng(seed);
        let w = Mat::random_uniform(rows, cols, &mut rng);
        let bias = (0..cols).map(|i| (i as f64) * 0.01 - 0.05).collect();
        LinearLayer::new(w, bias, act).unwrap()
    }

    #[test]
    fn base_split_with_block_identity_pair() {
        // A = I2, H = [I | 0]: F1 = [[1,0,0],[0,1,0]], F2 = H^T, outputs
        // unchanged.
        let model = linear_model(
            LinearLayer::new(Mat::identity(2), vec![0.0; 2], ActivationKind::Identity).unwrap(),
            DtypeTag::F64,
        )
        .unwrap();
        let (obf, _) = base_obfuscate_linear(
            &model,
            0,
            &LinearObfOptions {
                h: Some(3),
                relu_camouflage: false,
            },
            5,
        )
        .unwrap();
        assert_eq!(obf.len(), 2);
        let probes = gen_probes(&[2], 64, 7);
        let eq = equivalence_report(&model, &obf, &probes).unwrap();
        assert!(eq.max_abs_dev <= 1e-10, "dev {}", eq.max_abs_dev);
    }

    #[test]
    fn base_split_preserves_outputs_and_changes_shapes() {
        let model = linear_model(layer(6, 4, 1, ActivationKind::Relu), DtypeTag::F64).unwrap();
        let (obf, record) =
            base_obfuscate_linear(&model, 0, &LinearObfOptions::default(), 42).unwrap();
        assert_eq!(obf.len(), 2);
        match record {
            TransformRecord::BaseLinear { h, .. } => assert_eq!(h, 8),
            other => panic!("unexpected record {other:?}"),
        }
        // Neither new layer has the original 6x4 shape.
        for node in obf.layers() {
            if let LayerNode::Linear(l) = node {
                assert_ne!((l.input_dim(), l.output_dim()), (6, 4));
            }
        }
        let probes = gen_probes(&[6], 200, 3);
        let eq = equivalence_report(&model, &obf, &probes).unwrap();
        assert!(eq.max_abs_dev <= 1e-10, "dev {}", eq.max_abs_dev);
    }

    #[test]
    fn base_split_rejects_non_linear_target() {
        let pool = crate::layer::PoolLayer::new(2, 2).unwrap();
        let model = ModelGraph::new(
            vec![LayerNode::Pool(pool)],
            vec![1, 4, 4],
            DtypeTag::F64,
        )
        .unwrap();
        assert_eq!(
            base_obfuscate_linear(&model, 0, &LinearObfOptions::default(), 0).unwrap_err(),
            Error::NotLinear { layer: 0 }
        );
    }

    #[test]
    fn base_split_rejects_h_not_larger_than_n() {
        let model = linear_model(layer(3, 3, 2, ActivationKind::Identity), DtypeTag::F64).unwrap();
        assert_eq!(
            base_obfuscate_linear(
                &model,
                0,
                &LinearObfOptions {
                    h: Some(3),
                    relu_camouflage: false
                },
                0
            )
            .unwrap_err(),
            Error::InvalidShape { n: 3, h: 3 }
        );
    }

    #[test]
    fn advanced_merge_bias_matches_hand_computation() {
        // A_next = I, b_i = [1,2], b_next = [3,4] -> merged bias [4,6].
        let first = LinearLayer::new(
            Mat::identity(2),
            vec![1.0, 2.0],
            ActivationKind::Identity,
        )
        .unwrap();
        let second = LinearLayer::new(
            Mat::identity(2),
            vec![3.0, 4.0],
            ActivationKind::Identity,
        )
        .unwrap();
        let model = ModelGraph::new(
            vec![LayerNode::Linear(first), LayerNode::Linear(second)],
            vec![2],
            DtypeTag::F64,
        )
        .unwrap();
        let (obf, _) =
            advanced_obfuscate_linear(&model, 0, &LinearObfOptions::default(), 11).unwrap();
        assert_eq!(obf.len(), 2);
        let LayerNode::Linear(merged) = &obf.layers()[1] else {
            panic!("expected linear layer");
        };
        assert_eq!(merged.bias(), &[4.0, 6.0]);
    }

    #[test]
    fn advanced_merge_is_exact_for_identity_activations() {
        let model = ModelGraph::new(
            vec![
                LayerNode::Linear(layer(5, 4, 3, ActivationKind::Identity)),
                LayerNode::Linear(layer(4, 3, 4, ActivationKind::Identity)),
            ],
            vec![5],
            DtypeTag::F64,
        )
        .unwrap();
        let (obf, record) =
            advanced_obfuscate_linear(&model, 0, &LinearObfOptions::default(), 8).unwrap();
        match record {
            TransformRecord::AdvancedLinear {
                dropped_activation,
                synthesized_successor,
                ..
            } => {
                assert_eq!(dropped_activation, None);
                assert!(!synthesized_successor);
            }
            other => panic!("unexpected record {other:?}"),
        }
        let probes = gen_probes(&[5], 200, 5);
        let eq = equivalence_report(&model, &obf, &probes).unwrap();
        assert!(eq.max_abs_dev <= 1e-10, "dev {}", eq.max_abs_dev);
    }

    #[test]
    fn advanced_records_dropped_relu() {
        let model = ModelGraph::new(
            vec![
                LayerNode::Linear(layer(5, 4, 3, ActivationKind::Relu)),
                LayerNode::Linear(layer(4, 3, 4, ActivationKind::Identity)),
            ],
            vec![5],
            DtypeTag::F64,
        )
        .unwrap();
        let (_, record) =
            advanced_obfuscate_linear(&model, 0, &LinearObfOptions::default(), 8).unwrap();
        match record {
            TransformRecord::AdvancedLinear {
                dropped_activation, ..
            } => assert_eq!(dropped_activation.as_deref(), Some("relu")),
            other => panic!("unexpected record {other:?}"),
        }
    }

    #[test]
    fn advanced_on_last_layer_synthesizes_carrier_and_stays_exact() {
        let model = linear_model(layer(4, 3, 6, ActivationKind::Softmax), DtypeTag::F64).unwrap();
        let (obf, record) =
            advanced_obfuscate_linear(&model, 0, &LinearObfOptions::default(), 13).unwrap();
        match record {
            TransformRecord::AdvancedLinear {
                synthesized_successor,
                dropped_activation,
                ..
            } => {
                assert!(synthesized_successor);
                assert_eq!(dropped_activation, None);
            }
            other => panic!("unexpected record {other:?}"),
        }
        let probes = gen_probes(&[4], 100, 9);
        let eq = equivalence_report(&model, &obf, &probes).unwrap();
        assert!(eq.max_abs_dev <= 1e-10, "dev {}", eq.max_abs_dev);
    }

    #[test]
    fn same_seed_reproduces_the_same_split() {
        let model = linear_model(layer(6, 4, 1, ActivationKind::Identity), DtypeTag::F64).unwrap();
        let (a, _) = base_obfuscate_linear(&model, 0, &LinearObfOptions::default(), 77).unwrap();
        let (b, _) = base_obfuscate_linear(&model, 0, &LinearObfOptions::default(), 77).unwrap();
        assert_eq!(a, b);
    }
}
