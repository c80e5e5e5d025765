//! Independent oracles for the numerical kernels: a naive convolution
//! evaluator, matrix-product composition, and classical DFT identities.

use eclipse_core::detect::layer_spectrum;
use eclipse_core::eval::{equivalence_report, gen_probes};
use eclipse_core::graph::{DtypeTag, ModelGraph};
use eclipse_core::layer::{forward_conv, ActivationKind, ConvLayer, LayerNode, LinearLayer};
use eclipse_core::linalg::Mat;
use eclipse_core::obfuscate::conv::base_obfuscate_conv;
use eclipse_core::obfuscate::FrameSpec;
use eclipse_core::tensor::Tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference convolution: materialize the zero-padded input, then six plain
/// loops. Shares no code with `forward_conv`.
fn brute_force_conv(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f64],
    padding: [usize; 4],
    stride: [usize; 2],
) -> Vec<f64> {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (maps, channels, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    assert_eq!(c_in, channels);
    let [pt, pb, pl, pr] = padding;
    let (ph, pw) = (h + pt + pb, w + pl + pr);
    let mut padded = vec![0.0; c_in * ph * pw];
    for c in 0..c_in {
        for y in 0..h {
            for x in 0..w {
                padded[(c * ph + y + pt) * pw + (x + pl)] = input.at3(c, y, x);
            }
        }
    }
    let out_h = (ph - kh) / stride[0] + 1;
    let out_w = (pw - kw) / stride[1] + 1;
    let mut out = Vec::with_capacity(maps * out_h * out_w);
    for p in 0..maps {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = bias[p];
                for c in 0..channels {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = oy * stride[0] + ky;
                            let ix = ox * stride[1] + kx;
                            acc += padded[(c * ph + iy) * pw + ix] * kernel.at4(p, c, ky, kx);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

#[test]
fn forward_conv_matches_brute_force_up_to_4x3x5x5() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for maps in 1..=4 {
        for channels in 1..=3 {
            for kh in 1..=5 {
                for kw in [1, 3, 5] {
                    let padding = [
                        rng.gen_range(0..=2),
                        rng.gen_range(0..=2),
                        rng.gen_range(0..=2),
                        rng.gen_range(0..=2),
                    ];
                    let stride = [rng.gen_range(1..=2), rng.gen_range(1..=2)];
                    let kernel = random_tensor(vec![maps, channels, kh, kw], &mut rng);
                    let bias: Vec<f64> = (0..maps).map(|_| rng.gen_range(-0.5..0.5)).collect();
                    let input = random_tensor(vec![channels, 7, 7], &mut rng);
                    let layer = ConvLayer::new(
                        kernel.clone(),
                        bias.clone(),
                        padding,
                        stride,
                        ActivationKind::Identity,
                    )
                    .unwrap();
                    let fast = forward_conv(&layer, &input).unwrap();
                    let slow = brute_force_conv(&input, &kernel, &bias, padding, stride);
                    assert_eq!(fast.len(), slow.len());
                    for (a, b) in fast.data().iter().zip(&slow) {
                        assert!(
                            (a - b).abs() <= 1e-12,
                            "maps={maps} channels={channels} kh={kh} kw={kw}"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn chained_identity_layers_match_the_product_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let dims: Vec<usize> = (0..4).map(|_| rng.gen_range(2..10)).collect();
        let mats: Vec<Mat> = dims
            .windows(2)
            .map(|w| Mat::random_uniform(w[0], w[1], &mut rng))
            .collect();
        let layers = mats
            .iter()
            .map(|m| {
                LayerNode::Linear(
                    LinearLayer::new(m.clone(), vec![0.0; m.cols()], ActivationKind::Identity)
                        .unwrap(),
                )
            })
            .collect();
        let chain = ModelGraph::new(layers, vec![dims[0]], DtypeTag::F64).unwrap();
        let product = mats
            .iter()
            .skip(1)
            .fold(mats[0].clone(), |acc, m| acc.matmul(m).unwrap());
        let single = ModelGraph::new(
            vec![LayerNode::Linear(
                LinearLayer::new(
                    product,
                    vec![0.0; *dims.last().unwrap()],
                    ActivationKind::Identity,
                )
                .unwrap(),
            )],
            vec![dims[0]],
            DtypeTag::F64,
        )
        .unwrap();
        for probe in gen_probes(&[dims[0]], 20, rng.gen()) {
            let a = chain.forward(&probe).unwrap();
            let b = single.forward(&probe).unwrap();
            for (x, y) in a.iter().zip(&b) {
                let scale = y.abs().max(1.0);
                assert!((x - y).abs() <= 1e-10 * scale);
            }
        }
    }
}

#[test]
fn zero_frame_padding_never_changes_an_output_element() {
    // Exhaustive sweep over kernel sizes and uniform frames, plus sampled
    // rectangular frames, strides and paddings.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for kh in 1..=5usize {
        for kw in 1..=5usize {
            for frame_w in 0..=2usize {
                let channels = rng.gen_range(1..=3);
                let maps = rng.gen_range(1..=3);
                let stride = [rng.gen_range(1..=2), rng.gen_range(1..=2)];
                let base_pad = rng.gen_range(0..=1);
                let kernel = random_tensor(vec![maps, channels, kh, kw], &mut rng);
                let bias: Vec<f64> = (0..maps).map(|_| rng.gen_range(-0.5..0.5)).collect();
                let layer = ConvLayer::new(
                    kernel,
                    bias,
                    [base_pad; 4],
                    stride,
                    ActivationKind::Identity,
                )
                .unwrap();
                let model = ModelGraph::new(
                    vec![LayerNode::Conv(layer)],
                    vec![channels, 8, 8],
                    DtypeTag::F64,
                )
                .unwrap();
                let frame = if frame_w == 2 {
                    FrameSpec {
                        top: rng.gen_range(0..=2),
                        bottom: rng.gen_range(0..=2),
                        left: rng.gen_range(0..=2),
                        right: rng.gen_range(0..=2),
                    }
                } else {
                    FrameSpec::uniform(frame_w)
                };
                let (obf, _) = base_obfuscate_conv(&model, 0, &frame).unwrap();
                let probes = gen_probes(&[channels, 8, 8], 10, rng.gen());
                let eq = equivalence_report(&model, &obf, &probes).unwrap();
                assert!(
                    eq.max_abs_dev <= 1e-12,
                    "kh={kh} kw={kw} frame={frame:?} stride={stride:?} dev={}",
                    eq.max_abs_dev
                );
            }
        }
    }
}

#[test]
fn spectrum_satisfies_parseval_and_conjugate_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for &len in &[3usize, 16, 129, 500] {
        let weights: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = layer_spectrum(&weights).unwrap();
        let time_energy: f64 = weights.iter().map(|w| w * w).sum();
        let freq_energy: f64 = spec
            .real_part
            .iter()
            .zip(&spec.imag_part)
            .map(|(re, im)| re * re + im * im)
            .sum::<f64>()
            / len as f64;
        assert!(
            (time_energy - freq_energy).abs() <= 1e-8 * time_energy.max(1.0),
            "len {len}"
        );
        for k in 1..len {
            let mirror = len - k;
            assert!((spec.real_part[k] - spec.real_part[mirror]).abs() < 1e-8);
            assert!((spec.imag_part[k] + spec.imag_part[mirror]).abs() < 1e-8);
        }
    }
}

#[test]
fn identity_pair_residuals_hold_across_moderate_sizes() {
    use eclipse_core::linalg::InvertiblePair;
    for n in [2usize, 5, 16, 32] {
        for h in [n + 1, 2 * n] {
            for seed in 0..20 {
                let pair = InvertiblePair::generate(n, h, seed).unwrap();
                assert!(
                    pair.residual() <= 1e-8,
                    "n={n} h={h} seed={seed} residual={}",
                    pair.residual()
                );
            }
        }
    }
}
