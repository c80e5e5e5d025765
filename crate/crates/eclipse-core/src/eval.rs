//! Functional comparison of two models over a probe set.

use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::Result;
use crate::graph::ModelGraph;
use crate::math;
use crate::rng;
use crate::tensor::Tensor;

/// Agreement statistics between two models on a shared probe set.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Equivalence {
    /// Max over probes of the infinity norm of the output difference.
    pub max_abs_dev: f64,
    /// Fraction of probes on which the output argmax agrees.
    pub top1_agreement: f64,
}

/// Seeded probe tensors with i.i.d. uniform [-1, 1] entries.
pub fn gen_probes(shape: &[usize], count: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = rng::new_rng(seed);
    let len: usize = shape.iter().product();
    (0..count)
        .map(|_| {
            let data = (0..len).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            Tensor::new(shape.to_vec(), data).expect("probe shape is valid")
        })
        .collect()
}

/// Compare two models element-wise and by argmax over the probes.
pub fn equivalence_report(
    m1: &ModelGraph,
    m2: &ModelGraph,
    probes: &[Tensor],
) -> Result<Equivalence> {
    let mut max_abs_dev = 0.0f64;
    let mut agree = 0usize;
    for probe in probes {
        let y1 = m1.forward(probe)?;
        let y2 = m2.forward(probe)?;
        let pairs = y1.len().max(y2.len());
        for i in 0..pairs {
            let a = y1.get(i).copied().unwrap_or(0.0);
            let b = y2.get(i).copied().unwrap_or(0.0);
            max_abs_dev = max_abs_dev.max(math::abs(a - b));
        }
        if argmax(&y1) == argmax(&y2) {
            agree += 1;
        }
    }
    Ok(Equivalence {
        max_abs_dev,
        top1_agreement: if probes.is_empty() {
            1.0
        } else {
            agree as f64 / probes.len() as f64
        },
    })
}

/// Index of the first maximal element.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{linear_model, DtypeTag};
    use crate::layer::{ActivationKind, LinearLayer};
    use crate::linalg::Mat;

    fn toy_model(bias_shift: f64) -> ModelGraph {
        let w = Mat::new(3, 3, alloc::vec![0.2, -0.4, 0.1, 0.7, 0.3, -0.2, 0.0, 0.5, 0.9]).unwrap();
        let mut bias = alloc::vec![0.0, 0.1, -0.1];
        bias[2] += bias_shift;
        linear_model(
            LinearLayer::new(w, bias, ActivationKind::Identity).unwrap(),
            DtypeTag::F64,
        )
        .unwrap()
    }

    #[test]
    fn identical_models_agree_exactly() {
        let m = toy_model(0.0);
        let probes = gen_probes(&[3], 50, 1);
        let eq = equivalence_report(&m, &m, &probes).unwrap();
        assert_eq!(eq.max_abs_dev, 0.0);
        assert_eq!(eq.top1_agreement, 1.0);
    }

    #[test]
    fn bias_perturbation_shows_up_in_max_dev() {
        let m1 = toy_model(0.0);
        let m2 = toy_model(1.0);
        let probes = gen_probes(&[3], 20, 2);
        let eq = equivalence_report(&m1, &m2, &probes).unwrap();
        assert!(eq.max_abs_dev >= 1.0 - 1e-12);
    }

    #[test]
    fn probes_are_seed_deterministic() {
        let a = gen_probes(&[4], 3, 11);
        let b = gen_probes(&[4], 3, 11);
        assert_eq!(a, b);
        let c = gen_probes(&[4], 3, 12);
        assert_ne!(a, c);
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }
}
