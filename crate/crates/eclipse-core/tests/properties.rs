//! Property tests for the spec-level invariants of the detector and the
//! signature similarity metric.

use eclipse_core::detect::{sma, volatility_score, SmaSeries};
use eclipse_core::tensor::Tensor;
use eclipse_core::watermark::{similarity, SignatureMessage};

use proptest::prelude::*;

proptest! {
    #[test]
    fn sma_output_length_is_len_minus_window_plus_one(
        series in prop::collection::vec(-100.0f64..100.0, 1..200),
        window in 1usize..200,
    ) {
        prop_assume!(window <= series.len());
        let out = sma(&series, window).unwrap();
        prop_assert_eq!(out.values.len(), series.len() - window + 1);
    }

    #[test]
    fn volatility_is_scale_covariant(
        values in prop::collection::vec(-10.0f64..10.0, 2..64),
        alpha in -8.0f64..8.0,
    ) {
        let base = SmaSeries { values: values.clone(), window: 1 };
        let scaled = SmaSeries {
            values: values.iter().map(|v| alpha * v).collect(),
            window: 1,
        };
        let v0 = volatility_score(&base).unwrap();
        let v1 = volatility_score(&scaled).unwrap();
        prop_assert!((v1 - alpha.abs() * v0).abs() <= 1e-9 * (1.0 + v0));
    }

    #[test]
    fn similarity_is_symmetric_and_reflexive(
        a in prop::collection::vec(0u8..2, 1..64),
        b in prop::collection::vec(0u8..2, 1..64),
    ) {
        let ma = SignatureMessage::new(a.clone()).unwrap();
        prop_assert_eq!(similarity(&ma, &ma).unwrap(), 1.0);
        if a.len() == b.len() {
            let mb = SignatureMessage::new(b).unwrap();
            prop_assert_eq!(
                similarity(&ma, &mb).unwrap(),
                similarity(&mb, &ma).unwrap()
            );
        }
    }

    #[test]
    fn tensor_flatten_preserves_data(
        dims in prop::collection::vec(1usize..5, 1..4),
    ) {
        let len: usize = dims.iter().product();
        let data: Vec<f64> = (0..len).map(|i| i as f64).collect();
        let t = Tensor::new(dims, data.clone()).unwrap();
        let flat = t.flattened();
        prop_assert_eq!(flat.data(), &data[..]);
    }
}
