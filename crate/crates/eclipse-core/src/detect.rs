//! Frequency-domain detection of likely-watermarked layers.
//!
//! Each eligible layer's flattened weights go through an exact DFT; a simple
//! moving average of the real and imaginary series is scored by the standard
//! deviation of its successive differences. Embedded layers show a flatter
//! average change, so the lowest-volatility quantile is flagged. The scoring
//! trims 2% of each spectrum end, where extreme-bin jumps would otherwise
//! dominate.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::math;

/// Exact discrete Fourier transform of a real weight vector.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrequencySpectrum {
    pub real_part: Vec<f64>,
    pub imag_part: Vec<f64>,
}

impl FrequencySpectrum {
    pub fn len(&self) -> usize {
        self.real_part.len()
    }

    pub fn is_empty(&self) -> bool {
        self.real_part.is_empty()
    }
}

/// Simple moving average of a series with its window size.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SmaSeries {
    pub values: Vec<f64>,
    pub window: usize,
}

/// Per-layer detector output.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyReport {
    pub layer_index: usize,
    pub kind: &'static str,
    /// Spectrum length (flattened weight count).
    pub f: usize,
    /// Window actually used after clamping to the scored series length.
    pub r_used: usize,
    /// True when `r_used` differs from the requested window.
    pub clamped: bool,
    pub spectrum: FrequencySpectrum,
    pub sma_real: SmaSeries,
    pub sma_imag: SmaSeries,
    pub vol_real: f64,
    pub vol_imag: f64,
    pub flagged: bool,
}

/// Detector output: flagged layer indices plus the per-layer reports and the
/// quantile cutoffs that produced them.
#[derive(Debug, Clone)]
pub struct DetectionOutcome {
    pub flagged: Vec<usize>,
    pub reports: Vec<FrequencyReport>,
    pub window: usize,
    pub quantile: f64,
    pub cutoff_real: f64,
    pub cutoff_imag: f64,
}

/// Paper-default moving-average window.
pub const DEFAULT_WINDOW: usize = 1000;
/// Flag the lowest-volatility quartile by default.
pub const DEFAULT_QUANTILE: f64 = 0.25;
/// Fraction trimmed from each spectrum end before scoring.
pub const TRIM_FRACTION: f64 = 0.02;

/// Direct O(f^2) DFT. Bin `k` is `sum_j w[j] * e^(-2*pi*i*j*k/f)`; twiddles
/// come from a precomputed table at angle `2*pi*((j*k) mod f)/f`.
pub fn layer_spectrum(weights: &[f64]) -> Result<FrequencySpectrum> {
    let f = weights.len();
    if f == 0 {
        return Err(Error::EmptyInput);
    }
    let step = 2.0 * core::f64::consts::PI / f as f64;
    let mut cos_table = Vec::with_capacity(f);
    let mut sin_table = Vec::with_capacity(f);
    for r in 0..f {
        cos_table.push(math::cos(step * r as f64));
        sin_table.push(math::sin(step * r as f64));
    }
    let mut real_part = Vec::with_capacity(f);
    let mut imag_part = Vec::with_capacity(f);
    for k in 0..f {
        let mut re = 0.0;
        let mut im = 0.0;
        let mut idx = 0usize;
        for &w in weights {
            re += w * cos_table[idx];
            im -= w * sin_table[idx];
            idx += k;
            if idx >= f {
                idx -= f;
            }
        }
        real_part.push(re);
        imag_part.push(im);
    }
    Ok(FrequencySpectrum {
        real_part,
        imag_part,
    })
}

/// Sliding mean with window `r`; output length is `len - r + 1`.
pub fn sma(series: &[f64], r: usize) -> Result<SmaSeries> {
    if r == 0 || r > series.len() {
        return Err(Error::WindowTooLarge {
            window: r,
            len: series.len(),
        });
    }
    let count = series.len() - r + 1;
    let mut values = Vec::with_capacity(count);
    for start in 0..count {
        let sum: f64 = series[start..start + r].iter().sum();
        values.push(sum / r as f64);
    }
    Ok(SmaSeries { values, window: r })
}

/// Population standard deviation of the first differences of the series.
pub fn volatility_score(series: &SmaSeries) -> Result<f64> {
    if series.values.len() < 2 {
        return Err(Error::SeriesTooShort {
            len: series.values.len(),
        });
    }
    let diffs: Vec<f64> = series
        .values
        .windows(2)
        .map(|w| w[1] - w[0])
        .collect();
    Ok(math::population_std(&diffs))
}

/// Score one layer's flattened weights: spectrum, trimmed moving averages,
/// and the volatility of both parts. The window is clamped so the series
/// keeps at least two points; a series too short to difference scores 0.
pub fn score_layer(
    layer_index: usize,
    kind: &'static str,
    weights: &[f64],
    window: usize,
) -> Result<FrequencyReport> {
    let spectrum = layer_spectrum(weights)?;
    let f = spectrum.len();
    let trim = ((f as f64) * TRIM_FRACTION) as usize;
    let scored_len = f.saturating_sub(2 * trim).max(1);
    let r_used = window.min(scored_len.saturating_sub(1)).max(1);
    let score = |series: &[f64]| -> Result<(SmaSeries, f64)> {
        let trimmed = &series[trim..trim + scored_len];
        let averaged = sma(trimmed, r_used)?;
        let vol = match volatility_score(&averaged) {
            Ok(v) => v,
            Err(Error::SeriesTooShort { .. }) => 0.0,
            Err(e) => return Err(e),
        };
        Ok((averaged, vol))
    };
    let (sma_real, vol_real) = score(&spectrum.real_part)?;
    let (sma_imag, vol_imag) = score(&spectrum.imag_part)?;
    Ok(FrequencyReport {
        layer_index,
        kind,
        f,
        r_used,
        clamped: r_used != window,
        spectrum,
        sma_real,
        sma_imag,
        vol_real,
        vol_imag,
        flagged: false,
    })
}

/// Mark the lowest-volatility quantile in a set of scored reports and
/// assemble the outcome. A layer is flagged when either part's score lands
/// in the lowest `ceil(q * L)`; order of the input reports is preserved.
pub fn flag_reports(
    mut reports: Vec<FrequencyReport>,
    window: usize,
    quantile: f64,
) -> Result<DetectionOutcome> {
    if reports.is_empty() {
        return Err(Error::EmptyInput);
    }
    let count = reports.len();
    let take = (math::ceil(quantile * count as f64) as usize).clamp(1, count);
    let lowest = |key: fn(&FrequencyReport) -> f64| -> (Vec<usize>, f64) {
        let mut order: Vec<usize> = (0..count).collect();
        order.sort_unstable_by(|&a, &b| {
            key(&reports[a])
                .partial_cmp(&key(&reports[b]))
                .expect("volatility scores are finite")
                .then(reports[a].layer_index.cmp(&reports[b].layer_index))
        });
        let cutoff = key(&reports[order[take - 1]]);
        (order[..take].to_vec(), cutoff)
    };
    let (low_real, cutoff_real) = lowest(|r| r.vol_real);
    let (low_imag, cutoff_imag) = lowest(|r| r.vol_imag);
    for i in low_real.iter().chain(low_imag.iter()) {
        reports[*i].flagged = true;
    }

    let flagged = reports
        .iter()
        .filter(|r| r.flagged)
        .map(|r| r.layer_index)
        .collect();
    Ok(DetectionOutcome {
        flagged,
        reports,
        window,
        quantile,
        cutoff_real,
        cutoff_imag,
    })
}

/// Score every eligible layer and flag the lowest-volatility quantile. With
/// a single eligible layer the quantile degenerates and that layer is
/// flagged.
pub fn detect_watermarked_layers(
    model: &ModelGraph,
    window: usize,
    quantile: f64,
) -> Result<DetectionOutcome> {
    let mut reports = Vec::new();
    for (index, node) in model.layers().iter().enumerate() {
        let Some(weights) = node.flat_weights() else {
            continue;
        };
        reports.push(score_layer(index, node.kind(), weights, window)?);
    }
    flag_reports(reports, window, quantile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{linear_model, DtypeTag};
    use crate::layer::{ActivationKind, LinearLayer};
    use crate::linalg::Mat;

    #[test]
    fn constant_vector_has_dc_only_spectrum() {
        let c = 2.5;
        let f = 8;
        let spec = layer_spectrum(&vec![c; f]).unwrap();
        assert!((spec.real_part[0] - c * f as f64).abs() < 1e-9);
        for k in 1..f {
            assert!(spec.real_part[k].abs() < 1e-9);
        }
        for k in 0..f {
            assert!(spec.imag_part[k].abs() < 1e-9);
        }
    }

    #[test]
    fn unit_impulse_is_flat() {
        let spec = layer_spectrum(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        for k in 0..4 {
            assert!((spec.real_part[k] - 1.0).abs() < 1e-12);
            assert!(spec.imag_part[k].abs() < 1e-12);
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        assert_eq!(layer_spectrum(&[]).unwrap_err(), Error::EmptyInput);
    }

    #[test]
    fn sma_matches_hand_computation() {
        let s = sma(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(s.values, vec![1.5, 2.5, 3.5]);
    }

    #[test]
    fn sma_window_one_is_identity() {
        let series = [0.5, -1.0, 2.0];
        assert_eq!(sma(&series, 1).unwrap().values, series.to_vec());
    }

    #[test]
    fn sma_rejects_oversized_window() {
        assert!(matches!(
            sma(&[1.0, 2.0], 3),
            Err(Error::WindowTooLarge { window: 3, len: 2 })
        ));
        assert!(matches!(sma(&[1.0], 0), Err(Error::WindowTooLarge { .. })));
    }

    #[test]
    fn volatility_of_constant_and_ramp_is_zero() {
        let constant = SmaSeries {
            values: vec![2.0; 5],
            window: 1,
        };
        assert_eq!(volatility_score(&constant).unwrap(), 0.0);
        let ramp = SmaSeries {
            values: vec![0.0, 1.0, 2.0, 3.0],
            window: 1,
        };
        assert_eq!(volatility_score(&ramp).unwrap(), 0.0);
    }

    #[test]
    fn volatility_matches_hand_value() {
        let s = SmaSeries {
            values: vec![0.0, 1.0, 0.0, 1.0],
            window: 1,
        };
        let v = volatility_score(&s).unwrap();
        assert!((v - 0.9428090415820634).abs() < 1e-12);
    }

    #[test]
    fn volatility_needs_two_points() {
        let s = SmaSeries {
            values: vec![1.0],
            window: 1,
        };
        assert!(matches!(
            volatility_score(&s),
            Err(Error::SeriesTooShort { len: 1 })
        ));
    }

    #[test]
    fn single_layer_model_is_flagged() {
        let layer = LinearLayer::new(
            Mat::new(4, 4, (0..16).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap(),
            vec![0.0; 4],
            ActivationKind::Identity,
        )
        .unwrap();
        let model = linear_model(layer, DtypeTag::F64).unwrap();
        let out = detect_watermarked_layers(&model, 1000, 0.25).unwrap();
        assert_eq!(out.flagged, vec![0]);
        assert!(out.reports[0].clamped);
        assert!(out.reports[0].r_used < 1000);
    }
}
