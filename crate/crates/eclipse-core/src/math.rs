//! Scalar helpers routed through `libm` so the crate builds without `std`.

pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub(crate) fn cos(x: f64) -> f64 {
    libm::cos(x)
}

pub(crate) fn sin(x: f64) -> f64 {
    libm::sin(x)
}

pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

/// Population standard deviation; 0.0 for an empty slice.
pub(crate) fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    sqrt(var)
}

pub(crate) fn median_abs(values: &[f64]) -> f64 {
    let mut mags: alloc::vec::Vec<f64> = values.iter().map(|v| abs(*v)).collect();
    mags.sort_unstable_by(|a, b| a.partial_cmp(b).expect("weight magnitudes are ordered"));
    let n = mags.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        mags[n / 2]
    } else {
        0.5 * (mags[n / 2 - 1] + mags[n / 2])
    }
}

pub(crate) fn min_abs(values: &[f64]) -> f64 {
    values.iter().map(|v| abs(*v)).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std_matches_hand_value() {
        // diffs of [0,1,0,1] -> [1,-1,1], std = sqrt(8/9)
        let d = [1.0, -1.0, 1.0];
        assert!((population_std(&d) - (8.0f64 / 9.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn median_abs_even_and_odd() {
        assert_eq!(median_abs(&[-3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median_abs(&[-4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn min_abs_ignores_sign() {
        assert_eq!(min_abs(&[-0.5, 2.0, -3.0]), 0.5);
    }
}
