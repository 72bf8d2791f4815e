//! Small descriptive-statistics helpers.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sum of squared deviations from the (two-pass) mean.
pub fn sum_sq_dev(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    let ss = v.iter().map(|x| (x - m) * (x - m)).sum();
    (m, ss)
}

/// Unbiased sample variance; `None` below two observations.
pub fn sample_variance(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let (_, ss) = sum_sq_dev(v);
    Some(ss / (v.len() - 1) as f64)
}

/// Linear-interpolation quantile of an ascending-sorted slice
/// (the "type 7" rule used by R and numpy).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s
}

/// Standard normal quantile.
pub fn z_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn z_quantile_matches_table() {
        assert!((z_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-9);
    }

    #[test]
    fn logistic_is_symmetric() {
        for z in [-30.0, -2.5, 0.0, 0.7, 40.0] {
            assert!((logistic(z) + logistic(-z) - 1.0).abs() < 1e-15);
        }
        assert_eq!(logistic(0.0), 0.5);
    }
}
