//! Frequentist reference estimators: the efficient-influence-function mean
//! with true nuisances, and the unadjusted difference in means.

use crate::data::ObservedData;
use crate::error::{Error, Result};
use crate::nuisance::{NuisanceDraw, OracleNuisance};
use crate::stats;

/// Point estimate with a two-sided interval; `ci` is `None` when the
/// standard error is undefined (too few rows).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalEstimate {
    pub estimate: f64,
    pub ci: Option<[f64; 2]>,
}

/// `m1(x) - m0(x) + t (y - m1(x)) / e(x) - (1 - t) (y - m0(x)) / (1 - e(x))`.
pub fn eif_gamma(y: f64, t: u8, x: &[f64], m1: &NuisanceDraw, m0: &NuisanceDraw, e: &NuisanceDraw) -> f64 {
    let (f1, f0) = (m1.eval(x), m0.eval(x));
    let plug_in = f1 - f0;
    if t == 1 {
        plug_in + (y - f1) / e.eval(x)
    } else {
        plug_in - (y - f0) / (1.0 - e.eval(x))
    }
}

/// EIF values of `rows` under the true nuisances.
pub fn eif_values(data: &ObservedData, truth: &OracleNuisance, rows: impl IntoIterator<Item = usize>) -> Vec<f64> {
    let (m1, m0, e) = (truth.draw_m1(), truth.draw_m0(), truth.draw_e());
    rows.into_iter().map(|i| eif_gamma(data.y()[i], data.t()[i], data.x_row(i), &m1, &m0, &e)).collect()
}

/// Mean of the EIF values with a normal-approximation interval.
pub fn oracle_estimator(data: &ObservedData, truth: &OracleNuisance, alpha: f64) -> IntervalEstimate {
    let gamma = eif_values(data, truth, 0..data.n());
    let estimate = stats::mean(&gamma);
    let z = stats::z_quantile(1.0 - alpha / 2.0);
    let ci = stats::sample_variance(&gamma).map(|v| {
        let half = z * (v / gamma.len() as f64).sqrt();
        [estimate - half, estimate + half]
    });
    IntervalEstimate { estimate, ci }
}

/// Difference in arm means with a Welch-type normal interval.
pub fn naive_estimator(data: &ObservedData, alpha: f64) -> Result<IntervalEstimate> {
    let (mut y1, mut y0) = (Vec::new(), Vec::new());
    for (&y, &t) in data.y().iter().zip(data.t()) {
        if t == 1 {
            y1.push(y);
        } else {
            y0.push(y);
        }
    }
    for (arm, ys) in [(1u8, &y1), (0u8, &y0)] {
        if ys.is_empty() {
            return Err(Error::EmptyArm { arm });
        }
    }
    let estimate = stats::mean(&y1) - stats::mean(&y0);
    let z = stats::z_quantile(1.0 - alpha / 2.0);
    let ci = stats::sample_variance(&y1).zip(stats::sample_variance(&y0)).map(|(v1, v0)| {
        let half = z * (v1 / y1.len() as f64 + v0 / y0.len() as f64).sqrt();
        [estimate - half, estimate + half]
    });
    Ok(IntervalEstimate { estimate, ci })
}
