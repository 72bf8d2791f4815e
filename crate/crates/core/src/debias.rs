//! Density ratios, weighted observables and the closed-form Student-t
//! posteriors for the nuisance bias and for the target given the bias.
//!
//! Both posteriors come from a Normal working model with unknown variance
//! under the improper prior `p(mean, s2) ∝ 1/s2`, whose marginal for the
//! mean is `t_{n-1}(sample mean, sum of squares / (n (n - 1)))`.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ArmSubset;
use crate::error::{Error, Result};
use crate::nuisance::NuisanceDraw;

/// Which potential-outcome functional a fold posterior targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contrast {
    /// `E[Y(1)] - E[Y(0)]` (or a reweighted version of it).
    Difference,
    /// `E[Y(1)]`.
    Treated,
    /// `E[Y(0)]`.
    Control,
}

impl Contrast {
    pub fn uses_arm(self, arm: u8) -> bool {
        match self {
            Contrast::Difference => true,
            Contrast::Treated => arm == 1,
            Contrast::Control => arm == 0,
        }
    }
}

/// Location-scale Student-t law `t_nu(eta, c2)`; `c2 == 0` is a point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TPosterior {
    pub nu: f64,
    pub eta: f64,
    pub c2: f64,
}

impl TPosterior {
    pub fn point_mass(eta: f64, nu: f64) -> Self {
        TPosterior { nu, eta, c2: 0.0 }
    }

    pub fn is_point_mass(&self) -> bool {
        self.c2 == 0.0
    }

    /// `None` (moment undefined) when `nu <= 1`.
    pub fn mean(&self) -> Option<f64> {
        (self.is_point_mass() || self.nu > 1.0).then_some(self.eta)
    }

    /// `c2 nu / (nu - 2)`; `None` (moment undefined) when `nu <= 2`.
    pub fn variance(&self) -> Option<f64> {
        if self.is_point_mass() {
            Some(0.0)
        } else if self.nu > 2.0 {
            Some(self.c2 * self.nu / (self.nu - 2.0))
        } else {
            None
        }
    }

    pub fn shifted(self, by: f64) -> Self {
        TPosterior { eta: self.eta + by, ..self }
    }

    /// `eta + c * Z / sqrt(V / nu)` with `Z ~ N(0, 1)`, `V ~ chi2(nu)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.is_point_mass() {
            return self.eta;
        }
        self.eta + self.c2.sqrt() * standard_t(self.nu, rng)
    }
}

pub fn standard_t<R: Rng + ?Sized>(nu: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let v = ChiSquared::new(nu).expect("nu > 0").sample(rng);
    z / (v / nu).sqrt()
}

/// Retargeting ratios built from one propensity draw and one `p1_hat`:
/// `r1(x) = p1 / e(x)`, `r0(x) = (1 - p1) / (1 - e(x))`.
#[derive(Debug, Clone)]
pub struct DensityRatioPair {
    pub e: NuisanceDraw,
    pub p1_hat: f64,
}

impl DensityRatioPair {
    pub fn r1(&self, x: &[f64]) -> f64 {
        self.p1_hat / self.e.eval(x)
    }

    pub fn r0(&self, x: &[f64]) -> f64 {
        (1.0 - self.p1_hat) / (1.0 - self.e.eval(x))
    }

    pub fn for_arm(&self, arm: u8, x: &[f64]) -> f64 {
        if arm == 1 {
            self.r1(x)
        } else {
            self.r0(x)
        }
    }
}

pub fn density_ratio(e_draw: &NuisanceDraw, p1_hat: f64) -> Result<DensityRatioPair> {
    if !e_draw.is_propensity() {
        return Err(Error::InvalidConfig("density ratio needs a propensity draw".into()));
    }
    if !(p1_hat > 0.0 && p1_hat < 1.0) {
        return Err(Error::InvalidConfig(format!("p1_hat must lie in (0, 1), got {p1_hat}")));
    }
    Ok(DensityRatioPair { e: e_draw.clone(), p1_hat })
}

/// `W_i = r(X_i) (Y_i - m(X_i))` over one arm of a test fold, in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedObservables {
    pub values: Vec<f64>,
    pub arm: u8,
}

pub fn weighted_observables(
    test_arm: &ArmSubset<'_>,
    m_draw: &NuisanceDraw,
    r: impl Fn(&[f64]) -> f64,
) -> Result<WeightedObservables> {
    if test_arm.is_empty() {
        return Err(Error::EmptyArm { arm: test_arm.arm });
    }
    let data = test_arm.parent;
    let values = test_arm
        .indices
        .iter()
        .map(|&i| {
            let x = data.x_row(i);
            r(x) * (data.y()[i] - m_draw.eval(x))
        })
        .collect();
    Ok(WeightedObservables { values, arm: test_arm.arm })
}

/// Marginal posterior of the mean of i.i.d. Normal values with unknown
/// variance; all-equal input gives a point mass at the common value.
fn mean_posterior(values: &[f64]) -> Result<TPosterior> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    let nu = (n - 1) as f64;
    if values.iter().all(|&v| v == values[0]) {
        return Ok(TPosterior::point_mass(values[0], nu));
    }
    let eta = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - eta) * (v - eta)).sum();
    Ok(TPosterior { nu, eta, c2: ss / (n as f64 * nu) })
}

/// Posterior of the arm bias from its weighted observables.
pub fn bias_posterior(w: &WeightedObservables) -> Result<TPosterior> {
    mean_posterior(&w.values)
}

/// Posterior of the target given bias `b`, from the draws `m(X_i)` over the
/// whole test fold: `t_{n-1}(mean + b, ss / (n (n - 1)))`.
pub fn conditional_posterior(m_values: &[f64], b: f64) -> Result<TPosterior> {
    Ok(mean_posterior(m_values)?.shifted(b))
}

/// One draw from `post` (point masses return their location).
pub fn sample_t<R: Rng + ?Sized>(post: &TPosterior, rng: &mut R) -> f64 {
    post.sample(rng)
}
