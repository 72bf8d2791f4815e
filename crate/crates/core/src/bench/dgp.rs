//! Simulation designs: Gaussian covariates, logistic confounded treatment
//! and Gaussian outcomes with linear or quadratic treated-arm regression.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ObservedData;
use crate::error::{Error, Result};
use crate::nuisance::{OracleNuisance, Predictor};
use crate::rng::{self, TAG_DATA};
use crate::stats::logistic;

/// Propensity slope on the first two covariates.
const PROPENSITY_SLOPE: f64 = 0.35;
const PROPENSITY_OFFSET: f64 = -0.08;
const INTERCEPT1: f64 = 5.0;
const INTERCEPT0: f64 = 3.0;
/// Outcome noise variance is the signal variance over this.
const SIGNAL_TO_NOISE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[default]
    Linear,
    /// Adds `(x^2)' beta12` to the treated-arm regression.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    #[serde(default)]
    pub family: Family,
}

impl DgpConfig {
    pub fn new(n: usize, p: usize, s: usize, family: Family) -> Self {
        DgpConfig { n, p, s, family }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidConfig("p must be at least 1".into()));
        }
        if self.s > self.p {
            return Err(Error::InvalidConfig(format!("s = {} exceeds p = {}", self.s, self.p)));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        Ok(())
    }

    /// `ceil(s/2)` ones, `floor(s/2)` halves, then zeros up to `p`.
    pub fn beta1(&self) -> Vec<f64> {
        beta_pattern(self.p, self.s)
    }

    pub fn beta0(&self) -> Vec<f64> {
        beta_pattern(self.p, self.s)
    }

    pub fn beta3(&self) -> Vec<f64> {
        (0..self.p).map(|j| if j < 2 { PROPENSITY_SLOPE } else { 0.0 }).collect()
    }

    /// Quadratic coefficients; empty for the linear family.
    pub fn beta12(&self) -> Vec<f64> {
        match self.family {
            Family::Linear => Vec::new(),
            Family::Quadratic => build_quadratic_truth(self.p, self.s).0,
        }
    }

    /// Noise variance of `Y(1)`: `Var(m1(X)) / 5`.
    pub fn sigma2_1(&self) -> f64 {
        let lin = 4.0 * sum_sq(&self.beta1());
        let quad = 2.0 * sum_sq(&self.beta12());
        (lin + quad) / SIGNAL_TO_NOISE
    }

    pub fn sigma2_0(&self) -> f64 {
        sum_sq(&self.beta0()) / SIGNAL_TO_NOISE
    }

    pub fn true_ate(&self) -> f64 {
        INTERCEPT1 - INTERCEPT0 + self.beta12().iter().sum::<f64>()
    }

    pub fn true_mu1(&self) -> f64 {
        INTERCEPT1 + self.beta12().iter().sum::<f64>()
    }

    pub fn true_mu0(&self) -> f64 {
        INTERCEPT0
    }

    /// True regressions, propensity and `P(T = 1)`.
    pub fn truth(&self) -> OracleNuisance {
        let m1 = Predictor {
            intercept: INTERCEPT1,
            linear: self.beta1().iter().map(|b| 2.0 * b).collect(),
            quadratic: self.beta12(),
        };
        let m0 = Predictor { intercept: INTERCEPT0, linear: self.beta0(), quadratic: Vec::new() };
        let propensity_logit = Predictor { intercept: PROPENSITY_OFFSET, linear: self.beta3(), quadratic: Vec::new() };
        let sd = sum_sq(&self.beta3()).sqrt();
        OracleNuisance { m1, m0, propensity_logit, p1: expected_logistic(PROPENSITY_OFFSET, sd) }
    }
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|b| b * b).sum()
}

fn beta_pattern(p: usize, s: usize) -> Vec<f64> {
    let ones = s.div_ceil(2);
    (0..p)
        .map(|j| {
            if j < ones {
                1.0
            } else if j < s {
                0.5
            } else {
                0.0
            }
        })
        .collect()
}

/// `E[logistic(a + sd Z)]`, `Z ~ N(0, 1)`, by composite Simpson on
/// `[-12, 12]`.
fn expected_logistic(a: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return logistic(a);
    }
    let steps = 4000;
    let h = 24.0 / steps as f64;
    let f = |z: f64| logistic(a + sd * z) * (-0.5 * z * z).exp();
    let mut acc = f(-12.0) + f(12.0);
    for i in 1..steps {
        let z = -12.0 + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(z);
    }
    acc * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
}

/// Quadratic coefficients on the support of `beta1`, proportional to its
/// pattern and scaled so `Var(2 X'beta1) = 3 Var((X^2)'beta12)`; returns
/// them with the implied ATE.
pub fn build_quadratic_truth(p: usize, s: usize) -> (Vec<f64>, f64) {
    let b1 = beta_pattern(p, s);
    let ss = sum_sq(&b1);
    if ss == 0.0 {
        return (vec![0.0; p], INTERCEPT1 - INTERCEPT0);
    }
    // 2 sum(b12^2) = (4/3) sum(b1^2) because Var(X_j^2) = 2.
    let scale = (2.0 / 3.0f64).sqrt();
    let b12: Vec<f64> = b1.iter().map(|b| b * scale).collect();
    let ate = INTERCEPT1 - INTERCEPT0 + b12.iter().sum::<f64>();
    (b12, ate)
}

/// One dataset from the design plus the truth used to generate it.
pub fn generate_dgp(cfg: &DgpConfig, rep_seed: u64) -> Result<(ObservedData, OracleNuisance)> {
    cfg.validate()?;
    let truth = cfg.truth();
    let sd1 = cfg.sigma2_1().sqrt();
    let sd0 = cfg.sigma2_0().sqrt();
    let noise1 = Normal::new(0.0, sd1).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let noise0 = Normal::new(0.0, sd0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = rng::stream(rep_seed, &[TAG_DATA]);
    let (n, p) = (cfg.n, cfg.p);
    let mut x = Vec::with_capacity(n * p);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let start = x.len();
        x.extend((0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let row = &x[start..];
        let e = logistic(truth.propensity_logit.eval(row));
        let treated = rng.random::<f64>() < e;
        t.push(u8::from(treated));
        y.push(if treated {
            truth.m1.eval(row) + noise1.sample(&mut rng)
        } else {
            truth.m0.eval(row) + noise0.sample(&mut rng)
        });
    }
    Ok((ObservedData::new(y, t, x, p)?, truth))
}
