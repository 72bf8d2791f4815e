//! Weighted estimands: ATT, ATC and covariate-threshold subgroups, plus the
//! plain ATE and arm means they reduce to.
//!
//! A target population `A` enters through the weight
//! `w(x) = P(A | x) / P(A)` on the conditional-posterior values and the
//! arm ratios `r_t(x) = P(A | x) P(T = t) / (P(A) P(T = t | x))`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::ObservedData;
use crate::debias::Contrast;
use crate::drdb::{self, FoldWeights, PosteriorSummary, RunConfig, WeightPath};
use crate::error::{Error, Result};
use crate::nuisance::NuisanceDraw;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `x_j > threshold`
    Above,
    /// `x_j <= threshold`
    AtMost,
}

/// Subgroup `x_j > threshold` or `x_j <= threshold`; `covariate` is the
/// 1-based position of the column among the covariates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgroupRule {
    pub covariate: usize,
    pub threshold: f64,
    pub direction: Direction,
}

impl SubgroupRule {
    pub fn holds(&self, x: &[f64]) -> bool {
        let v = x[self.covariate - 1];
        match self.direction {
            Direction::Above => v > self.threshold,
            Direction::AtMost => v <= self.threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum EstimandSpec {
    #[default]
    Ate,
    Mu1,
    Mu0,
    Att,
    Atc,
    Subgroup(SubgroupRule),
}

impl EstimandSpec {
    pub fn contrast(&self) -> Contrast {
        match self {
            EstimandSpec::Mu1 => Contrast::Treated,
            EstimandSpec::Mu0 => Contrast::Control,
            _ => Contrast::Difference,
        }
    }

    /// True for targets whose weights are the plain density ratios.
    pub fn is_plain(&self) -> bool {
        matches!(self, EstimandSpec::Ate | EstimandSpec::Mu1 | EstimandSpec::Mu0)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if let EstimandSpec::Subgroup(rule) = self {
            if rule.covariate == 0 || rule.covariate > p {
                return Err(Error::InvalidConfig(format!(
                    "subgroup covariate x{} does not exist (p = {p})",
                    rule.covariate
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for EstimandSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimandSpec::Ate => f.write_str("ate"),
            EstimandSpec::Mu1 => f.write_str("mu1"),
            EstimandSpec::Mu0 => f.write_str("mu0"),
            EstimandSpec::Att => f.write_str("att"),
            EstimandSpec::Atc => f.write_str("atc"),
            EstimandSpec::Subgroup(r) => {
                let op = match r.direction {
                    Direction::Above => ">",
                    Direction::AtMost => "<=",
                };
                write!(f, "subgroup:x{}{op}{}", r.covariate, r.threshold)
            }
        }
    }
}

impl FromStr for EstimandSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown estimand `{s}`"));
        match s.trim() {
            "ate" => Ok(EstimandSpec::Ate),
            "mu1" => Ok(EstimandSpec::Mu1),
            "mu0" => Ok(EstimandSpec::Mu0),
            "att" => Ok(EstimandSpec::Att),
            "atc" => Ok(EstimandSpec::Atc),
            other => {
                let rule = other.strip_prefix("subgroup:").ok_or_else(bad)?;
                let (lhs, direction, rhs) = if let Some((l, r)) = rule.split_once("<=") {
                    (l, Direction::AtMost, r)
                } else if let Some((l, r)) = rule.split_once('>') {
                    (l, Direction::Above, r)
                } else {
                    return Err(bad());
                };
                let covariate = lhs
                    .trim()
                    .strip_prefix('x')
                    .and_then(|j| j.parse::<usize>().ok())
                    .filter(|&j| j >= 1)
                    .ok_or_else(bad)?;
                let threshold = rhs.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad)?;
                Ok(EstimandSpec::Subgroup(SubgroupRule { covariate, threshold, direction }))
            }
        }
    }
}

impl Serialize for EstimandSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EstimandSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Weights for one fold, evaluated lazily per row.
#[derive(Debug, Clone)]
pub struct TargetWeights {
    pub spec: EstimandSpec,
    pub e: NuisanceDraw,
    pub p1_hat: f64,
    /// Estimate of `P(A)`; `p1_hat` for ATT, `1 - p1_hat` for ATC, 1 for
    /// the whole population.
    pub pa_hat: f64,
}

impl TargetWeights {
    /// `w(x) = P(A | x) / P(A)`.
    pub fn w(&self, x: &[f64]) -> f64 {
        match self.spec {
            EstimandSpec::Ate | EstimandSpec::Mu1 | EstimandSpec::Mu0 => 1.0,
            EstimandSpec::Att => self.e.eval(x) / self.p1_hat,
            EstimandSpec::Atc => (1.0 - self.e.eval(x)) / (1.0 - self.p1_hat),
            EstimandSpec::Subgroup(rule) => indicator(&rule, x) / self.pa_hat,
        }
    }

    pub fn r1(&self, x: &[f64]) -> f64 {
        match self.spec {
            EstimandSpec::Ate | EstimandSpec::Mu1 | EstimandSpec::Mu0 => self.p1_hat / self.e.eval(x),
            EstimandSpec::Att => 1.0,
            EstimandSpec::Atc => {
                let e = self.e.eval(x);
                (1.0 - e) * self.p1_hat / ((1.0 - self.p1_hat) * e)
            }
            EstimandSpec::Subgroup(rule) => indicator(&rule, x) * self.p1_hat / (self.pa_hat * self.e.eval(x)),
        }
    }

    pub fn r0(&self, x: &[f64]) -> f64 {
        match self.spec {
            EstimandSpec::Ate | EstimandSpec::Mu1 | EstimandSpec::Mu0 => (1.0 - self.p1_hat) / (1.0 - self.e.eval(x)),
            EstimandSpec::Att => {
                let e = self.e.eval(x);
                e * (1.0 - self.p1_hat) / (self.p1_hat * (1.0 - e))
            }
            EstimandSpec::Atc => 1.0,
            EstimandSpec::Subgroup(rule) => {
                indicator(&rule, x) * (1.0 - self.p1_hat) / (self.pa_hat * (1.0 - self.e.eval(x)))
            }
        }
    }
}

fn indicator(rule: &SubgroupRule, x: &[f64]) -> f64 {
    if rule.holds(x) {
        1.0
    } else {
        0.0
    }
}

impl FoldWeights for TargetWeights {
    fn target_weight(&self, x: &[f64]) -> f64 {
        self.w(x)
    }

    fn ratio(&self, arm: u8, x: &[f64]) -> f64 {
        if arm == 1 {
            self.r1(x)
        } else {
            self.r0(x)
        }
    }
}

/// Weights for one fold. Subgroup probabilities come from the training
/// rows; the subgroup must also be present among the test rows.
pub fn build_weights(
    spec: &EstimandSpec,
    e_draw: &NuisanceDraw,
    p1_hat: f64,
    data: &ObservedData,
    train: &[usize],
    test: &[usize],
) -> Result<TargetWeights> {
    if !e_draw.is_propensity() {
        return Err(Error::InvalidConfig("target weights need a propensity draw".into()));
    }
    if !(p1_hat > 0.0 && p1_hat < 1.0) {
        return Err(Error::InvalidConfig(format!("p1_hat must lie in (0, 1), got {p1_hat}")));
    }
    let pa_hat = match spec {
        EstimandSpec::Ate | EstimandSpec::Mu1 | EstimandSpec::Mu0 => 1.0,
        EstimandSpec::Att => p1_hat,
        EstimandSpec::Atc => 1.0 - p1_hat,
        EstimandSpec::Subgroup(rule) => {
            spec.validate(data.p())?;
            if !test.iter().any(|&i| rule.holds(data.x_row(i))) {
                return Err(Error::EmptySubgroup(spec.to_string()));
            }
            let hits = train.iter().filter(|&&i| rule.holds(data.x_row(i))).count();
            if hits == 0 {
                return Err(Error::ZeroSubgroupProbability(spec.to_string()));
            }
            hits as f64 / train.len() as f64
        }
    };
    Ok(TargetWeights { spec: *spec, e: e_draw.clone(), p1_hat, pa_hat })
}

/// Posterior for `spec`, always routed through [`TargetWeights`].
pub fn estimate_weighted(data: &ObservedData, spec: &EstimandSpec, cfg: &RunConfig) -> Result<PosteriorSummary> {
    drdb::run_via(data, &RunConfig { estimand: *spec, ..cfg.clone() }, WeightPath::Target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::Predictor;

    fn const_e(e: f64) -> NuisanceDraw {
        NuisanceDraw::Propensity { predictor: Predictor::constant((e / (1.0 - e)).ln(), 2), clip: None }
    }

    fn weights(spec: EstimandSpec, e: f64, p1: f64, pa: f64) -> TargetWeights {
        TargetWeights { spec, e: const_e(e), p1_hat: p1, pa_hat: pa }
    }

    #[test]
    fn parse_and_display_roundtrip() {
        for s in ["ate", "mu1", "mu0", "att", "atc", "subgroup:x2>0.5", "subgroup:x10<=-1.25"] {
            let spec: EstimandSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<EstimandSpec>(&json).unwrap(), spec);
        }
        let spec: EstimandSpec = "subgroup:x3>0".parse().unwrap();
        assert_eq!(
            spec,
            EstimandSpec::Subgroup(SubgroupRule { covariate: 3, threshold: 0.0, direction: Direction::Above })
        );
        for bad in ["", "ATE", "subgroup:x0>1", "subgroup:y1>0", "subgroup:x1=0", "subgroup:x1>nan", "cate"] {
            assert!(bad.parse::<EstimandSpec>().is_err(), "{bad}");
        }
        assert!(spec.validate(2).is_err());
        assert!(spec.validate(3).is_ok());
    }

    #[test]
    fn att_arithmetic() {
        let w = weights(EstimandSpec::Att, 0.8, 0.5, 0.5);
        let x = [0.0, 0.0];
        assert!((w.w(&x) - 1.6).abs() < 1e-12);
        assert_eq!(w.r1(&x), 1.0);
        assert!((w.r0(&x) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn atc_mirrors_att() {
        let att = weights(EstimandSpec::Att, 0.8, 0.5, 0.5);
        let atc = weights(EstimandSpec::Atc, 0.2, 0.5, 0.5);
        let x = [0.3, -0.1];
        assert!((att.w(&x) - atc.w(&x)).abs() < 1e-12);
        assert!((att.r0(&x) - atc.r1(&x)).abs() < 1e-12);
        assert_eq!(atc.r0(&x), 1.0);
    }

    #[test]
    fn randomized_att_collapses_to_ate() {
        let att = weights(EstimandSpec::Att, 0.3, 0.3, 0.3);
        let ate = weights(EstimandSpec::Ate, 0.3, 0.3, 1.0);
        let x = [1.0, 2.0];
        assert!((att.w(&x) - 1.0).abs() < 1e-12);
        assert!((att.r0(&x) - 1.0).abs() < 1e-12);
        assert!((att.r0(&x) - ate.r0(&x) * att.w(&x)).abs() < 1e-12);
    }

    #[test]
    fn subgroup_weights_vanish_off_rule() {
        let spec: EstimandSpec = "subgroup:x1>0".parse().unwrap();
        let w = weights(spec, 0.4, 0.5, 0.5);
        let off = [-0.5, 3.0];
        assert_eq!((w.w(&off), w.r1(&off), w.r0(&off)), (0.0, 0.0, 0.0));
        let on = [0.5, 3.0];
        assert_eq!(w.w(&on), 2.0);
        assert!((w.r1(&on) - 0.5 / (0.5 * 0.4)).abs() < 1e-12);
        assert!((w.r0(&on) - 0.5 / (0.5 * 0.6)).abs() < 1e-12);
    }

    #[test]
    fn subgroup_probability_from_training_rows() {
        let x = vec![-1.0, 0.0, 1.0, 0.0, 2.0, 0.0, -2.0, 0.0];
        let d = ObservedData::new(vec![0.0; 4], vec![0, 1, 0, 1], x, 2).unwrap();
        let spec: EstimandSpec = "subgroup:x1>0".parse().unwrap();
        let tw = build_weights(&spec, &const_e(0.5), 0.5, &d, &[0, 1, 3], &[2]).unwrap();
        assert!((tw.pa_hat - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(build_weights(&spec, &const_e(0.5), 0.5, &d, &[1, 2], &[0, 3]), Err(Error::EmptySubgroup(_))));
        assert!(matches!(
            build_weights(&spec, &const_e(0.5), 0.5, &d, &[0, 3], &[1, 2]),
            Err(Error::ZeroSubgroupProbability(_))
        ));
    }
}
