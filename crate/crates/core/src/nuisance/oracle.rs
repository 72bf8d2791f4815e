//! Point-mass nuisance "posterior" holding the true functions.

use serde::{Deserialize, Serialize};

use super::{NuisanceDraw, Predictor};
use crate::error::{Error, Result};

/// True outcome regressions, the true propensity (as a logit-scale
/// predictor) and `P(T = 1)`. Every draw returns these exactly, unclamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleNuisance {
    pub m1: Predictor,
    pub m0: Predictor,
    pub propensity_logit: Predictor,
    pub p1: f64,
}

impl OracleNuisance {
    pub fn draw_m1(&self) -> NuisanceDraw {
        NuisanceDraw::Regression(self.m1.clone())
    }

    pub fn draw_m0(&self) -> NuisanceDraw {
        NuisanceDraw::Regression(self.m0.clone())
    }

    pub fn draw_e(&self) -> NuisanceDraw {
        NuisanceDraw::Propensity { predictor: self.propensity_logit.clone(), clip: None }
    }

    pub(crate) fn check_dim(&self, p: usize) -> Result<()> {
        for (name, f) in [("m1", &self.m1), ("m0", &self.m0), ("propensity_logit", &self.propensity_logit)] {
            if f.linear.len() != p || !(f.quadratic.is_empty() || f.quadratic.len() == p) {
                return Err(Error::InvalidConfig(format!(
                    "oracle {name} has {} linear / {} quadratic terms, data has p = {p}",
                    f.linear.len(),
                    f.quadratic.len()
                )));
            }
        }
        if !(self.p1 > 0.0 && self.p1 < 1.0) {
            return Err(Error::InvalidConfig(format!("oracle p1 must lie in (0, 1), got {}", self.p1)));
        }
        Ok(())
    }

    /// The truth for relabelled data (`t -> 1 - t`).
    pub fn swapped(&self) -> OracleNuisance {
        OracleNuisance {
            m1: self.m0.clone(),
            m0: self.m1.clone(),
            propensity_logit: self.propensity_logit.negated(),
            p1: 1.0 - self.p1,
        }
    }
}
