//! Bayesian nuisance posteriors and their single function-valued draws.
//!
//! Outcome regressions `m_t(x)` are fitted per arm with conjugate Bayesian
//! ridge ([`ridge`]); the propensity `e(x)` with a Laplace-approximated ridge
//! logistic regression ([`logistic`]). [`OracleNuisance`] is the point-mass
//! alternative that always returns the true functions.

pub mod logistic;
pub mod oracle;
pub mod ridge;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{arm_subset, ObservedData};
use crate::debias::Contrast;
use crate::error::{Error, Result};
use crate::stats::logistic;

pub use logistic::{draw_propensity, fit_logistic_evidence, fit_logistic_laplace, LogisticLaplacePosterior};
pub use oracle::OracleNuisance;
pub use ridge::{draw_regression, fit_ridge, RidgeRegressionPosterior};

/// Covariate expansion used by the outcome regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMap {
    #[default]
    Linear,
    /// `(x, x^2)` coordinate-wise.
    Quadratic,
}

impl FeatureMap {
    pub fn dim(self, p: usize) -> usize {
        match self {
            FeatureMap::Linear => p,
            FeatureMap::Quadratic => 2 * p,
        }
    }

    /// Writes `[1, phi(x)]` into `out`.
    pub(crate) fn design_row(self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        out.extend_from_slice(x);
        if self == FeatureMap::Quadratic {
            out.extend(x.iter().map(|v| v * v));
        }
    }

    /// Splits a coefficient vector laid out as `[intercept, phi]`.
    pub(crate) fn predictor(self, coef: &[f64], p: usize) -> Predictor {
        let (linear, quadratic) = match self {
            FeatureMap::Linear => (coef[1..].to_vec(), Vec::new()),
            FeatureMap::Quadratic => (coef[1..=p].to_vec(), coef[p + 1..].to_vec()),
        };
        Predictor { intercept: coef[0], linear, quadratic }
    }
}

/// `intercept + linear'x + quadratic'(x^2)`; an empty `quadratic` is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub intercept: f64,
    pub linear: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub quadratic: Vec<f64>,
}

impl Predictor {
    pub fn constant(value: f64, p: usize) -> Self {
        Predictor { intercept: value, linear: vec![0.0; p], quadratic: Vec::new() }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(x).map(|(b, v)| b * v).sum();
        let quad: f64 = self.quadratic.iter().zip(x).map(|(b, v)| b * v * v).sum();
        self.intercept + lin + quad
    }

    pub fn negated(&self) -> Predictor {
        Predictor {
            intercept: -self.intercept,
            linear: self.linear.iter().map(|v| -v).collect(),
            quadratic: self.quadratic.iter().map(|v| -v).collect(),
        }
    }
}

/// A single realized nuisance function.
#[derive(Debug, Clone, PartialEq)]
pub enum NuisanceDraw {
    Regression(Predictor),
    /// `logistic(predictor(x))`, clamped to `[clip, 1 - clip]` when `clip` is set.
    Propensity {
        predictor: Predictor,
        clip: Option<f64>,
    },
}

impl NuisanceDraw {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            NuisanceDraw::Regression(f) => f.eval(x),
            NuisanceDraw::Propensity { predictor, clip } => {
                let e = logistic(predictor.eval(x));
                match clip {
                    Some(c) => e.clamp(*c, 1.0 - c),
                    None => e,
                }
            }
        }
    }

    pub fn is_propensity(&self) -> bool {
        matches!(self, NuisanceDraw::Propensity { .. })
    }
}

/// Ridge penalty: fixed, or chosen by cross-validation over [`LAMBDA_GRID`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LambdaRepr", into = "LambdaRepr")]
pub enum Lambda {
    Fixed(f64),
    Cv,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LambdaRepr {
    Number(f64),
    Word(String),
}

impl TryFrom<LambdaRepr> for Lambda {
    type Error = String;
    fn try_from(r: LambdaRepr) -> std::result::Result<Self, String> {
        match r {
            LambdaRepr::Number(v) if v >= 0.0 && v.is_finite() => Ok(Lambda::Fixed(v)),
            LambdaRepr::Number(v) => Err(format!("lambda must be >= 0, got {v}")),
            LambdaRepr::Word(w) if w == "cv" => Ok(Lambda::Cv),
            LambdaRepr::Word(w) => {
                w.parse::<f64>().map_err(|_| format!("bad lambda {w:?}")).and_then(|v| LambdaRepr::Number(v).try_into())
            }
        }
    }
}

impl From<Lambda> for LambdaRepr {
    fn from(l: Lambda) -> Self {
        match l {
            Lambda::Fixed(v) => LambdaRepr::Number(v),
            Lambda::Cv => LambdaRepr::Word("cv".into()),
        }
    }
}

impl std::str::FromStr for Lambda {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        LambdaRepr::Word(s.to_string()).try_into()
    }
}

/// Propensity ridge penalty: fixed, or chosen by empirical Bayes over
/// [`logistic::LAMBDA_E_GRID`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LambdaRepr", into = "LambdaRepr")]
pub enum PropensityPenalty {
    Fixed(f64),
    Evidence,
}

impl TryFrom<LambdaRepr> for PropensityPenalty {
    type Error = String;
    fn try_from(r: LambdaRepr) -> std::result::Result<Self, String> {
        match r {
            LambdaRepr::Number(v) if v > 0.0 && v.is_finite() => Ok(PropensityPenalty::Fixed(v)),
            LambdaRepr::Number(v) => Err(format!("lambda_e must be > 0, got {v}")),
            LambdaRepr::Word(w) if w == "eb" => Ok(PropensityPenalty::Evidence),
            LambdaRepr::Word(w) => w
                .parse::<f64>()
                .map_err(|_| format!("bad lambda_e {w:?}"))
                .and_then(|v| LambdaRepr::Number(v).try_into()),
        }
    }
}

impl From<PropensityPenalty> for LambdaRepr {
    fn from(l: PropensityPenalty) -> Self {
        match l {
            PropensityPenalty::Fixed(v) => LambdaRepr::Number(v),
            PropensityPenalty::Evidence => LambdaRepr::Word("eb".into()),
        }
    }
}

impl std::str::FromStr for PropensityPenalty {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        LambdaRepr::Word(s.to_string()).try_into()
    }
}

/// 13-point log grid `10^-4, 10^-3.5, ..., 10^2`.
pub const LAMBDA_GRID: [f64; 13] = [
    1e-4,
    3.162_277_660_168_379e-4,
    1e-3,
    3.162_277_660_168_379e-3,
    1e-2,
    3.162_277_660_168_379e-2,
    1e-1,
    3.162_277_660_168_379e-1,
    1.0,
    3.162_277_660_168_379,
    10.0,
    31.622_776_601_683_793,
    100.0,
];

/// Rows used for the point estimate of `P(T = 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum P1Source {
    #[default]
    Train,
    Full,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NuisanceMethod {
    #[default]
    Ridge,
    Oracle,
}

/// The `nuisance` block of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuisanceConfig {
    pub method: NuisanceMethod,
    pub lambda: Lambda,
    pub lambda_e: PropensityPenalty,
    pub clip: f64,
    pub p1_source: P1Source,
    pub features: FeatureMap,
    /// Required when `method` is `oracle`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<OracleNuisance>,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            method: NuisanceMethod::Ridge,
            lambda: Lambda::Cv,
            lambda_e: PropensityPenalty::Evidence,
            clip: 0.01,
            p1_source: P1Source::Train,
            features: FeatureMap::Linear,
            truth: None,
        }
    }
}

impl NuisanceConfig {
    pub fn oracle(truth: OracleNuisance) -> Self {
        NuisanceConfig { method: NuisanceMethod::Oracle, truth: Some(truth), ..Default::default() }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 0.5) {
            return Err(Error::InvalidConfig(format!("clip must lie in (0, 0.5), got {}", self.clip)));
        }
        if let PropensityPenalty::Fixed(v) = self.lambda_e {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("lambda_e must be > 0, got {v}")));
            }
        }
        if self.method == NuisanceMethod::Oracle {
            let truth = self
                .truth
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("oracle nuisances need a `truth` block".into()))?;
            truth.check_dim(p)?;
        }
        Ok(())
    }
}

/// Mean of `t` over `rows`, clamped to `[clip, 1 - clip]`.
pub fn estimate_p1(t: &[u8], rows: &[usize], clip: f64) -> f64 {
    let treated = rows.iter().filter(|&&i| t[i] == 1).count();
    (treated as f64 / rows.len() as f64).clamp(clip, 1.0 - clip)
}

/// The single draw of every nuisance used on one fold.
#[derive(Debug, Clone)]
pub struct FoldNuisances {
    /// `None` when the contrast does not involve the treated arm.
    pub m1: Option<NuisanceDraw>,
    /// `None` when the contrast does not involve the control arm.
    pub m0: Option<NuisanceDraw>,
    pub e: NuisanceDraw,
    pub p1_hat: f64,
    /// Ridge penalty used for `m1`; `None` for oracle runs or unused arms.
    pub lambda1: Option<f64>,
    pub lambda0: Option<f64>,
}

/// Fits nuisance posteriors on `train` and draws once from each, in the order
/// `m1`, `m0`, `e`. Outcome models for arms outside `contrast` are skipped.
pub fn draw_fold_nuisances<R: Rng + ?Sized>(
    data: &ObservedData,
    train: &[usize],
    test: &[usize],
    cfg: &NuisanceConfig,
    contrast: Contrast,
    rng: &mut R,
) -> Result<FoldNuisances> {
    let p1_rows: Vec<usize>;
    let rows = match cfg.p1_source {
        P1Source::Train => train,
        P1Source::Test => test,
        P1Source::Full => {
            p1_rows = (0..data.n()).collect();
            &p1_rows
        }
    };
    let p1_hat = estimate_p1(data.t(), rows, cfg.clip);

    match cfg.method {
        NuisanceMethod::Oracle => {
            let truth = cfg
                .truth
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("oracle nuisances need a `truth` block".into()))?;
            Ok(FoldNuisances {
                m1: contrast.uses_arm(1).then(|| truth.draw_m1()),
                m0: contrast.uses_arm(0).then(|| truth.draw_m0()),
                e: truth.draw_e(),
                p1_hat,
                lambda1: None,
                lambda0: None,
            })
        }
        NuisanceMethod::Ridge => {
            let fit_arm = |arm: u8| -> Result<Option<RidgeRegressionPosterior>> {
                if !contrast.uses_arm(arm) {
                    return Ok(None);
                }
                fit_ridge(&arm_subset(data, train, arm)?, cfg.lambda, cfg.features).map(Some)
            };
            let post1 = fit_arm(1)?;
            let post0 = fit_arm(0)?;
            let post_e = match cfg.lambda_e {
                PropensityPenalty::Fixed(v) => fit_logistic_laplace(data, train, v, cfg.clip)?,
                PropensityPenalty::Evidence => fit_logistic_evidence(data, train, cfg.clip)?,
            };
            let m1 = post1.as_ref().map(|p| draw_regression(p, rng));
            let m0 = post0.as_ref().map(|p| draw_regression(p, rng));
            let e = draw_propensity(&post_e, rng);
            Ok(FoldNuisances { m1, m0, e, p1_hat, lambda1: post1.map(|p| p.lambda), lambda0: post0.map(|p| p.lambda) })
        }
    }
}
