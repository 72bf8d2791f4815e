//! Cross-fitted DRDB posterior: per-fold hierarchical posteriors built from
//! one nuisance draw each, forward-simulated and averaged index-wise across
//! folds.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{arm_subset, split_folds, FoldPlan, ObservedData};
use crate::debias::{
    bias_posterior, conditional_posterior, density_ratio, standard_t, weighted_observables, Contrast, DensityRatioPair,
    TPosterior,
};
use crate::error::{Error, Result};
use crate::estimands::{build_weights, EstimandSpec};
use crate::nuisance::{draw_fold_nuisances, FoldNuisances, NuisanceConfig, NuisanceMethod};
use crate::rng::{self, TAG_FOLD};
use crate::stats;

/// Smallest number of rows per arm a test fold may contribute.
pub const MIN_TEST_ARM: usize = 4;

/// Per-row weights entering one fold posterior: the target weight `w(x)`
/// multiplying the conditional-posterior values and the per-arm ratios
/// multiplying the residuals.
pub trait FoldWeights {
    fn target_weight(&self, x: &[f64]) -> f64;
    fn ratio(&self, arm: u8, x: &[f64]) -> f64;
}

impl FoldWeights for DensityRatioPair {
    fn target_weight(&self, _x: &[f64]) -> f64 {
        1.0
    }

    fn ratio(&self, arm: u8, x: &[f64]) -> f64 {
        self.for_arm(arm, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDiagnostics {
    pub n_s: usize,
    pub n1: usize,
    pub n0: usize,
    pub p1_hat: f64,
    pub lambda1: Option<f64>,
    pub lambda0: Option<f64>,
}

/// Law of one fold's draw: `cond_base + b1 - b0` for a difference,
/// `cond_base + b1` (resp. `+ b0`) for a single arm mean.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPosterior {
    pub fold_id: usize,
    pub contrast: Contrast,
    /// Conditional posterior at `b = 0`.
    pub cond_base: TPosterior,
    pub bias1: Option<TPosterior>,
    pub bias0: Option<TPosterior>,
    pub diagnostics: FoldDiagnostics,
}

impl FoldPosterior {
    fn signed_biases(&self) -> impl Iterator<Item = (f64, &TPosterior)> {
        let b1 = self.bias1.as_ref().map(|b| (1.0, b));
        let sign0 = if self.contrast == Contrast::Control { 1.0 } else { -1.0 };
        let b0 = self.bias0.as_ref().map(|b| (sign0, b));
        b1.into_iter().chain(b0)
    }

    /// `eta_m + eta1 - eta0` (or its single-arm analogue).
    pub fn closed_form_mean(&self) -> f64 {
        self.signed_biases().fold(self.cond_base.eta, |acc, (s, b)| acc + s * b.eta)
    }

    /// Sum of component variances; `None` if any component has `nu <= 2`.
    pub fn variance(&self) -> Option<f64> {
        let mut v = self.cond_base.variance()?;
        for (_, b) in self.signed_biases() {
            v += b.variance()?;
        }
        Some(v)
    }
}

/// Fold posterior from already drawn nuisances. The test fold must contain
/// at least [`MIN_TEST_ARM`] rows of every arm the contrast uses.
pub fn fold_posterior_from_nuisances(
    data: &ObservedData,
    test: &[usize],
    nuis: &FoldNuisances,
    weights: &dyn FoldWeights,
    contrast: Contrast,
    fold_id: usize,
) -> Result<FoldPosterior> {
    let sub1 = arm_subset(data, test, 1);
    let sub0 = arm_subset(data, test, 0);
    let n1 = sub1.as_ref().map_or(0, |s| s.len());
    let n0 = sub0.as_ref().map_or(0, |s| s.len());
    for (arm, n_arm) in [(1u8, n1), (0u8, n0)] {
        if contrast.uses_arm(arm) && n_arm < MIN_TEST_ARM {
            return Err(Error::DegenerateFold {
                fold: fold_id,
                reason: format!("test fold has {n_arm} rows with t = {arm}, need at least {MIN_TEST_ARM}"),
            });
        }
    }

    let m_values: Vec<f64> = test
        .iter()
        .map(|&i| {
            let x = data.x_row(i);
            let m = match contrast {
                Contrast::Difference => draw_of(&nuis.m1).eval(x) - draw_of(&nuis.m0).eval(x),
                Contrast::Treated => draw_of(&nuis.m1).eval(x),
                Contrast::Control => draw_of(&nuis.m0).eval(x),
            };
            weights.target_weight(x) * m
        })
        .collect();
    let cond_base = conditional_posterior(&m_values, 0.0)?;

    let bias_for = |arm: u8, sub: Result<crate::data::ArmSubset<'_>>, m: &Option<_>| -> Result<Option<TPosterior>> {
        if !contrast.uses_arm(arm) {
            return Ok(None);
        }
        let w = weighted_observables(&sub?, draw_of(m), |x| weights.ratio(arm, x))?;
        bias_posterior(&w).map(Some)
    };
    let bias1 = bias_for(1, sub1, &nuis.m1)?;
    let bias0 = bias_for(0, sub0, &nuis.m0)?;

    Ok(FoldPosterior {
        fold_id,
        contrast,
        cond_base,
        bias1,
        bias0,
        diagnostics: FoldDiagnostics {
            n_s: test.len(),
            n1,
            n0,
            p1_hat: nuis.p1_hat,
            lambda1: nuis.lambda1,
            lambda0: nuis.lambda0,
        },
    })
}

fn draw_of(m: &Option<crate::nuisance::NuisanceDraw>) -> &crate::nuisance::NuisanceDraw {
    m.as_ref().expect("outcome draw present for every arm the contrast uses")
}

fn check_training_arms(
    data: &ObservedData,
    train: &[usize],
    cfg: &NuisanceConfig,
    contrast: Contrast,
    fold: usize,
) -> Result<()> {
    if cfg.method != NuisanceMethod::Ridge {
        return Ok(());
    }
    let needed = cfg.features.dim(data.p()) + 2;
    for arm in [1u8, 0u8] {
        if !contrast.uses_arm(arm) {
            continue;
        }
        let got = train.iter().filter(|&&i| data.t()[i] == arm).count();
        if got < needed {
            return Err(Error::DegenerateFold {
                fold,
                reason: format!("training fold has {got} rows with t = {arm}, need at least {needed}"),
            });
        }
    }
    Ok(())
}

/// Fits and draws the fold's nuisances from `rng`, then assembles the
/// fold posterior for `estimand`.
pub fn fold_posterior<R: Rng + ?Sized>(
    data: &ObservedData,
    plan: &FoldPlan,
    fold: usize,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<FoldPosterior> {
    fold_posterior_via(data, plan, fold, cfg, WeightPath::for_estimand(&cfg.estimand), rng)
}

/// Which weight object feeds the fold posterior. ATE and the arm means use
/// the plain ratio pair unless the estimands layer asks otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum WeightPath {
    Ratios,
    Target,
}

impl WeightPath {
    fn for_estimand(spec: &EstimandSpec) -> Self {
        if spec.is_plain() {
            WeightPath::Ratios
        } else {
            WeightPath::Target
        }
    }
}

fn fold_posterior_via<R: Rng + ?Sized>(
    data: &ObservedData,
    plan: &FoldPlan,
    fold: usize,
    cfg: &RunConfig,
    path: WeightPath,
    rng: &mut R,
) -> Result<FoldPosterior> {
    let contrast = cfg.estimand.contrast();
    let test = plan.test_indices(fold);
    let train = plan.train_indices(fold);
    let mut run = || -> Result<FoldPosterior> {
        check_training_arms(data, &train, &cfg.nuisance, contrast, fold)?;
        let nuis = draw_fold_nuisances(data, &train, &test, &cfg.nuisance, contrast, rng)?;
        if path == WeightPath::Ratios {
            let ratios = density_ratio(&nuis.e, nuis.p1_hat)?;
            fold_posterior_from_nuisances(data, &test, &nuis, &ratios, contrast, fold)
        } else {
            let weights = build_weights(&cfg.estimand, &nuis.e, nuis.p1_hat, data, &train, &test)?;
            fold_posterior_from_nuisances(data, &test, &nuis, &weights, contrast, fold)
        }
    };
    run().map_err(|e| e.in_fold(fold))
}

/// ATE fold posterior; `cfg.estimand` is ignored.
pub fn fold_posterior_ate<R: Rng + ?Sized>(
    data: &ObservedData,
    plan: &FoldPlan,
    fold: usize,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<FoldPosterior> {
    let cfg = RunConfig { estimand: EstimandSpec::Ate, ..cfg.clone() };
    fold_posterior(data, plan, fold, &cfg, rng)
}

/// `m` forward draws: per draw `b1`, then `b0`, then the standard t.
pub fn sample_fold<R: Rng + ?Sized>(fp: &FoldPosterior, m: usize, rng: &mut R) -> Vec<f64> {
    let c = fp.cond_base.c2.sqrt();
    (0..m)
        .map(|_| {
            let mut d = fp.cond_base.eta;
            for (s, b) in fp.signed_biases() {
                d += s * b.sample(rng);
            }
            if !fp.cond_base.is_point_mass() {
                d += c * standard_t(fp.cond_base.nu, rng);
            }
            d
        })
        .collect()
}

/// Index-wise average of the fold draw vectors.
pub fn aggregate_cf(fold_draws: &[Vec<f64>]) -> Result<Vec<f64>> {
    let lens: Vec<usize> = fold_draws.iter().map(Vec::len).collect();
    if lens.is_empty() || lens.iter().any(|&l| l != lens[0]) {
        return Err(Error::LengthMismatch(lens));
    }
    let k = fold_draws.len() as f64;
    Ok((0..lens[0]).map(|j| fold_draws.iter().map(|d| d[j]).sum::<f64>() / k).collect())
}

fn default_k() -> usize {
    5
}
fn default_m_draws() -> usize {
    1000
}
fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_m_draws")]
    pub m_draws: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub estimand: EstimandSpec,
    #[serde(default)]
    pub nuisance: NuisanceConfig,
    #[serde(default)]
    pub seed: u64,
    /// Keep the aggregated draws in the summary.
    #[serde(default)]
    pub keep_draws: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: default_k(),
            m_draws: default_m_draws(),
            alpha: default_alpha(),
            estimand: EstimandSpec::Ate,
            nuisance: NuisanceConfig::default(),
            seed: 0,
            keep_draws: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, p: usize) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig(format!("k must be at least 2, got {}", self.k)));
        }
        if self.m_draws < 100 {
            return Err(Error::InvalidConfig(format!("m_draws must be at least 100, got {}", self.m_draws)));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::InvalidConfig(format!("alpha must lie in (0, 0.5), got {}", self.alpha)));
        }
        self.estimand.validate(p)?;
        self.nuisance.validate(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub eta_m: f64,
    pub eta1: Option<f64>,
    pub eta0: Option<f64>,
    pub c_s2: f64,
    pub nu_s: f64,
    pub n1: usize,
    pub n0: usize,
    pub p1_hat: f64,
}

impl From<&FoldPosterior> for FoldSummary {
    fn from(fp: &FoldPosterior) -> Self {
        FoldSummary {
            fold: fp.fold_id,
            eta_m: fp.cond_base.eta,
            eta1: fp.bias1.map(|b| b.eta),
            eta0: fp.bias0.map(|b| b.eta),
            c_s2: fp.cond_base.c2,
            nu_s: fp.cond_base.nu,
            n1: fp.diagnostics.n1,
            n0: fp.diagnostics.n0,
            p1_hat: fp.diagnostics.p1_hat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub estimand: EstimandSpec,
    /// Mean of the aggregated draws.
    pub mean: f64,
    /// Closed-form variance of the aggregated law; `None` when undefined.
    pub variance: Option<f64>,
    pub ci: [f64; 2],
    pub alpha: f64,
    pub k: usize,
    pub m_draws: usize,
    pub seed: u64,
    /// Average of the fold closed-form means.
    pub closed_form_mean: f64,
    pub per_fold: Vec<FoldSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<Vec<f64>>,
}

impl PosteriorSummary {
    pub fn ci_lower(&self) -> f64 {
        self.ci[0]
    }

    pub fn ci_upper(&self) -> f64 {
        self.ci[1]
    }

    pub fn ci_length(&self) -> f64 {
        self.ci[1] - self.ci[0]
    }

    pub fn contains(&self, value: f64) -> bool {
        self.ci[0] <= value && value <= self.ci[1]
    }

    /// Square root of the closed-form variance, falling back to the sample
    /// SD of the retained draws when the variance is undefined.
    pub fn sd(&self) -> Option<f64> {
        self.variance.map(f64::sqrt).or_else(|| self.draws.as_deref().and_then(stats::sample_variance).map(f64::sqrt))
    }
}

/// Fold posteriors for every fold of `plan`, each from its own stream.
pub fn fold_posteriors_with_draws(
    data: &ObservedData,
    plan: &FoldPlan,
    cfg: &RunConfig,
) -> Result<Vec<(FoldPosterior, Vec<f64>)>> {
    fold_posteriors_via(data, plan, cfg, WeightPath::for_estimand(&cfg.estimand))
}

fn fold_posteriors_via(
    data: &ObservedData,
    plan: &FoldPlan,
    cfg: &RunConfig,
    path: WeightPath,
) -> Result<Vec<(FoldPosterior, Vec<f64>)>> {
    (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let mut rng = rng::stream(cfg.seed, &[TAG_FOLD, fold as u64]);
            let fp = fold_posterior_via(data, plan, fold, cfg, path, &mut rng)?;
            let draws = sample_fold(&fp, cfg.m_draws, &mut rng);
            Ok((fp, draws))
        })
        .collect()
}

/// Runs the configured estimand end to end.
pub fn run(data: &ObservedData, cfg: &RunConfig) -> Result<PosteriorSummary> {
    run_via(data, cfg, WeightPath::for_estimand(&cfg.estimand))
}

pub(crate) fn run_via(data: &ObservedData, cfg: &RunConfig, path: WeightPath) -> Result<PosteriorSummary> {
    cfg.validate(data.p())?;
    let plan = split_folds(data.n(), cfg.k, cfg.seed)?;
    run_with_plan_via(data, &plan, cfg, path)
}

/// As [`run`], on a caller-supplied fold plan.
pub fn run_with_plan(data: &ObservedData, plan: &FoldPlan, cfg: &RunConfig) -> Result<PosteriorSummary> {
    cfg.validate(data.p())?;
    run_with_plan_via(data, plan, cfg, WeightPath::for_estimand(&cfg.estimand))
}

fn run_with_plan_via(
    data: &ObservedData,
    plan: &FoldPlan,
    cfg: &RunConfig,
    path: WeightPath,
) -> Result<PosteriorSummary> {
    if plan.n() != data.n() {
        return Err(Error::ShapeMismatch(format!("fold plan covers {} rows, data has {}", plan.n(), data.n())));
    }
    let folds = fold_posteriors_via(data, plan, cfg, path)?;
    let (posteriors, draws): (Vec<FoldPosterior>, Vec<Vec<f64>>) = folds.into_iter().unzip();
    let agg = aggregate_cf(&draws)?;
    Ok(summarize(cfg, &posteriors, agg))
}

fn summarize(cfg: &RunConfig, posteriors: &[FoldPosterior], agg: Vec<f64>) -> PosteriorSummary {
    let k = posteriors.len() as f64;
    let variance = posteriors.iter().map(FoldPosterior::variance).sum::<Option<f64>>().map(|v| v / (k * k));
    let closed_form_mean = posteriors.iter().map(FoldPosterior::closed_form_mean).sum::<f64>() / k;
    let sorted = stats::sorted(&agg);
    let ci = [stats::quantile_sorted(&sorted, cfg.alpha / 2.0), stats::quantile_sorted(&sorted, 1.0 - cfg.alpha / 2.0)];
    PosteriorSummary {
        estimand: cfg.estimand,
        mean: stats::mean(&agg),
        variance,
        ci,
        alpha: cfg.alpha,
        k: posteriors.len(),
        m_draws: cfg.m_draws,
        seed: cfg.seed,
        closed_form_mean,
        per_fold: posteriors.iter().map(FoldSummary::from).collect(),
        draws: cfg.keep_draws.then_some(agg),
    }
}

/// ATE posterior; `cfg.estimand` is ignored.
pub fn estimate(data: &ObservedData, cfg: &RunConfig) -> Result<PosteriorSummary> {
    run(data, &RunConfig { estimand: EstimandSpec::Ate, ..cfg.clone() })
}

/// Posterior for `E[Y(1)]`.
pub fn estimate_mu1(data: &ObservedData, cfg: &RunConfig) -> Result<PosteriorSummary> {
    run(data, &RunConfig { estimand: EstimandSpec::Mu1, ..cfg.clone() })
}

/// Posterior for `E[Y(0)]`.
pub fn estimate_mu0(data: &ObservedData, cfg: &RunConfig) -> Result<PosteriorSummary> {
    run(data, &RunConfig { estimand: EstimandSpec::Mu0, ..cfg.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(cond: TPosterior, b1: Option<TPosterior>, b0: Option<TPosterior>, contrast: Contrast) -> FoldPosterior {
        FoldPosterior {
            fold_id: 0,
            contrast,
            cond_base: cond,
            bias1: b1,
            bias0: b0,
            diagnostics: FoldDiagnostics { n_s: 10, n1: 5, n0: 5, p1_hat: 0.5, lambda1: None, lambda0: None },
        }
    }

    fn t(nu: f64, eta: f64, c2: f64) -> TPosterior {
        TPosterior { nu, eta, c2 }
    }

    #[test]
    fn point_mass_composition() {
        let f = fp(
            TPosterior::point_mass(1.0, 9.0),
            Some(TPosterior::point_mass(0.5, 4.0)),
            Some(TPosterior::point_mass(0.2, 4.0)),
            Contrast::Difference,
        );
        let mut s = rng::stream(1, &[]);
        let d = sample_fold(&f, 50, &mut s);
        assert!(d.iter().all(|&v| (v - 1.3).abs() < 1e-15));
        assert_eq!(f.variance(), Some(0.0));
    }

    #[test]
    fn sampled_moments_match_closed_form() {
        let f = fp(t(9.0, 1.0, 0.04), Some(t(5.0, 0.3, 0.09)), Some(t(7.0, -0.2, 0.01)), Contrast::Difference);
        let mean = f.closed_form_mean();
        let var = f.variance().unwrap();
        assert!((mean - 1.5).abs() < 1e-15);
        let expected_var = 0.04 * 9.0 / 7.0 + 0.09 * 5.0 / 3.0 + 0.01 * 7.0 / 5.0;
        assert!((var - expected_var).abs() < 1e-15);

        let mut s = rng::stream(2, &[]);
        let n = 100_000;
        let d = sample_fold(&f, n, &mut s);
        let (m, ss) = stats::sum_sq_dev(&d);
        let sv = ss / (n - 1) as f64;
        assert!((m - mean).abs() < 4.0 * (var / n as f64).sqrt(), "mean {m}");
        assert!((sv / var - 1.0).abs() < 0.05, "variance {sv} vs {var}");
    }

    #[test]
    fn control_contrast_adds_its_bias() {
        let f = fp(t(9.0, 3.0, 0.04), None, Some(t(7.0, 0.25, 0.01)), Contrast::Control);
        assert_eq!(f.closed_form_mean(), 3.25);
        let f = fp(t(9.0, 3.0, 0.04), Some(t(7.0, 0.25, 0.01)), None, Contrast::Treated);
        assert_eq!(f.closed_form_mean(), 3.25);
    }

    #[test]
    fn undefined_variance_propagates() {
        let f = fp(t(9.0, 1.0, 0.04), Some(t(2.0, 0.0, 0.1)), Some(t(7.0, 0.0, 0.01)), Contrast::Difference);
        assert_eq!(f.variance(), None);
    }

    #[test]
    fn aggregation() {
        assert_eq!(aggregate_cf(&[vec![1.0; 4], vec![2.0; 4]]).unwrap(), vec![1.5; 4]);
        let single = vec![0.1, -3.0, 7.25];
        assert_eq!(aggregate_cf(std::slice::from_ref(&single)).unwrap(), single);
        assert!(matches!(
            aggregate_cf(&[vec![1.0; 3], vec![1.0; 4]]),
            Err(Error::LengthMismatch(l)) if l == vec![3, 4]
        ));
        assert!(aggregate_cf(&[]).is_err());

        let mut s = rng::stream(3, &[]);
        let folds: Vec<Vec<f64>> = (0..5).map(|_| (0..200).map(|_| s.random::<f64>()).collect()).collect();
        let agg = aggregate_cf(&folds).unwrap();
        let fold_means = folds.iter().map(|f| stats::mean(f)).sum::<f64>() / 5.0;
        assert!((stats::mean(&agg) - fold_means).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let ok = RunConfig::default();
        assert!(ok.validate(3).is_ok());
        assert!(RunConfig { k: 1, ..ok.clone() }.validate(3).is_err());
        assert!(RunConfig { m_draws: 99, ..ok.clone() }.validate(3).is_err());
        assert!(RunConfig { alpha: 0.5, ..ok.clone() }.validate(3).is_err());
        assert!(RunConfig { alpha: 0.0, ..ok }.validate(3).is_err());
    }
}
