//! Ridge-penalized logistic regression with a Laplace posterior.
//!
//! The MAP is found by damped Newton-Raphson; the posterior is approximated
//! by `N(MAP, H^-1)` with `H` the Hessian of the negative log posterior.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{FeatureMap, NuisanceDraw};
use crate::data::ObservedData;
use crate::error::{Error, Result};
use crate::stats::logistic;

/// Prior precision on the intercept, vague enough to leave it effectively
/// unpenalized.
pub const INTERCEPT_PRECISION: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 100;

#[derive(Debug, Clone)]
pub struct LogisticLaplacePosterior {
    /// Intercept first.
    pub map_coef: DVector<f64>,
    /// Lower Cholesky factor of the negative log-posterior Hessian at the MAP.
    pub hessian_chol: DMatrix<f64>,
    pub lambda_e: f64,
    pub clip: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Problem {
    /// `n x d`, intercept column first.
    design: DMatrix<f64>,
    design_t: DMatrix<f64>,
    labels: DVector<f64>,
    penalty: DVector<f64>,
}

impl Problem {
    fn objective(&self, beta: &DVector<f64>) -> f64 {
        let eta = &self.design * beta;
        let nll: f64 = eta.iter().zip(self.labels.iter()).map(|(&e, &y)| softplus(e) - y * e).sum();
        let pen: f64 = self.penalty.iter().zip(beta.iter()).map(|(l, b)| l * b * b).sum();
        nll + 0.5 * pen
    }

    fn gradient_hessian(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let eta = &self.design * beta;
        let mu = eta.map(logistic);
        let mut g = &self.design_t * (&mu - &self.labels);
        let mut weighted_t = self.design_t.clone();
        for (mut col, m) in weighted_t.column_iter_mut().zip(mu.iter()) {
            col *= m * (1.0 - m);
        }
        let mut h = weighted_t * &self.design;
        for a in 0..beta.len() {
            g[a] += self.penalty[a] * beta[a];
            h[(a, a)] += self.penalty[a];
        }
        (g, h)
    }

    fn with_lambda(mut self, lambda_e: f64) -> Self {
        self.penalty.fill(lambda_e);
        self.penalty[0] = INTERCEPT_PRECISION;
        self
    }
}

/// Penalties searched by [`fit_logistic_evidence`]: `10^-2, 10^-1.5, ..., 10^4`.
pub const LAMBDA_E_GRID: [f64; 13] = [
    1e-2,
    3.162_277_660_168_379e-2,
    1e-1,
    3.162_277_660_168_379e-1,
    1.0,
    3.162_277_660_168_379,
    10.0,
    31.622_776_601_683_793,
    100.0,
    316.227_766_016_837_9,
    1e3,
    3_162.277_660_168_379_5,
    1e4,
];

fn build_problem(data: &ObservedData, rows: &[usize], lambda_e: f64) -> Result<Problem> {
    if rows.is_empty() {
        return Err(Error::TooFewRows { needed: 1, got: 0 });
    }
    if !(lambda_e > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda_e must be > 0, got {lambda_e}")));
    }
    let d = data.p() + 1;
    let mut flat = Vec::with_capacity(rows.len() * d);
    let mut row = Vec::with_capacity(d);
    for &i in rows {
        FeatureMap::Linear.design_row(data.x_row(i), &mut row);
        flat.extend_from_slice(&row);
    }
    let design = DMatrix::from_row_slice(rows.len(), d, &flat);
    let labels = DVector::from_iterator(rows.len(), rows.iter().map(|&i| f64::from(data.t()[i])));
    let design_t = design.transpose();
    let problem = Problem { design, design_t, labels, penalty: DVector::zeros(d) };
    Ok(problem.with_lambda(lambda_e))
}

/// Damped Newton from `beta` to the MAP. Returns the posterior and the
/// objective at the MAP.
fn solve_map(
    problem: &Problem,
    mut beta: DVector<f64>,
    lambda_e: f64,
    clip: f64,
) -> Result<(LogisticLaplacePosterior, f64)> {
    let mut obj = problem.objective(&beta);
    let (mut g, mut h) = problem.gradient_hessian(&beta);
    let mut iterations = 0;
    while g.norm() >= GRAD_TOL {
        if iterations == MAX_ITER {
            return Err(Error::NoConvergence { grad_norm: g.norm() });
        }
        iterations += 1;
        let step = h.clone().cholesky().expect("penalized Hessian is positive definite").solve(&g);
        let mut scale = 1.0;
        loop {
            let cand = &beta - &step * scale;
            let cand_obj = problem.objective(&cand);
            // Near the optimum the objective change is below rounding, so
            // ties within a few ulps count as progress.
            if cand_obj <= obj + 1e-14 * obj.abs() || scale < 1e-12 {
                beta = cand;
                obj = cand_obj;
                break;
            }
            scale *= 0.5;
        }
        (g, h) = problem.gradient_hessian(&beta);
    }

    let chol = h.cholesky().expect("penalized Hessian is positive definite").unpack();
    let post = LogisticLaplacePosterior {
        map_coef: beta,
        hessian_chol: chol,
        lambda_e,
        clip,
        iterations,
        grad_norm: g.norm(),
    };
    Ok((post, obj))
}

/// With a single label class the MAP runs off to the vague intercept prior
/// and its draws are meaningless. Such folds get a point mass at the
/// clipped class frequency instead.
fn one_class_fit(data: &ObservedData, rows: &[usize], lambda_e: f64, clip: f64) -> Option<LogisticLaplacePosterior> {
    let first = data.t()[*rows.first()?];
    if rows.iter().any(|&i| data.t()[i] != first) {
        return None;
    }
    let e = if first == 1 { 1.0 - clip } else { clip };
    let d = data.p() + 1;
    let mut map_coef = DVector::zeros(d);
    map_coef[0] = (e / (1.0 - e)).ln();
    Some(LogisticLaplacePosterior {
        map_coef,
        // Infinite precision: every draw equals the MAP.
        hessian_chol: DMatrix::from_diagonal_element(d, d, f64::INFINITY),
        lambda_e,
        clip,
        iterations: 0,
        grad_norm: 0.0,
    })
}

/// Fits `P(T = 1 | x)` on the given rows of `data`.
pub fn fit_logistic_laplace(
    data: &ObservedData,
    rows: &[usize],
    lambda_e: f64,
    clip: f64,
) -> Result<LogisticLaplacePosterior> {
    if let Some(post) = one_class_fit(data, rows, lambda_e, clip) {
        return Ok(post);
    }
    let problem = build_problem(data, rows, lambda_e)?;
    let start = DVector::zeros(data.p() + 1);
    Ok(solve_map(&problem, start, lambda_e, clip)?.0)
}

/// Laplace approximation of the log marginal likelihood of the labels,
/// up to terms that do not depend on `lambda_e`.
pub fn log_evidence(post: &LogisticLaplacePosterior, objective_at_map: f64) -> f64 {
    let slopes = (post.map_coef.len() - 1) as f64;
    let log_det_h: f64 = 2.0 * post.hessian_chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -objective_at_map + 0.5 * slopes * post.lambda_e.ln() - 0.5 * log_det_h
}

/// Empirical Bayes: the fit over [`LAMBDA_E_GRID`] with the largest
/// Laplace-approximated marginal likelihood.
pub fn fit_logistic_evidence(data: &ObservedData, rows: &[usize], clip: f64) -> Result<LogisticLaplacePosterior> {
    if let Some(post) = one_class_fit(data, rows, LAMBDA_E_GRID[LAMBDA_E_GRID.len() / 2], clip) {
        return Ok(post);
    }
    let mut best: Option<(f64, LogisticLaplacePosterior)> = None;
    let mut start = DVector::zeros(data.p() + 1);
    let mut problem = build_problem(data, rows, LAMBDA_E_GRID[0])?;
    for &lambda_e in &LAMBDA_E_GRID {
        problem = problem.with_lambda(lambda_e);
        let (post, obj) = solve_map(&problem, start, lambda_e, clip)?;
        let ev = log_evidence(&post, obj);
        start = post.map_coef.clone();
        if best.as_ref().is_none_or(|(b, _)| ev > *b) {
            best = Some((ev, post));
        }
    }
    Ok(best.expect("grid is nonempty").1)
}

impl LogisticLaplacePosterior {
    fn evaluator(&self, coef: &DVector<f64>) -> NuisanceDraw {
        let p = coef.len() - 1;
        NuisanceDraw::Propensity { predictor: FeatureMap::Linear.predictor(coef.as_slice(), p), clip: Some(self.clip) }
    }

    pub fn map_draw(&self) -> NuisanceDraw {
        self.evaluator(&self.map_coef)
    }

    pub fn coef_from_normals(&self, z: &DVector<f64>) -> DVector<f64> {
        let v = self.hessian_chol.tr_solve_lower_triangular(z).expect("Cholesky factor has a positive diagonal");
        &self.map_coef + v
    }
}

/// `beta ~ N(MAP, H^-1)`; evaluator `x -> clamp(logistic(beta'[1, x]))`.
pub fn draw_propensity<R: Rng + ?Sized>(post: &LogisticLaplacePosterior, rng: &mut R) -> NuisanceDraw {
    let d = post.map_coef.len();
    let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    post.evaluator(&post.coef_from_normals(&z))
}
