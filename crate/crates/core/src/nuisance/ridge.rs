//! Conjugate Bayesian ridge regression.
//!
//! Prior: flat intercept, `theta | s2 ~ N(0, s2 / lambda I)`, `p(s2) ∝ 1/s2`.
//! Posterior: `coef | s2 ~ N(mean, s2 P^-1)` with `P = X'X + lambda J`
//! (`J = diag(0, 1, ..., 1)`) and `s2 ~ InvGamma(dof / 2, rss / 2)`, where
//! `rss` is the penalized residual sum at the posterior mean.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{FeatureMap, Lambda, NuisanceDraw, LAMBDA_GRID};
use crate::data::ArmSubset;
use crate::error::{Error, Result};

const CV_FOLDS: usize = 5;

#[derive(Debug, Clone)]
pub struct RidgeRegressionPosterior {
    /// Intercept first, then the feature coefficients.
    pub coef_mean: DVector<f64>,
    /// Lower Cholesky factor `L` of the posterior precision `P = L L'`.
    pub coef_precision_chol: DMatrix<f64>,
    pub rss: f64,
    pub dof: f64,
    pub lambda: f64,
    pub features: FeatureMap,
    /// Raw covariate dimension.
    pub p: usize,
}

/// Sufficient statistics `X'X`, `X'y`, `y'y` of a design with intercept.
#[derive(Clone)]
struct Gram {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    n: usize,
}

impl Gram {
    fn zeros(d: usize) -> Self {
        Gram { xtx: DMatrix::zeros(d, d), xty: DVector::zeros(d), yty: 0.0, n: 0 }
    }

    fn add_row(&mut self, f: &[f64], y: f64) {
        let d = f.len();
        for a in 0..d {
            let fa = f[a];
            self.xty[a] += fa * y;
            for b in a..d {
                self.xtx[(a, b)] += fa * f[b];
            }
        }
        self.yty += y * y;
        self.n += 1;
    }

    fn symmetrize(&mut self) {
        let d = self.xty.len();
        for a in 0..d {
            for b in 0..a {
                self.xtx[(a, b)] = self.xtx[(b, a)];
            }
        }
    }

    fn minus(&self, other: &Gram) -> Gram {
        Gram {
            xtx: &self.xtx - &other.xtx,
            xty: &self.xty - &other.xty,
            yty: self.yty - other.yty,
            n: self.n - other.n,
        }
    }

    /// Cholesky factor of `X'X + lambda J` and the solution of the normal equations.
    fn solve(&self, lambda: f64) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let mut prec = self.xtx.clone();
        for j in 1..prec.nrows() {
            prec[(j, j)] += lambda;
        }
        let chol = prec.cholesky()?;
        let coef = chol.solve(&self.xty);
        Some((chol.unpack(), coef))
    }

    /// Squared prediction error of `coef` on the rows summarized by `self`.
    fn sse(&self, coef: &DVector<f64>) -> f64 {
        self.yty - 2.0 * coef.dot(&self.xty) + coef.dot(&(&self.xtx * coef))
    }
}

/// Fits the conjugate ridge posterior on one arm of a training fold.
pub fn fit_ridge(train: &ArmSubset<'_>, lambda: Lambda, features: FeatureMap) -> Result<RidgeRegressionPosterior> {
    let data = train.parent;
    let p = data.p();
    let d = features.dim(p) + 1;
    let n = train.len();
    if n < d + 2 {
        return Err(Error::TooFewRows { needed: d + 2, got: n });
    }

    let folds = CV_FOLDS.min(n);
    let mut parts = vec![Gram::zeros(d); folds];
    let mut row = Vec::with_capacity(d);
    for (pos, &i) in train.indices.iter().enumerate() {
        features.design_row(data.x_row(i), &mut row);
        parts[pos % folds].add_row(&row, data.y()[i]);
    }
    for g in parts.iter_mut() {
        g.symmetrize();
    }
    let mut total = Gram::zeros(d);
    for g in &parts {
        total.xtx += &g.xtx;
        total.xty += &g.xty;
        total.yty += g.yty;
        total.n += g.n;
    }

    let lambda = match lambda {
        Lambda::Fixed(v) => v,
        Lambda::Cv => select_lambda_cv(&total, &parts),
    };

    let (chol, coef) = total.solve(lambda).ok_or(Error::RankDeficient)?;

    let mut rss = 0.0;
    for &i in &train.indices {
        features.design_row(data.x_row(i), &mut row);
        let fit: f64 = row.iter().zip(coef.iter()).map(|(a, b)| a * b).sum();
        let r = data.y()[i] - fit;
        rss += r * r;
    }
    rss += lambda * coef.rows(1, d - 1).norm_squared();

    let dof = if lambda > 0.0 { n - 1 } else { n - d };

    Ok(RidgeRegressionPosterior {
        coef_mean: coef,
        coef_precision_chol: chol,
        rss,
        dof: dof as f64,
        lambda,
        features,
        p,
    })
}

/// Grid penalty with the smallest held-out squared error of the posterior
/// mean; rows are dealt to folds round-robin so the choice is deterministic.
fn select_lambda_cv(total: &Gram, parts: &[Gram]) -> f64 {
    let train_sets: Vec<Gram> = parts.iter().map(|g| total.minus(g)).collect();
    let mut best = (f64::INFINITY, LAMBDA_GRID[0]);
    for &lambda in &LAMBDA_GRID {
        let mut err = 0.0;
        for (held, train) in parts.iter().zip(&train_sets) {
            match train.solve(lambda) {
                Some((_, coef)) => err += held.sse(&coef),
                None => {
                    err = f64::INFINITY;
                    break;
                }
            }
        }
        if err < best.0 {
            best = (err, lambda);
        }
    }
    best.1
}

impl RidgeRegressionPosterior {
    pub fn mean_draw(&self) -> NuisanceDraw {
        NuisanceDraw::Regression(self.features.predictor(self.coef_mean.as_slice(), self.p))
    }

    /// Coefficients for given noise variance and standard-normal vector.
    pub fn coef_from_normals(&self, sigma2: f64, z: &DVector<f64>) -> DVector<f64> {
        let v = self.coef_precision_chol.tr_solve_lower_triangular(z).expect("Cholesky factor has a positive diagonal");
        &self.coef_mean + v * sigma2.sqrt()
    }
}

/// One posterior draw: `s2 ~ InvGamma(dof/2, rss/2)`, then the coefficients.
pub fn draw_regression<R: Rng + ?Sized>(post: &RidgeRegressionPosterior, rng: &mut R) -> NuisanceDraw {
    let sigma2 = if post.rss > 0.0 {
        let g = Gamma::new(post.dof / 2.0, 1.0).expect("dof >= 1").sample(rng);
        0.5 * post.rss / g
    } else {
        0.0
    };
    let d = post.coef_mean.len();
    let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let coef = post.coef_from_normals(sigma2, &z);
    NuisanceDraw::Regression(post.features.predictor(coef.as_slice(), post.p))
}
