//! Shared fixtures and property checks for the integration suites. Each
//! check returns `Err(description)` on the first violated relation.

#![allow(dead_code)]

use drdb::bench::{generate_dgp, DgpConfig, Family};
use drdb::data::arm_subset;
use drdb::data::{split_folds, FoldPlan, ObservedData};
use drdb::debias::{density_ratio, Contrast, TPosterior};
use drdb::drdb::{fold_posterior, fold_posterior_from_nuisances, run_with_plan, FoldPosterior, RunConfig};
use drdb::estimands::{build_weights, EstimandSpec};
use drdb::nuisance::{
    estimate_p1, fit_logistic_laplace, fit_ridge, FeatureMap, FoldNuisances, Lambda, NuisanceConfig, NuisanceDraw,
    OracleNuisance, Predictor,
};
use drdb::rng;

pub fn linear_data(n: usize, p: usize, seed: u64) -> (ObservedData, OracleNuisance) {
    generate_dgp(&DgpConfig::new(n, p, p.min(3), Family::Linear), seed).unwrap()
}

pub fn fixed_ridge_config(seed: u64) -> RunConfig {
    RunConfig {
        m_draws: 200,
        seed,
        nuisance: NuisanceConfig { lambda: Lambda::Fixed(1.0), ..Default::default() },
        ..Default::default()
    }
}

pub fn close(a: f64, b: f64, tol: f64, scale: f64) -> bool {
    (a - b).abs() <= tol * (a.abs().max(b.abs()).max(scale))
}

fn check_t(what: &str, a: &TPosterior, b: &TPosterior, tol: f64, scale: f64) -> Result<(), String> {
    if a.nu != b.nu || !close(a.eta, b.eta, tol, scale) || !close(a.c2, b.c2, tol, scale * scale) {
        return Err(format!("{what}: {a:?} vs {b:?}"));
    }
    Ok(())
}

fn check_fold(a: &FoldPosterior, b: &FoldPosterior, tol: f64, scale: f64) -> Result<(), String> {
    check_t("cond_base", &a.cond_base, &b.cond_base, tol, scale)?;
    check_t("bias1", a.bias1.as_ref().unwrap(), b.bias1.as_ref().unwrap(), tol, scale)?;
    check_t("bias0", a.bias0.as_ref().unwrap(), b.bias0.as_ref().unwrap(), tol, scale)
}

fn fold_posteriors(data: &ObservedData, plan: &FoldPlan, cfg: &RunConfig) -> Result<Vec<FoldPosterior>, String> {
    (0..plan.k)
        .map(|f| {
            let mut s = rng::stream(cfg.seed, &[rng::TAG_FOLD, f as u64]);
            fold_posterior(data, plan, f, cfg, &mut s).map_err(|e| e.to_string())
        })
        .collect()
}

/// Reordering the rows (and the fold plan with them) leaves every fold
/// posterior and the summary unchanged up to rounding.
pub fn check_permutation_invariance(n: usize, seed: u64) -> Result<(), String> {
    use rand::seq::SliceRandom;
    let (data, _) = linear_data(n, 3, seed);
    let cfg = fixed_ridge_config(seed);
    let plan = split_folds(n, cfg.k, seed).map_err(|e| e.to_string())?;

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, &[99]));
    let y = perm.iter().map(|&i| data.y()[i]).collect();
    let t = perm.iter().map(|&i| data.t()[i]).collect();
    let x = perm.iter().flat_map(|&i| data.x_row(i).to_vec()).collect();
    let permuted = ObservedData::new(y, t, x, data.p()).unwrap();
    let permuted_plan = FoldPlan { assignments: perm.iter().map(|&i| plan.assignments[i]).collect(), ..plan.clone() };

    let a = fold_posteriors(&data, &plan, &cfg)?;
    let b = fold_posteriors(&permuted, &permuted_plan, &cfg)?;
    for (fa, fb) in a.iter().zip(&b) {
        check_fold(fa, fb, 1e-9, 1.0)?;
    }
    let sa = run_with_plan(&data, &plan, &cfg).map_err(|e| e.to_string())?;
    let sb = run_with_plan(&permuted, &permuted_plan, &cfg).map_err(|e| e.to_string())?;
    if !close(sa.mean, sb.mean, 1e-9, 1.0) || !close(sa.ci[0], sb.ci[0], 1e-9, 1.0) {
        return Err(format!("summary {} vs {}", sa.mean, sb.mean));
    }
    Ok(())
}

fn transform_y(data: &ObservedData, scale: f64, shift: f64) -> ObservedData {
    let y = data.y().iter().map(|v| scale * v + shift).collect();
    let x = (0..data.n()).flat_map(|i| data.x_row(i).to_vec()).collect();
    ObservedData::new(y, data.t().to_vec(), x, data.p()).unwrap()
}

/// `Y -> a Y + c` (a > 0) maps ATE posteriors by `a` and the treated-arm
/// mean by `a mu + c`.
pub fn check_shift_scale(n: usize, seed: u64, scale: f64, shift: f64) -> Result<(), String> {
    let (data, _) = linear_data(n, 3, seed);
    let moved = transform_y(&data, scale, shift);
    let cfg = fixed_ridge_config(seed);
    let plan = split_folds(n, cfg.k, seed).map_err(|e| e.to_string())?;
    let a = fold_posteriors(&data, &plan, &cfg)?;
    let b = fold_posteriors(&moved, &plan, &cfg)?;
    let tol = 1e-8;
    let unit = scale.max(1.0) * (1.0 + shift.abs());
    for (fa, fb) in a.iter().zip(&b) {
        let scaled = |p: &TPosterior| TPosterior { nu: p.nu, eta: scale * p.eta, c2: scale * scale * p.c2 };
        check_t("cond_base", &scaled(&fa.cond_base), &fb.cond_base, tol, unit)?;
        check_t("bias1", &scaled(fa.bias1.as_ref().unwrap()), fb.bias1.as_ref().unwrap(), tol, unit)?;
        check_t("bias0", &scaled(fa.bias0.as_ref().unwrap()), fb.bias0.as_ref().unwrap(), tol, unit)?;
    }
    let sa = run_with_plan(&data, &plan, &cfg).map_err(|e| e.to_string())?;
    let sb = run_with_plan(&moved, &plan, &cfg).map_err(|e| e.to_string())?;
    for (u, v) in [(sa.mean, sb.mean), (sa.ci[0], sb.ci[0]), (sa.ci[1], sb.ci[1])] {
        if !close(scale * u, v, tol, unit) {
            return Err(format!("ATE summary {u} scaled by {scale} vs {v}"));
        }
    }
    let mu_cfg = RunConfig { estimand: EstimandSpec::Mu1, ..cfg };
    let ma = run_with_plan(&data, &plan, &mu_cfg).map_err(|e| e.to_string())?;
    let mb = run_with_plan(&moved, &plan, &mu_cfg).map_err(|e| e.to_string())?;
    if !close(scale * ma.mean + shift, mb.mean, tol, unit) {
        return Err(format!("mu1 {} -> {} under ({scale}, {shift})", ma.mean, mb.mean));
    }
    Ok(())
}

/// Fold nuisances at the posterior mean / MAP, so the fold posterior is a
/// deterministic function of the data.
pub fn point_nuisances(data: &ObservedData, train: &[usize]) -> FoldNuisances {
    let fit = |arm| fit_ridge(&arm_subset(data, train, arm).unwrap(), Lambda::Cv, FeatureMap::Linear).unwrap();
    let (f1, f0) = (fit(1), fit(0));
    let e = fit_logistic_laplace(data, train, 1.0, 0.01).unwrap();
    FoldNuisances {
        m1: Some(f1.mean_draw()),
        m0: Some(f0.mean_draw()),
        e: e.map_draw(),
        p1_hat: estimate_p1(data.t(), train, 0.01),
        lambda1: Some(f1.lambda),
        lambda0: Some(f0.lambda),
    }
}

/// Relabelling `t -> 1 - t` negates the conditional location, keeps its
/// scale, and swaps the arm bias posteriors.
pub fn check_label_swap(n: usize, seed: u64) -> Result<(), String> {
    let (data, _) = linear_data(n, 3, seed);
    let swapped = data.with_swapped_labels();
    let plan = split_folds(n, 5, seed).map_err(|e| e.to_string())?;
    for fold in 0..plan.k {
        let (train, test) = (plan.train_indices(fold), plan.test_indices(fold));
        let post = |d: &ObservedData| {
            let nuis = point_nuisances(d, &train);
            let r = density_ratio(&nuis.e, nuis.p1_hat).unwrap();
            fold_posterior_from_nuisances(d, &test, &nuis, &r, Contrast::Difference, fold).map_err(|e| e.to_string())
        };
        let a = post(&data)?;
        let b = post(&swapped)?;
        let neg = TPosterior { eta: -a.cond_base.eta, ..a.cond_base };
        check_t("cond_base", &neg, &b.cond_base, 1e-7, 1.0)?;
        check_t("bias1 <- bias0", a.bias0.as_ref().unwrap(), b.bias1.as_ref().unwrap(), 1e-7, 1.0)?;
        check_t("bias0 <- bias1", a.bias1.as_ref().unwrap(), b.bias0.as_ref().unwrap(), 1e-7, 1.0)?;
        if !close(-a.closed_form_mean(), b.closed_form_mean(), 1e-7, 1.0) {
            return Err(format!("fold mean {} vs {}", a.closed_form_mean(), b.closed_form_mean()));
        }
    }
    Ok(())
}

/// With a constant propensity equal to `p1_hat`, ATT and ATC fold
/// posteriors coincide with the ATE fold posterior.
pub fn check_weight_collapse(n: usize, seed: u64, p1: f64) -> Result<(), String> {
    let (data, _) = linear_data(n, 3, seed);
    let plan = split_folds(n, 5, seed).map_err(|e| e.to_string())?;
    for fold in 0..plan.k {
        let (train, test) = (plan.train_indices(fold), plan.test_indices(fold));
        let mut nuis = point_nuisances(&data, &train);
        let logit = (p1 / (1.0 - p1)).ln();
        nuis.e = NuisanceDraw::Propensity { predictor: Predictor::constant(logit, data.p()), clip: None };
        nuis.p1_hat = nuis.e.eval(data.x_row(0));
        let r = density_ratio(&nuis.e, nuis.p1_hat).unwrap();
        let ate = fold_posterior_from_nuisances(&data, &test, &nuis, &r, Contrast::Difference, fold)
            .map_err(|e| e.to_string())?;
        for spec in [EstimandSpec::Att, EstimandSpec::Atc] {
            let w = build_weights(&spec, &nuis.e, nuis.p1_hat, &data, &train, &test).map_err(|e| e.to_string())?;
            let h = fold_posterior_from_nuisances(&data, &test, &nuis, &w, Contrast::Difference, fold)
                .map_err(|e| e.to_string())?;
            check_fold(&ate, &h, 1e-12, 1.0).map_err(|e| format!("{spec}: {e}"))?;
        }
    }
    Ok(())
}

/// Same seed, same bits, regardless of the worker count.
pub fn check_determinism(n: usize, seed: u64) -> Result<(), String> {
    let (data, _) = linear_data(n, 3, seed);
    let cfg = RunConfig { m_draws: 300, seed, keep_draws: true, ..Default::default() };
    let run_in = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| drdb::estimate(&data, &cfg))
            .map_err(|e| e.to_string())
    };
    let a = run_in(1)?;
    let b = run_in(1)?;
    let c = run_in(3)?;
    if a != b || a != c {
        return Err("summaries differ between identical runs".into());
    }
    let other = drdb::estimate(&data, &RunConfig { seed: seed + 1, ..cfg.clone() }).map_err(|e| e.to_string())?;
    if other.draws == a.draws {
        return Err("different seeds gave identical draws".into());
    }
    Ok(())
}
