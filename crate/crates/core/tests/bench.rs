use drdb::bench::{
    eif_values, generate_dgp, metrics, naive_estimator, oracle_estimator, read_metrics, run_replications,
    run_simulation, write_metrics, DgpConfig, Family, Method, MethodSettings, ReplicationRecord, SimulationConfig,
};
use drdb::data::split_folds;
use drdb::drdb::{estimate, RunConfig};
use drdb::nuisance::{NuisanceConfig, P1Source};
use drdb::stats;

fn quick() -> MethodSettings {
    MethodSettings { k: 5, m_draws: 200, alpha: 0.05 }
}

fn estimates(records: &[ReplicationRecord], method: Method) -> Vec<f64> {
    records.iter().filter(|r| r.method == method).map(|r| r.outcome.as_ref().unwrap().0).collect()
}

#[test]
fn mse_decomposes_into_bias_and_spread() {
    let dgp = DgpConfig::new(300, 5, 2, Family::Linear);
    let methods = [Method::Oracle, Method::Naive];
    let reps = 30;
    let records = run_replications(&dgp, &methods, reps, 4, &quick()).unwrap();
    let rows = metrics(&dgp, &methods, &records, reps, dgp.true_ate());
    for (row, &m) in rows.iter().zip(&methods) {
        let est = estimates(&records, m);
        let spread = stats::sample_variance(&est).unwrap() * (reps - 1) as f64 / reps as f64;
        assert!((row.mse - row.bias * row.bias - spread).abs() < 1e-12, "{row:?}");
        assert_eq!((row.reps, row.failures, row.n, row.p, row.s), (reps, 0, 300, 5, 2));
    }
}

#[test]
fn oracle_estimator_is_calibrated() {
    let dgp = DgpConfig::new(500, 10, 3, Family::Linear);
    let reps = 200;
    let records = run_replications(&dgp, &[Method::Oracle], reps, 11, &quick()).unwrap();
    let row = &metrics(&dgp, &[Method::Oracle], &records, reps, dgp.true_ate())[0];
    assert!((0.9..=0.99).contains(&row.cov), "{row:?}");
    assert!(row.bias.abs() < 3.0 * (row.mse / reps as f64).sqrt(), "{row:?}");
}

#[test]
fn naive_misses_under_confounding() {
    let dgp = DgpConfig::new(1000, 10, 3, Family::Quadratic);
    let reps = 40;
    let records = run_replications(&dgp, &[Method::Naive], reps, 2, &quick()).unwrap();
    let row = &metrics(&dgp, &[Method::Naive], &records, reps, dgp.true_ate())[0];
    assert!(row.cov < 0.5, "{row:?}");
}

#[test]
fn oracle_drdb_matches_eif_mean_fold_by_fold() {
    let dgp = DgpConfig::new(600, 6, 3, Family::Quadratic);
    let (data, truth) = generate_dgp(&dgp, 19).unwrap();
    let cfg = RunConfig {
        seed: 3,
        nuisance: NuisanceConfig { p1_source: P1Source::Test, ..NuisanceConfig::oracle(truth.clone()) },
        ..Default::default()
    };
    let s = estimate(&data, &cfg).unwrap();
    let plan = split_folds(data.n(), cfg.k, cfg.seed).unwrap();
    let fold_eif: f64 =
        (0..cfg.k).map(|f| stats::mean(&eif_values(&data, &truth, plan.test_indices(f)))).sum::<f64>() / cfg.k as f64;
    assert!((s.closed_form_mean - fold_eif).abs() < 1e-10);
    let full = oracle_estimator(&data, &truth, 0.05);
    assert!((full.estimate - fold_eif).abs() < 1e-10, "equal fold sizes make the two averages agree");
}

#[test]
fn naive_interval_is_welch() {
    let (data, _) = generate_dgp(&DgpConfig::new(200, 3, 1, Family::Linear), 5).unwrap();
    let est = naive_estimator(&data, 0.05).unwrap();
    let split = |arm: u8| -> Vec<f64> { (0..data.n()).filter(|&i| data.t()[i] == arm).map(|i| data.y()[i]).collect() };
    let (y1, y0) = (split(1), split(0));
    assert!((est.estimate - (stats::mean(&y1) - stats::mean(&y0))).abs() < 1e-12);
    let ci = est.ci.unwrap();
    assert!((0.5 * (ci[0] + ci[1]) - est.estimate).abs() < 1e-12);
}

#[test]
fn failures_are_counted_and_excluded() {
    let dgp = DgpConfig::new(100, 2, 1, Family::Linear);
    let rec = |rep, outcome| ReplicationRecord { rep, method: Method::DrdbRidge, outcome };
    let records = vec![rec(0, Ok((1.0, [0.0, 3.0]))), rec(1, Err("degenerate".into())), rec(2, Ok((3.0, [2.5, 3.5])))];
    let row = &metrics(&dgp, &[Method::DrdbRidge], &records, 3, 2.0)[0];
    assert_eq!(row.failures, 1);
    assert_eq!((row.bias, row.mse, row.cov, row.ci_len), (0.0, 1.0, 0.5, 2.0));
    assert!(row.flagged());
}

#[test]
fn campaigns_ignore_thread_count() {
    let mut cfg: SimulationConfig = serde_json::from_str(
        r#"{"p": 4, "s": 2, "n": 200, "methods": ["Oracle", "Naive", "DRDB-R"], "reps": 4, "seed": 9, "m_draws": 100}"#,
    )
    .unwrap();
    cfg.threads = Some(1);
    let one = run_simulation(&cfg).unwrap();
    cfg.threads = Some(4);
    assert_eq!(one, run_simulation(&cfg).unwrap());
    assert_eq!(one.len(), 3);
}

#[test]
fn config_rejects_bad_campaigns() {
    let parse = |s: &str| serde_json::from_str::<SimulationConfig>(s);
    assert!(parse(r#"{"p": 4, "s": 2, "n": 200, "methods": ["Oracle"], "colour": 1}"#).is_err());
    let one_rep = parse(r#"{"p": 4, "s": 2, "n": 200, "methods": ["Oracle"], "reps": 1}"#).unwrap();
    let err = run_simulation(&one_rep).unwrap_err();
    assert!(err.is_validation());
    assert!(err.to_string().contains("reps ≥ 2 required"));
    let no_design = parse(r#"{"methods": ["Oracle"]}"#).unwrap();
    assert!(no_design.validate().is_err());
    let grid = parse(
        r#"{"methods": ["drdb-o"], "grid": [{"n": 300, "p": 4, "s": 2, "family": "quadratic"}, {"n": 300, "p": 6, "s": 3}]}"#,
    )
    .unwrap();
    assert_eq!(grid.designs().unwrap().len(), 2);
    assert_eq!(grid.methods, vec![Method::DrdbOracle]);
}

#[test]
fn metrics_csv_round_trips() {
    let dgp = DgpConfig::new(200, 4, 2, Family::Linear);
    let records = run_replications(&dgp, &[Method::Oracle, Method::Naive], 3, 1, &quick()).unwrap();
    let rows = metrics(&dgp, &[Method::Oracle, Method::Naive], &records, 3, dgp.true_ate());
    let mut buf = Vec::new();
    write_metrics(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("method,p,s,n,reps,bias,mse,cov,ci_len,failures\n"));
    assert_eq!(read_metrics(buf.as_slice()).unwrap(), rows);

    let mut empty = Vec::new();
    write_metrics(&mut empty, &[]).unwrap();
    assert_eq!(String::from_utf8(empty.clone()).unwrap(), "method,p,s,n,reps,bias,mse,cov,ci_len,failures\n");
    assert!(read_metrics(empty.as_slice()).unwrap().is_empty());
}
