//! Monte Carlo harness: simulated designs, reference estimators and the
//! replication loop that turns per-replication intervals into
//! Bias / MSE / Cov / CI-Len rows.

mod baselines;
mod dgp;

pub use baselines::{eif_gamma, eif_values, naive_estimator, oracle_estimator, IntervalEstimate};
pub use dgp::{build_quadratic_truth, generate_dgp, DgpConfig, Family};

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::ObservedData;
use crate::drdb::{self, RunConfig};
use crate::error::{Error, Result};
use crate::nuisance::{FeatureMap, NuisanceConfig, OracleNuisance};
use crate::rng::{derive_seed, TAG_METHOD, TAG_REPLICATION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// EIF mean with the true nuisances.
    Oracle,
    /// Unadjusted difference in means.
    Naive,
    /// DRDB with linear ridge outcome models.
    DrdbRidge,
    /// DRDB with ridge on linear and squared covariates.
    DrdbRidgeQuadratic,
    /// DRDB with the true nuisances plugged in.
    DrdbOracle,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::Oracle, Method::Naive, Method::DrdbRidge, Method::DrdbRidgeQuadratic, Method::DrdbOracle];

    pub fn label(self) -> &'static str {
        match self {
            Method::Oracle => "Oracle",
            Method::Naive => "Naive",
            Method::DrdbRidge => "DRDB-R",
            Method::DrdbRidgeQuadratic => "DRDB-Rq",
            Method::DrdbOracle => "DRDB-O",
        }
    }

    /// Stable stream tag, independent of the method's position in a list.
    fn tag(self) -> u64 {
        match self {
            Method::Oracle => 1,
            Method::Naive => 2,
            Method::DrdbRidge => 3,
            Method::DrdbRidgeQuadratic => 4,
            Method::DrdbOracle => 5,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts the display labels and their lowercase forms.
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.label().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Settings shared by the DRDB methods of a campaign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSettings {
    pub k: usize,
    pub m_draws: usize,
    pub alpha: f64,
}

impl Default for MethodSettings {
    fn default() -> Self {
        MethodSettings { k: 5, m_draws: 1000, alpha: 0.05 }
    }
}

fn drdb_config(method: Method, truth: &OracleNuisance, settings: &MethodSettings, seed: u64) -> RunConfig {
    let nuisance = match method {
        Method::DrdbRidgeQuadratic => NuisanceConfig { features: FeatureMap::Quadratic, ..Default::default() },
        Method::DrdbOracle => NuisanceConfig::oracle(truth.clone()),
        _ => NuisanceConfig::default(),
    };
    RunConfig { k: settings.k, m_draws: settings.m_draws, alpha: settings.alpha, nuisance, seed, ..Default::default() }
}

/// One method on one dataset; `seed` drives the method's own randomness.
pub fn run_method(
    method: Method,
    data: &ObservedData,
    truth: &OracleNuisance,
    settings: &MethodSettings,
    seed: u64,
) -> Result<IntervalEstimate> {
    match method {
        Method::Oracle => Ok(oracle_estimator(data, truth, settings.alpha)),
        Method::Naive => naive_estimator(data, settings.alpha),
        _ => {
            let s = drdb::estimate(data, &drdb_config(method, truth, settings, seed))?;
            Ok(IntervalEstimate { estimate: s.mean, ci: Some(s.ci) })
        }
    }
}

/// Outcome of one method on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub method: Method,
    /// Point estimate and interval, or the failure message.
    pub outcome: std::result::Result<(f64, [f64; 2]), String>,
}

/// Seed of replication `rep`'s dataset.
pub fn replication_seed(master: u64, rep: usize) -> u64 {
    derive_seed(master, &[TAG_REPLICATION, rep as u64])
}

/// Runs every method on `reps` independent datasets. Records come back in
/// `(rep, method)` order regardless of scheduling.
pub fn run_replications(
    dgp: &DgpConfig,
    methods: &[Method],
    reps: usize,
    seed: u64,
    settings: &MethodSettings,
) -> Result<Vec<ReplicationRecord>> {
    if reps < 2 {
        return Err(Error::InvalidConfig("reps ≥ 2 required".into()));
    }
    dgp.validate()?;
    let per_rep: Vec<Vec<ReplicationRecord>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = replication_seed(seed, rep);
            let generated = generate_dgp(dgp, rep_seed);
            methods
                .iter()
                .map(|&method| {
                    let outcome = match &generated {
                        Err(e) => Err(e.to_string()),
                        Ok((data, truth)) => {
                            let method_seed = derive_seed(rep_seed, &[TAG_METHOD, method.tag()]);
                            match run_method(method, data, truth, settings, method_seed) {
                                Ok(IntervalEstimate { estimate, ci: Some(ci) }) => Ok((estimate, ci)),
                                Ok(IntervalEstimate { ci: None, .. }) => Err("interval undefined".to_string()),
                                Err(e) => Err(e.to_string()),
                            }
                        }
                    };
                    ReplicationRecord { rep, method, outcome }
                })
                .collect()
        })
        .collect();
    Ok(per_rep.into_iter().flatten().collect())
}

/// One (design, method) row of a campaign table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub p: usize,
    pub s: usize,
    pub n: usize,
    pub reps: usize,
    pub bias: f64,
    pub mse: f64,
    pub cov: f64,
    pub ci_len: f64,
    pub failures: usize,
}

impl MetricsRow {
    /// More than 1% of replications failed.
    pub fn flagged(&self) -> bool {
        self.failures * 100 > self.reps
    }
}

/// Aggregates `records` against `target`, one row per method in the order
/// given. Failed replications are excluded and counted.
pub fn metrics(
    dgp: &DgpConfig,
    methods: &[Method],
    records: &[ReplicationRecord],
    reps: usize,
    target: f64,
) -> Vec<MetricsRow> {
    methods
        .iter()
        .map(|&method| {
            let mut ok = Vec::new();
            let mut failures = 0;
            for r in records.iter().filter(|r| r.method == method) {
                match &r.outcome {
                    Ok(v) => ok.push(*v),
                    Err(_) => failures += 1,
                }
            }
            let m = ok.len() as f64;
            let avg = |f: &dyn Fn(&(f64, [f64; 2])) -> f64| ok.iter().map(f).sum::<f64>() / m;
            MetricsRow {
                method,
                p: dgp.p,
                s: dgp.s,
                n: dgp.n,
                reps,
                bias: avg(&|(est, _)| est - target),
                mse: avg(&|(est, _)| (est - target).powi(2)),
                cov: avg(&|(_, [lo, hi])| if *lo <= target && target <= *hi { 1.0 } else { 0.0 }),
                ci_len: avg(&|(_, [lo, hi])| hi - lo),
                failures,
            }
        })
        .collect()
}

fn default_reps() -> usize {
    500
}

/// A campaign: one design (or a grid of designs) crossed with methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default)]
    pub p: Option<usize>,
    #[serde(default)]
    pub s: Option<usize>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub family: Family,
    pub methods: Vec<Method>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; `None` uses the ambient pool.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "SimulationConfig::default_k")]
    pub k: usize,
    #[serde(default = "SimulationConfig::default_m_draws")]
    pub m_draws: usize,
    #[serde(default = "SimulationConfig::default_alpha")]
    pub alpha: f64,
    /// Designs to run instead of the single `(n, p, s, family)` one.
    #[serde(default)]
    pub grid: Option<Vec<DgpConfig>>,
}

impl SimulationConfig {
    fn default_k() -> usize {
        5
    }
    fn default_m_draws() -> usize {
        1000
    }
    fn default_alpha() -> f64 {
        0.05
    }

    pub fn settings(&self) -> MethodSettings {
        MethodSettings { k: self.k, m_draws: self.m_draws, alpha: self.alpha }
    }

    pub fn designs(&self) -> Result<Vec<DgpConfig>> {
        if let Some(grid) = &self.grid {
            return Ok(grid.clone());
        }
        match (self.n, self.p, self.s) {
            (Some(n), Some(p), Some(s)) => Ok(vec![DgpConfig::new(n, p, s, self.family)]),
            _ => Err(Error::InvalidConfig("config needs n, p and s (or a grid)".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::InvalidConfig("reps ≥ 2 required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must not be empty".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        let probe = RunConfig { k: self.k, m_draws: self.m_draws, alpha: self.alpha, ..Default::default() };
        for d in self.designs()? {
            d.validate()?;
            probe.validate(d.p)?;
        }
        Ok(())
    }
}

/// Runs the whole campaign, one row per (design, method).
pub fn run_simulation(cfg: &SimulationConfig) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let go = || -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        for dgp in cfg.designs()? {
            let records = run_replications(&dgp, &cfg.methods, cfg.reps, cfg.seed, &cfg.settings())?;
            rows.extend(metrics(&dgp, &cfg.methods, &records, cfg.reps, dgp.true_ate()));
        }
        Ok(rows)
    };
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(go),
        None => go(),
    }
}

pub fn write_metrics<W: Write>(writer: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(["method", "p", "s", "n", "reps", "bias", "mse", "cov", "ci_len", "failures"])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a metrics CSV; an empty input yields no rows.
pub fn read_metrics<R: Read>(reader: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    Ok(r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?)
}
