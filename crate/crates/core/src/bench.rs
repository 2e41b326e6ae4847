//! Monte Carlo replication harness.
//!
//! Replications run in parallel on a dedicated rayon pool. Every replication
//! derives its data seed from `(master_seed, rep)` and every method its own
//! seed from the data seed and the method id, so results do not depend on the
//! thread count or on the order methods are listed in.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balancers::{balance, Estimand, Method, Overrides, Settings};
use crate::diagnostics::summarize;
use crate::error::{Error, Result};
use crate::estimators::{decompose_error, estimate};
use crate::seed::{derive, hash_str};
use crate::simgen::{generate, Design, SimConfig};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub design: Design,
    pub n: usize,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub estimand: Estimand,
    pub master_seed: u64,
    pub threads: usize,
    pub overrides: Overrides,
    pub noise_sd: Option<f64>,
    /// Log one line per finished replication to stderr.
    pub progress: bool,
}

impl BenchConfig {
    pub fn new(design: Design, n: usize, reps: usize, methods: Vec<Method>, estimand: Estimand) -> Self {
        BenchConfig {
            design,
            n,
            reps,
            methods,
            estimand,
            master_seed: 0,
            threads: 1,
            overrides: Overrides::default(),
            noise_sd: None,
            progress: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods given".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        for &m in &self.methods {
            self.settings(m)?;
        }
        Ok(())
    }

    pub fn settings(&self, method: Method) -> Result<Settings> {
        let mut s = Settings::for_method(method);
        s.apply(&self.overrides)?;
        Ok(s)
    }

    pub fn data_seed(&self, rep: usize) -> u64 {
        derive(self.master_seed, rep as u64)
    }
}

/// Seed of `method` on a dataset drawn with `data_seed`.
pub fn method_seed(data_seed: u64, method: Method) -> u64 {
    derive(data_seed, hash_str(&method.id()))
}

/// One (replication, method) cell. Failed cells carry the error message and
/// no numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub rep: usize,
    pub method: String,
    pub estimate: Option<f64>,
    pub truth: f64,
    pub final_ipm: Option<f64>,
    pub err_bal: Option<f64>,
    pub err_obs: Option<f64>,
    pub n0: Option<usize>,
    pub n1: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub estimand: Estimand,
    pub bias: f64,
    pub rmse: f64,
    pub sd: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

pub fn run_replication(cfg: &BenchConfig, rep: usize) -> Vec<ResultRow> {
    let data_seed = cfg.data_seed(rep);
    let truth = match cfg.estimand {
        Estimand::Att => cfg.design.truth().0,
        Estimand::Ate => cfg.design.truth().1,
    };
    let failed = |method: Method, e: &Error| ResultRow {
        rep,
        method: method.id(),
        estimate: None,
        truth,
        final_ipm: None,
        err_bal: None,
        err_obs: None,
        n0: None,
        n1: None,
        error: Some(e.to_string()),
    };
    let sim = SimConfig {
        design: cfg.design,
        n: cfg.n,
        noise_sd: cfg.noise_sd,
        seed: data_seed,
    };
    let (ds, oracle) = match generate(&sim) {
        Ok(v) => v,
        Err(e) => return cfg.methods.iter().map(|&m| failed(m, &e)).collect(),
    };
    let gv = ds.groups();
    cfg.methods
        .iter()
        .map(|&method| {
            let run = || -> Result<ResultRow> {
                let settings = cfg.settings(method)?;
                let fit = balance(&ds, method, cfg.estimand, &settings, method_seed(data_seed, method))?;
                let value = estimate(&ds, &fit)?;
                let dec = decompose_error(&ds, &fit, &oracle)?;
                Ok(ResultRow {
                    rep,
                    method: method.id(),
                    estimate: Some(value),
                    truth,
                    final_ipm: Some(fit.solutions().iter().map(|s| s.final_ipm).sum()),
                    err_bal: Some(dec.err_bal),
                    err_obs: Some(dec.err_obs),
                    n0: Some(gv.n0()),
                    n1: Some(gv.n1()),
                    error: None,
                })
            };
            run().unwrap_or_else(|e| failed(method, &e))
        })
        .collect()
}

/// Runs every replication and returns the rows ordered by replication, then
/// by method as listed.
pub fn run(cfg: &BenchConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let per_rep: Vec<Vec<ResultRow>> = pool.install(|| {
        (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                let rows = run_replication(cfg, rep);
                if cfg.progress {
                    let failed = rows.iter().filter(|r| r.error.is_some()).count();
                    eprintln!("rep {rep}: {} methods, {failed} failed", rows.len());
                }
                rows
            })
            .collect()
    });
    Ok(per_rep.into_iter().flatten().collect())
}

/// Bias and RMSE per method over the successful rows, in first-seen method
/// order.
pub fn summary(rows: &[ResultRow], estimand: Estimand) -> Vec<SummaryRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let mine: Vec<&ResultRow> = rows.iter().filter(|r| r.method == m).collect();
            let ok: Vec<f64> = mine.iter().filter_map(|r| r.estimate).collect();
            let truth = mine.first().map_or(0.0, |r| r.truth);
            let (bias, rmse, sd) = match summarize(&ok, truth) {
                Ok(s) => (s.bias, s.rmse, s.sd()),
                Err(_) => (f64::NAN, f64::NAN, f64::NAN),
            };
            SummaryRow {
                method: m.to_owned(),
                estimand,
                bias,
                rmse,
                sd,
                n_ok: ok.len(),
                n_failed: mine.len() - ok.len(),
            }
        })
        .collect()
}

pub fn write_rows<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_rows(rows, std::io::BufWriter::new(file))
}

pub fn load_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
