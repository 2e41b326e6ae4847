use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use cbipm::balancers::{balance, BalanceSolution, Balanced, Estimand, Method, Overrides, Settings};
use cbipm::bench::{self, BenchConfig};
use cbipm::data::{load_csv, load_oracle_csv, load_weights_csv, save_csv, save_oracle_csv, save_weights_csv};
use cbipm::data::{CsvSchema, Dataset, WeightVector};
use cbipm::diagnostics::{qq_pairs, weighted_ks};
use cbipm::estimators::{ate_weighted, att_weighted, decompose_ate, decompose_att, EstimateReport};
use cbipm::simgen::{self, Design, SimConfig};
use cbipm::{Error, Result, Side};

#[derive(Debug, Parser)]
#[command(name = "cbipm", version, about = "Covariate balancing by IPM minimization")]
pub struct Cli {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for replications.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a simulated dataset and its oracle.
    Simulate(SimulateArgs),
    /// Fit weights for one method.
    Balance(BalanceArgs),
    /// Compute a weighted ATT or ATE.
    Estimate(EstimateArgs),
    /// Monte Carlo bias and RMSE over replications.
    Bench(BenchArgs),
    /// KS statistics and QQ pairs of weighted covariates.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub design: String,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Also recompute the population ATT/ATE from this many fresh draws.
    #[arg(long)]
    pub oracle_draws: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input dataset CSV.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "t")]
    pub treatment: String,
    #[arg(long, default_value = "y")]
    pub outcome: String,
    /// Comma-separated covariate columns; defaults to every other column.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let schema = CsvSchema {
            treatment: self.treatment.clone(),
            outcome: Some(self.outcome.clone()),
            covariates: self.covariates.clone(),
        };
        load_csv(&self.input, &schema)
    }
}

#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    /// Descent learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Ascent learning rate.
    #[arg(long)]
    pub lr_adv: Option<f64>,
    /// Outer iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Ascent steps per outer iteration.
    #[arg(long)]
    pub iters_adv: Option<usize>,
    /// RBF kernel width.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Gradient-penalty weight.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub gp_samples: Option<usize>,
    #[arg(long)]
    pub ensemble_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Parameter clipping bound of the Lipschitz network.
    #[arg(long)]
    pub clip: Option<f64>,
    /// Half-width of the uniform discriminator initialization.
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// z-score covariates before balancing (the default).
    #[arg(long, conflicts_with = "raw")]
    pub standardize: bool,
    /// Balance on the covariates as given.
    #[arg(long)]
    pub raw: bool,
    /// Return the iterate with the smallest loss instead of the last one.
    #[arg(long)]
    pub best_iterate: bool,
    /// Stop once the loss changes by less than this over 50 iterations.
    #[arg(long)]
    pub tol: Option<f64>,
}

impl HyperArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            lr: self.lr,
            lr_adv: self.lr_adv,
            iters: self.iters,
            iters_adv: self.iters_adv,
            gamma: self.gamma,
            tau: self.tau,
            gp_samples: self.gp_samples,
            ensemble_size: self.ensemble_size,
            hidden: self.hidden,
            clip: self.clip,
            init_scale: self.init_scale,
            tol: self.tol,
            best_iterate: self.best_iterate,
            raw: self.raw,
        }
    }
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub method: String,
    #[arg(long, default_value = "att")]
    pub estimand: String,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Weights file from `balance`; without it `--method` is fitted first.
    #[arg(long, conflicts_with = "method")]
    pub weights: Option<PathBuf>,
    #[arg(long, required_unless_present = "weights")]
    pub method: Option<String>,
    #[arg(long, default_value = "att")]
    pub estimand: String,
    /// Oracle sidecar from `simulate`, for the error decomposition.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Design the oracle came from; sets the population effects.
    #[arg(long, requires = "oracle")]
    pub design: Option<String>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub design: String,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Comma-separated method ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub methods: Vec<String>,
    #[arg(long, default_value = "att")]
    pub estimand: String,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Suppress the per-replication log line.
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub weights: PathBuf,
    /// Label for the supplied weights in the output tables.
    #[arg(long, default_value = "weighted")]
    pub label: String,
    #[arg(long, default_value_t = 99)]
    pub quantiles: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    fs::create_dir_all(&cli.out).map_err(|e| Error::Io {
        path: cli.out.clone(),
        source: e,
    })?;
    match &cli.command {
        Command::Simulate(a) => simulate(&cli, a),
        Command::Balance(a) => balance_cmd(&cli, a),
        Command::Estimate(a) => estimate_cmd(&cli, a),
        Command::Bench(a) => bench_cmd(&cli, a),
        Command::Diagnose(a) => diagnose(&cli, a),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let design: Design = a.design.parse()?;
    let cfg = SimConfig {
        design,
        n: a.n,
        noise_sd: a.noise_sd,
        seed: cli.seed,
    };
    let (ds, oracle) = simgen::generate(&cfg)?;
    save_csv(&ds, cli.out.join("dataset.csv"))?;
    save_oracle_csv(&oracle, cli.out.join("oracle.csv"))?;
    let mut meta = json!({
        "design": design.as_str(),
        "n": cfg.n,
        "noise_sd": cfg.noise_sd(),
        "seed": cfg.seed,
        "rng": simgen::RNG_NAME,
        "true_att": oracle.true_att,
        "true_ate": oracle.true_ate,
    });
    if let Some(draws) = a.oracle_draws {
        let (att, ate) = simgen::monte_carlo_truth(design, draws, cli.seed)?;
        meta["monte_carlo"] = json!({ "draws": draws, "att": att, "ate": ate });
        println!("monte carlo ({draws} draws): att {att:.4} ate {ate:.4}");
    }
    write_json(&cli.out.join("simulation.json"), &meta)?;
    let gv = ds.groups();
    println!(
        "{}: n={} n0={} n1={} -> {}",
        design,
        gv.n(),
        gv.n0(),
        gv.n1(),
        cli.out.join("dataset.csv").display()
    );
    Ok(())
}

fn settings_for(method: Method, hyper: &HyperArgs) -> Result<Settings> {
    let mut s = Settings::for_method(method);
    s.apply(&hyper.overrides())?;
    Ok(s)
}

fn solution_json(s: &BalanceSolution) -> serde_json::Value {
    let norm = s.theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut v = json!({
        "final_ipm": s.final_ipm,
        "iterations": s.iterations,
        "residual_norm": s.residual_norm,
        "theta_len": s.theta.len(),
        "theta_norm": norm,
        "loss_trace": s.loss_trace,
        "seed": s.seed,
        "warnings": s.warnings,
        "max_weight": s.weights.max_weight(),
    });
    // per-unit logits are summarized only
    if s.theta.len() <= 64 {
        v["theta"] = json!(s.theta);
    }
    v
}

fn balance_cmd(cli: &Cli, a: &BalanceArgs) -> Result<()> {
    let ds = a.data.load()?;
    let method: Method = a.method.parse()?;
    let estimand: Estimand = a.estimand.parse()?;
    let settings = settings_for(method, &a.hyper)?;
    let fit = balance(&ds, method, estimand, &settings, cli.seed)?;
    let weights_path = cli.out.join("weights.csv");
    let sides = match &fit {
        Balanced::Att(s) => {
            save_weights_csv(&ds, &s.weights, None, &weights_path)?;
            json!({ "control": solution_json(s) })
        }
        Balanced::Ate { control, treated } => {
            save_weights_csv(&ds, &control.weights, Some(&treated.weights), &weights_path)?;
            json!({ "control": solution_json(control), "treated": solution_json(treated) })
        }
    };
    let gv = ds.groups();
    let doc = json!({
        "method": method.id(),
        "estimand": estimand,
        "seed": cli.seed,
        "n": gv.n(),
        "n0": gv.n0(),
        "n1": gv.n1(),
        "hyperparameters": settings,
        "solutions": sides,
    });
    write_json(&cli.out.join("solution.json"), &doc)?;
    for s in fit.solutions() {
        for w in &s.warnings {
            eprintln!("warning: {w}");
        }
    }
    let ipm: f64 = fit.solutions().iter().map(|s| s.final_ipm).sum();
    println!(
        "{method} ({estimand}): final ipm {ipm:.6e} -> {}",
        weights_path.display()
    );
    Ok(())
}

fn estimate_cmd(cli: &Cli, a: &EstimateArgs) -> Result<()> {
    let ds = a.data.load()?;
    let estimand: Estimand = a.estimand.parse()?;
    let gv = ds.groups();
    let (w0, w1, mut doc) = match (&a.weights, &a.method) {
        (Some(path), _) => {
            let (w0, w1) = load_weights_csv(&ds, path)?;
            let doc = json!({
                "estimand": estimand,
                "method": "weights-file",
                "n": gv.n(),
                "n0": gv.n0(),
                "n1": gv.n1(),
            });
            (w0, w1, doc)
        }
        (None, Some(m)) => {
            let method: Method = m.parse()?;
            let settings = settings_for(method, &a.hyper)?;
            let fit = balance(&ds, method, estimand, &settings, cli.seed)?;
            let doc = serde_json::to_value(EstimateReport::new(&ds, method, &fit)?)?;
            let (w0, w1) = match fit {
                Balanced::Att(s) => (s.weights, WeightVector::uniform(&gv, Side::Treated)),
                Balanced::Ate { control, treated } => (control.weights, treated.weights),
            };
            (w0, w1, doc)
        }
        (None, None) => return Err(Error::InvalidConfig("either --weights or --method is required".into())),
    };
    let value = match estimand {
        Estimand::Att => att_weighted(&ds, &w0)?,
        Estimand::Ate => ate_weighted(&ds, &w0, &w1)?,
    };
    doc["value"] = json!(value);
    if let Some(path) = &a.oracle {
        let (att, ate) = match &a.design {
            Some(d) => d.parse::<Design>()?.truth(),
            None => (0.0, 0.0),
        };
        let oracle = load_oracle_csv(path, att, ate)?;
        let (dec, truth) = match estimand {
            Estimand::Att => (decompose_att(&ds, &w0, &oracle)?, att),
            Estimand::Ate => (decompose_ate(&ds, &w0, &w1, &oracle)?, ate),
        };
        doc["decomposition"] = serde_json::to_value(dec)?;
        doc["truth"] = json!(truth);
    }
    write_json(&cli.out.join("estimate.json"), &doc)?;
    println!("{estimand} {value:.6}");
    Ok(())
}

fn bench_cmd(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let design: Design = a.design.parse()?;
    let estimand: Estimand = a.estimand.parse()?;
    let methods = a
        .methods
        .iter()
        .map(|m| m.trim().parse())
        .collect::<Result<Vec<Method>>>()?;
    let cfg = BenchConfig {
        design,
        n: a.n,
        reps: a.reps,
        methods,
        estimand,
        master_seed: cli.seed,
        threads: cli.threads,
        overrides: a.hyper.overrides(),
        noise_sd: a.noise_sd,
        progress: !a.quiet,
    };
    let rows = bench::run(&cfg)?;
    let summary = bench::summary(&rows, estimand);
    bench::save_rows(&rows, &cli.out.join("results.csv"))?;
    bench::save_rows(&summary, &cli.out.join("summary.csv"))?;
    println!(
        "{:<14} {:>10} {:>10} {:>6} {:>6}",
        "method", "bias", "rmse", "ok", "failed"
    );
    for s in &summary {
        println!(
            "{:<14} {:>10.4} {:>10.4} {:>6} {:>6}",
            s.method, s.bias, s.rmse, s.n_ok, s.n_failed
        );
    }
    Ok(())
}

fn diagnose(cli: &Cli, a: &DiagnoseArgs) -> Result<()> {
    let ds = a.data.load()?;
    let (w0, w1) = load_weights_csv(&ds, &a.weights)?;
    let gv = ds.groups();
    let uniform0 = WeightVector::uniform(&gv, Side::Control);
    let uniform1 = WeightVector::uniform(&gv, Side::Treated);
    let schemes = [("eq.w", &uniform0, &uniform1), (a.label.as_str(), &w0, &w1)];

    let mut ks = csv::Writer::from_path(cli.out.join("ks.csv"))?;
    ks.write_record(["variable", "method", "ks_stat", "p_value"])?;
    for (j, name) in ds.covariate_names().iter().enumerate() {
        let col = ds.column(j);
        let pick = |idx: &[usize]| idx.iter().map(|&i| col[i]).collect::<Vec<f64>>();
        let (c_vals, t_vals) = (pick(&gv.control_idx), pick(&gv.treated_idx));
        let mut qq = csv::Writer::from_path(cli.out.join(format!("qq_{}.csv", sanitize(name))))?;
        qq.write_record(["method", "q_treated", "q_control"])?;
        for (label, c, t) in schemes {
            let cw = c.group_weights(&gv);
            let tw = t.group_weights(&gv);
            let r = weighted_ks(&t_vals, &tw, &c_vals, &cw)?;
            ks.write_record([name.as_str(), label, &r.statistic.to_string(), &r.p_value.to_string()])?;
            for (q_ref, q) in qq_pairs(&c_vals, &cw, &t_vals, &tw, a.quantiles)? {
                qq.write_record([label, &q_ref.to_string(), &q.to_string()])?;
            }
        }
        qq.flush().map_err(|e| Error::Io {
            path: cli.out.clone(),
            source: e,
        })?;
    }
    ks.flush().map_err(|e| Error::Io {
        path: cli.out.join("ks.csv"),
        source: e,
    })?;
    println!("{} covariates -> {}", ds.d(), cli.out.join("ks.csv").display());
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
