//! Acceptance gate: one PASS/FAIL line per criterion, then a single assert.
//!
//! The Monte Carlo criteria run 100 replications at n = 1000 and take several
//! minutes on one core.

mod common;

use std::io::Write;
use std::process::Command;

use cbipm::balancers::{Estimand, Method};
use cbipm::bench::{self, BenchConfig, ResultRow, SummaryRow};
use cbipm::discriminators::Family;
use cbipm::simgen::Design;
use common::*;

const REPS: usize = 100;
const N: usize = 1000;
const SEED: u64 = 2024;

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(id: usize, title: &str, o: &Outcome) {
    let status = if o.passed { "PASS" } else { "FAIL" };
    // bypass the test harness capture so the lines always reach the log
    let mut err = std::io::stderr();
    writeln!(err, "[acceptance] criterion {id} {status}: {title} | {}", o.detail).unwrap();
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn run_bench(
    design: Design,
    methods: Vec<Method>,
    estimand: Estimand,
    reps: usize,
) -> (Vec<ResultRow>, Vec<SummaryRow>) {
    let mut cfg = BenchConfig::new(design, N, reps, methods, estimand);
    cfg.master_seed = SEED;
    cfg.threads = threads();
    let rows = bench::run(&cfg).expect("bench config is valid");
    let summary = bench::summary(&rows, estimand);
    (rows, summary)
}

fn get(summary: &[SummaryRow], method: Method) -> &SummaryRow {
    summary
        .iter()
        .find(|s| s.method == method.id())
        .expect("method in summary")
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn fmt(s: &SummaryRow) -> String {
    format!(
        "{} bias {:.3} rmse {:.3} ({} ok, {} failed)",
        s.method, s.bias, s.rmse, s.n_ok, s.n_failed
    )
}

fn all_ok(s: &SummaryRow) -> bool {
    s.n_failed == 0
}

fn criterion_1(summary: &[SummaryRow]) -> Outcome {
    let mmd = get(summary, Method::Ncbipm(Family::Mmd));
    let cbps = get(summary, Method::Cbps);
    let glm = get(summary, Method::Glm);
    let passed = [mmd, cbps, glm].into_iter().all(all_ok)
        && within(mmd.bias, -4.0, -1.5)
        && within(mmd.rmse, 2.2, 4.0)
        && within(cbps.rmse, 3.8, 5.6)
        && within(glm.rmse, 6.0, 9.5)
        && mmd.rmse < cbps.rmse
        && cbps.rmse < glm.rmse;
    Outcome {
        passed,
        detail: format!("{}; {}; {}", fmt(mmd), fmt(cbps), fmt(glm)),
    }
}

fn criterion_2() -> Outcome {
    let (_, summary) = run_bench(
        Design::KsLinear,
        vec![Method::Cbps, Method::Pcbipm(Family::Mmd)],
        Estimand::Att,
        REPS,
    );
    let cbps = get(&summary, Method::Cbps);
    let mmd = get(&summary, Method::Pcbipm(Family::Mmd));
    Outcome {
        passed: all_ok(cbps) && all_ok(mmd) && within(cbps.bias, -0.9, 0.3) && within(mmd.rmse, 1.0, 1.9),
        detail: format!("{}; {}", fmt(cbps), fmt(mmd)),
    }
}

fn criterion_3() -> Outcome {
    let (_, summary) = run_bench(Design::KsLinear, vec![Method::Pcbipm(Family::Mmd)], Estimand::Ate, REPS);
    let mmd = get(&summary, Method::Pcbipm(Family::Mmd));
    Outcome {
        passed: all_ok(mmd) && within(mmd.bias, -0.4, 0.4) && within(mmd.rmse, 0.9, 1.7),
        detail: fmt(mmd),
    }
}

fn criterion_4(summary: &[SummaryRow]) -> Outcome {
    let sipm = get(summary, Method::Ncbipm(Family::Sipm));
    let cbps = get(summary, Method::Cbps);
    let sipm_ok = all_ok(sipm) && sipm.bias.abs() < cbps.bias.abs();

    // the adversarial loss must fall from its first recorded value
    let wass = Method::Ncbipm(Family::Wass);
    let reps = 20;
    let mut cfg = BenchConfig::new(Design::KsNonlinear, N, reps, vec![wass], Estimand::Att);
    cfg.master_seed = SEED;
    let settings = cfg.settings(wass).expect("default settings are valid");
    let decreased: Vec<bool> = {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads()).build().unwrap();
        pool.install(|| {
            (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let data_seed = cfg.data_seed(rep);
                    let (ds, _) =
                        cbipm::simgen::generate(&cbipm::simgen::SimConfig::new(Design::KsNonlinear, N, data_seed))
                            .unwrap();
                    match cbipm::balancers::balance(
                        &ds,
                        wass,
                        Estimand::Att,
                        &settings,
                        bench::method_seed(data_seed, wass),
                    ) {
                        Ok(cbipm::balancers::Balanced::Att(s)) => {
                            s.loss_trace.first().is_some_and(|&l0| s.final_ipm < l0)
                        }
                        _ => false,
                    }
                })
                .collect()
        })
    };
    let share = decreased.iter().filter(|&&b| b).count() as f64 / reps as f64;
    Outcome {
        passed: sipm_ok && share >= 0.95,
        detail: format!(
            "{} vs {}; wass loss decreased in {:.0}% of {reps} reps",
            fmt(sipm),
            fmt(cbps),
            100.0 * share
        ),
    }
}

fn criterion_5() -> Outcome {
    let mmd = mmd_oracle_worst(100, 51);
    let mmd_w = mmd_grad_worst(50, 52);
    let sig = sigmoid_grad_worst(50, 53);
    let mlp = mlp_grad_worst(50, 54);
    Outcome {
        passed: mmd <= 1e-10 && mmd_w <= 1e-4 && sig <= 1e-4 && mlp <= 1e-4,
        detail: format!("mmd abs {mmd:.1e}; grad rel errors mmd-w {mmd_w:.1e}, sigmoid {sig:.1e}, mlp {mlp:.1e}"),
    }
}

fn criterion_6() -> Outcome {
    let (done, worst) = cbps_linear_equivalence(20, 61);
    Outcome {
        passed: done == 20 && worst <= 1e-3,
        detail: format!("{done} instances, worst moment gap {worst:.1e}"),
    }
}

fn criterion_7() -> Outcome {
    let dec = decomposition_worst(25, 71);
    let slack = linear_bound_slack(200, 72);
    let (residual, excess) = eb_dominance(100, 73);
    let sipw = sipw_range_violation(20, 74);
    let ks = ks_uniform_worst(200, 75);
    Outcome {
        passed: dec <= 1e-9 && slack >= 0.0 && residual <= 1e-8 && excess <= 0.0 && sipw <= 0.0 && ks <= 1e-12,
        detail: format!(
            "decomposition {dec:.1e}; ipm bound slack {slack:.1e}; eb residual {residual:.1e}, entropy excess {excess:.1e}; sipw out of range {sipw:.1e}; ks gap {ks:.1e}"
        ),
    }
}

fn criterion_8() -> Outcome {
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::TempDir::new().unwrap()).collect();
    let run = |dir: &tempfile::TempDir, threads: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_cbipm"))
            .args([
                "bench",
                "--design",
                "ks_nonlinear",
                "--n",
                "200",
                "--reps",
                "6",
                "--methods",
                "glm,cbps,eb,pcbipm-mmd,pcbipm-sipm,pcbipm-wass,ncbipm-mmd,ncbipm-sipm,ncbipm-wass",
                "--iters",
                "40",
                "--seed",
                "8",
                "--quiet",
                "--threads",
                threads,
                "--out",
            ])
            .arg(dir.path())
            .output()
            .expect("run cbipm");
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(dir.path().join("results.csv")).unwrap()
    };
    let a = run(&dirs[0], "1");
    let b = run(&dirs[1], "1");
    let c = run(&dirs[2], "4");
    Outcome {
        passed: a == b && a == c && !a.is_empty(),
        detail: format!(
            "results.csv of {} bytes; repeat identical {}, 1 vs 4 threads identical {}",
            a.len(),
            a == b,
            a == c
        ),
    }
}

#[test]
fn acceptance() {
    let (_, nonlinear) = run_bench(
        Design::KsNonlinear,
        vec![
            Method::Glm,
            Method::Cbps,
            Method::Ncbipm(Family::Mmd),
            Method::Ncbipm(Family::Sipm),
        ],
        Estimand::Att,
        REPS,
    );
    let results = [
        (
            1,
            "Kang-Schafer nonlinear ATT bands and RMSE ordering",
            criterion_1(&nonlinear),
        ),
        (2, "Kang-Schafer linear ATT bands", criterion_2()),
        (3, "Kang-Schafer linear ATE bands", criterion_3()),
        (
            4,
            "sigmoid IPM beats CBPS; Wasserstein loss decreases",
            criterion_4(&nonlinear),
        ),
        (5, "closed forms and gradients match oracles", criterion_5()),
        (6, "CBPS and linear P-CBIPM balance first moments", criterion_6()),
        (7, "structural invariants", criterion_7()),
        (8, "bench determinism across runs and thread counts", criterion_8()),
    ];
    for (id, title, o) in &results {
        report(*id, title, o);
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
