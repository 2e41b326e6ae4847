//! Independent oracles shared by the integration and acceptance tests.
//!
//! Everything here recomputes quantities from their definitions (double
//! sums, finite differences, bisection, brute-force ECDFs) without calling
//! the library routine under test.

#![allow(dead_code)]

use cbipm::balancers::{balance, cbps_att, eb_att, Estimand, MapKind, Method, Settings, WeightMap};
use cbipm::discriminators::{
    linear_ipm, mlp_objective, moment_gaps, BalanceProblem, Family, LipschitzMlp, RbfMmd, SigmoidEnsemble,
};
use cbipm::estimators::{decompose_ate, decompose_att, estimate};
use cbipm::simgen::{generate, Design, SimConfig};
use cbipm::{Dataset, Side, WeightVector};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Gaussian covariates with a logistic treatment; both groups have at least
/// two units.
pub fn random_dataset<R: Rng>(rng: &mut R, n: usize, d: usize) -> Dataset {
    loop {
        let x: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let beta: Vec<f64> = (0..d).map(|_| rng.random_range(-0.8..0.8)).collect();
        let t: Vec<bool> = (0..n)
            .map(|i| {
                let eta: f64 = x[i * d..(i + 1) * d].iter().zip(&beta).map(|(a, b)| a * b).sum();
                rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp())
            })
            .collect();
        let n1 = t.iter().filter(|&&v| v).count();
        if n1 < 2 || n - n1 < 2 {
            continue;
        }
        let y: Vec<f64> = (0..n)
            .map(|i| x[i * d] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        return Dataset::new(x, d, t, Some(y)).expect("valid random dataset");
    }
}

/// Uniform draw from the simplex of dimension `m`.
pub fn random_simplex<R: Rng>(rng: &mut R, m: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..m).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-d2 / (gamma * gamma)).exp()
}

/// Squared MMD by the explicit triple double sum.
pub fn brute_mmd(problem: &BalanceProblem, w: &[f64], gamma: f64) -> f64 {
    let (m, k) = (problem.m(), problem.k());
    let v = problem.target_weights();
    let mut ss = 0.0;
    for i in 0..m {
        for j in 0..m {
            ss += w[i] * w[j] * rbf(problem.source_row(i), problem.source_row(j), gamma);
        }
    }
    let mut st = 0.0;
    for i in 0..m {
        for j in 0..k {
            st += w[i] * v[j] * rbf(problem.source_row(i), problem.target_row(j), gamma);
        }
    }
    let mut tt = 0.0;
    for i in 0..k {
        for j in 0..k {
            tt += v[i] * v[j] * rbf(problem.target_row(i), problem.target_row(j), gamma);
        }
    }
    ss - 2.0 * st + tt
}

/// Central differences of `f` at `x`.
pub fn central_fd(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn problem_for(ds: &Dataset, rng: &mut impl Rng) -> BalanceProblem {
    let gv = ds.groups();
    match rng.random_range(0..3) {
        0 => BalanceProblem::att(ds, &gv),
        1 => BalanceProblem::ate(ds, &gv, Side::Control),
        _ => BalanceProblem::ate(ds, &gv, Side::Treated),
    }
}

fn small_instance(rng: &mut ChaCha20Rng) -> (Dataset, BalanceProblem) {
    let n = rng.random_range(6..20);
    let d = rng.random_range(1..5);
    let ds = random_dataset(rng, n, d);
    let problem = problem_for(&ds, rng);
    (ds, problem)
}

/// Largest absolute difference between the closed-form and double-sum MMD.
pub fn mmd_oracle_worst(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (_, problem) = small_instance(&mut rng);
        let gamma = rng.random_range(0.3..5.0);
        let w = random_simplex(&mut rng, problem.m());
        let mmd = RbfMmd::new(&problem, gamma).unwrap();
        worst = worst.max((mmd.value(&w).unwrap() - brute_mmd(&problem, &w, gamma)).abs());
    }
    worst
}

/// Worst relative error of the MMD weight gradient against finite
/// differences of the double-sum oracle.
pub fn mmd_grad_worst(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (_, problem) = small_instance(&mut rng);
        let gamma = rng.random_range(0.3..5.0);
        let w = random_simplex(&mut rng, problem.m());
        let analytic = RbfMmd::new(&problem, gamma).unwrap().grad(&w).unwrap();
        let fd = central_fd(|v| brute_mmd(&problem, v, gamma), &w, 1e-5);
        worst = worst.max(rel_err(&analytic, &fd));
    }
    worst
}

fn sigmoid_loss_sum(problem: &BalanceProblem, w: &[f64], params: &[f64], members: usize) -> f64 {
    let d = problem.d();
    let sig = |u: f64| 1.0 / (1.0 + (-u).exp());
    (0..members)
        .map(|s| {
            let rho = &params[s * d..(s + 1) * d];
            let mu = params[members * d + s];
            let out = |x: &[f64]| sig(rho.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + mu);
            let target: f64 = (0..problem.k())
                .map(|j| problem.target_weights()[j] * out(problem.target_row(j)))
                .sum();
            let source: f64 = (0..problem.m()).map(|i| w[i] * out(problem.source_row(i))).sum();
            (target - source).powi(2)
        })
        .sum()
}

/// Worst relative error of the ensemble parameter gradient and of the
/// argmax member's weight gradient against finite differences.
pub fn sigmoid_grad_worst(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (_, problem) = small_instance(&mut rng);
        let d = problem.d();
        let members = rng.random_range(1..6);
        let mut r = || rng.random_range(-1.5..1.5);
        let rho: Vec<f64> = (0..members * d).map(|_| r()).collect();
        let mu: Vec<f64> = (0..members).map(|_| r()).collect();
        let ens = SigmoidEnsemble::new(rho, mu, d).unwrap();
        let w = random_simplex(&mut rng, problem.m());

        let eval = ens.evaluate(&problem, &w).unwrap();
        let fd = central_fd(|p| sigmoid_loss_sum(&problem, &w, p, members), ens.params(), 1e-5);
        worst = worst.max(rel_err(&eval.flat(), &fd));

        let s = SigmoidEnsemble::argmax_member(&eval.per_member_loss);
        let act = ens.activations(&problem);
        let analytic = ens.member_grad_w(&act, s, eval.gaps[s]);
        let single: Vec<f64> = ens.rho(s).iter().copied().chain([ens.mu(s)]).collect();
        let fd_w = central_fd(|v| sigmoid_loss_sum(&problem, v, &single, 1), &w, 1e-5);
        worst = worst.max(rel_err(&analytic, &fd_w));
    }
    worst
}

/// Worst relative error of the penalized critic gradient, with the
/// interpolates held fixed, against finite differences of the objective.
pub fn mlp_grad_worst(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (_, problem) = small_instance(&mut rng);
        let d = problem.d();
        let hidden = rng.random_range(1..8);
        let tau = rng.random_range(0.0..1.0);
        let base = LipschitzMlp::random(d, hidden, 0.2, 10.0, 0.8, &mut rng).unwrap();
        let w = random_simplex(&mut rng, problem.m());
        let r_count = rng.random_range(1..6);
        let xs: Vec<f64> = (0..r_count * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let analytic = mlp_objective(&base, &problem, &w, &xs, tau).unwrap().grad;
        let f = |p: &[f64]| {
            let mlp = LipschitzMlp::from_params(d, hidden, 0.2, 10.0, p.to_vec()).unwrap();
            mlp_objective(&mlp, &problem, &w, &xs, tau).unwrap().value
        };
        let fd = central_fd(f, base.params(), 1e-6);
        worst = worst.max(rel_err(&analytic, &fd));
    }
    worst
}

/// Worst relative error of the weight-map pullback against finite
/// differences of `theta -> g . w(theta)`.
pub fn pullback_worst(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let (_, problem) = small_instance(&mut rng);
        let kind = match k % 3 {
            0 => MapKind::Nonparametric,
            1 => MapKind::Parametric { negate: false },
            _ => MapKind::Parametric { negate: true },
        };
        let m = problem.m() as f64;
        let offset = rng.random_range(0.0..0.5) / m;
        let map = WeightMap {
            kind,
            offset,
            scale: 1.0 - m * offset,
        };
        let theta: Vec<f64> = (0..map.theta_len(&problem))
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let g: Vec<f64> = (0..problem.m()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = map.softmax(&problem, &theta);
        let analytic = map.pullback(&problem, &p, &g);
        let f = |th: &[f64]| {
            map.weights(&problem, th)
                .iter()
                .zip(&g)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        worst = worst.max(rel_err(&analytic, &central_fd(f, &theta, 1e-6)));
    }
    worst
}

/// Control weights `∝ exp(b x)` matching the treated mean of a single
/// covariate, with `b` found by bisection on the monotone tilted mean.
pub fn tilt_by_bisection(controls: &[f64], target_mean: f64) -> Vec<f64> {
    let weights = |b: f64| {
        let shift = controls.iter().map(|x| b * x).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = controls.iter().map(|x| (b * x - shift).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    let mean = |b: f64| weights(b).iter().zip(controls).map(|(w, x)| w * x).sum::<f64>();
    let (mut lo, mut hi) = (-1.0, 1.0);
    while mean(lo) > target_mean {
        lo *= 2.0;
    }
    while mean(hi) < target_mean {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < target_mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    weights(0.5 * (lo + hi))
}

/// Worst max-abs difference between CBPS and EB ATT control weights and the
/// bisection tilt on one-covariate datasets.
pub fn tilt_oracle_worst(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(20..60);
        let ds = random_dataset(&mut rng, n, 1);
        let gv = ds.groups();
        let controls: Vec<f64> = gv.control_idx.iter().map(|&i| ds.row(i)[0]).collect();
        let target = gv.treated_idx.iter().map(|&i| ds.row(i)[0]).sum::<f64>() / gv.n1() as f64;
        let lo = controls.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = controls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo < target && target < hi) {
            continue;
        }
        let oracle = tilt_by_bisection(&controls, target);
        for fit in [cbps_att(&ds).unwrap(), eb_att(&ds).unwrap()] {
            let w = fit.weights.group_weights(&gv);
            let diff = w.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(diff);
        }
    }
    worst
}

pub fn entropy(w: &[f64]) -> f64 {
    -w.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Feasible perturbation of `w`: a random direction projected onto the null
/// space of the constraint matrix `[1; X^T]`, scaled to keep every weight
/// positive.
pub fn feasible_perturbation<R: Rng>(rng: &mut R, w: &[f64], rows: &[&[f64]]) -> Vec<f64> {
    let m = w.len();
    let p = rows[0].len() + 1;
    let a = DMatrix::from_fn(p, m, |r, c| if r == 0 { 1.0 } else { rows[c][r - 1] });
    let z = nalgebra::DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    // z - A^T (A A^T)^-1 A z
    let aat = &a * a.transpose();
    let coef = aat.lu().solve(&(&a * &z)).expect("full-rank constraints");
    let delta = &z - a.transpose() * coef;
    let mut step: f64 = rng.random_range(0.05..0.9);
    for (wi, di) in w.iter().zip(delta.iter()) {
        if *di < 0.0 {
            step = step.min(0.9 * wi / -di);
        }
    }
    w.iter().zip(delta.iter()).map(|(wi, di)| wi + step * di).collect()
}

/// EB on a random feasible instance: constraint residual and the largest
/// entropy excess of a feasible perturbation over the EB weights.
pub fn eb_dominance(perturbations: usize, seed: u64) -> (f64, f64) {
    let mut rng = rng(seed);
    let mut worst_residual: f64 = 0.0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut done = 0;
    while done < perturbations {
        let ds = random_dataset(&mut rng, 80, 2);
        let Ok(fit) = eb_att(&ds) else { continue };
        let gv = ds.groups();
        let problem = BalanceProblem::att(&ds, &gv);
        let w = fit.weights.group_weights(&gv);
        let residual = moment_gaps(&problem, &w).iter().map(|g| g.abs()).fold(0.0, f64::max);
        worst_residual = worst_residual.max(residual);
        let rows: Vec<&[f64]> = (0..problem.m()).map(|i| problem.source_row(i)).collect();
        for _ in 0..10 {
            let other = feasible_perturbation(&mut rng, &w, &rows);
            worst_excess = worst_excess.max(entropy(&other) - entropy(&w));
            done += 1;
        }
    }
    (worst_residual, worst_excess)
}

/// Two-sample KS statistic from the definition: the largest ECDF gap over
/// every observed value.
pub fn classical_ks(a: &[f64], b: &[f64]) -> f64 {
    let ecdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
    a.iter()
        .chain(b)
        .map(|&t| (ecdf(a, t) - ecdf(b, t)).abs())
        .fold(0.0, f64::max)
}

/// Worst gap between the weighted KS statistic under uniform weights and the
/// classical one, on samples with ties.
pub fn ks_uniform_worst(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let na = rng.random_range(1..40);
        let nb = rng.random_range(1..40);
        let draw = |rng: &mut ChaCha20Rng, n| {
            (0..n)
                .map(|_| rng.random_range(0..15) as f64 * 0.5)
                .collect::<Vec<f64>>()
        };
        let a = draw(&mut rng, na);
        let b = draw(&mut rng, nb);
        let ks = cbipm::diagnostics::weighted_ks(&a, &vec![1.0; na], &b, &vec![1.0; nb]).unwrap();
        worst = worst.max((ks.statistic - classical_ks(&a, &b)).abs());
    }
    worst
}

/// Worst violation of `estimate - truth = err_bal + err_obs + (SATT - ATT)`
/// over simulated draws of every design, for ATT and ATE weights.
pub fn decomposition_worst(draws_per_design: usize, seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, design) in Design::ALL.into_iter().enumerate() {
        for r in 0..draws_per_design {
            let (ds, oracle) = generate(&SimConfig::new(design, 200, seed + (k * 1000 + r) as u64)).unwrap();
            let gv = ds.groups();
            let mut rng = rng(seed ^ (r as u64));
            let w0 = WeightVector::from_group(&gv, Side::Control, &random_simplex(&mut rng, gv.n0())).unwrap();
            let w1 = WeightVector::from_group(&gv, Side::Treated, &random_simplex(&mut rng, gv.n1())).unwrap();
            let att = cbipm::estimators::att_weighted(&ds, &w0).unwrap();
            let dec = decompose_att(&ds, &w0, &oracle).unwrap();
            worst = worst.max((att - oracle.true_att - dec.total()).abs());
            let ate = cbipm::estimators::ate_weighted(&ds, &w0, &w1).unwrap();
            let dec = decompose_ate(&ds, &w0, &w1, &oracle).unwrap();
            worst = worst.max((ate - oracle.true_ate - dec.total()).abs());
        }
    }
    worst
}

/// Smallest slack of `|err_bal| <= linear IPM` for outcome functions
/// `m0(x) = c + alpha . x` with `|alpha|_inf <= 1`; negative means violated.
pub fn linear_bound_slack(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut slack = f64::INFINITY;
    for _ in 0..instances {
        let n = rng.random_range(10..60);
        let d = rng.random_range(1..5);
        let ds = random_dataset(&mut rng, n, d);
        let gv = ds.groups();
        let problem = BalanceProblem::att(&ds, &gv);
        let w = random_simplex(&mut rng, gv.n0());
        let alpha: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let c = rng.random_range(-5.0..5.0);
        let m0 = |x: &[f64]| c + alpha.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let treated: f64 = gv.treated_idx.iter().map(|&i| m0(ds.row(i))).sum::<f64>() / gv.n1() as f64;
        let control: f64 = gv.control_idx.iter().zip(&w).map(|(&i, wi)| wi * m0(ds.row(i))).sum();
        // tolerance for round-off in the two sums
        slack = slack.min(linear_ipm(&problem, &w) - (treated - control).abs() + 1e-12);
    }
    slack
}

/// Worst position of the SIPW weighted control mean outside the control
/// outcome range (zero when always inside).
pub fn sipw_range_violation(draws: usize, seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..draws {
        let (ds, _) = generate(&SimConfig::new(Design::KsNonlinear, 300, seed + r as u64)).unwrap();
        let gv = ds.groups();
        let Ok(fit) = cbipm::balancers::sipw_glm(&ds) else {
            continue;
        };
        let y = ds.outcome().unwrap();
        let w = fit.weights.as_slice();
        let mean: f64 = gv.control_idx.iter().map(|&i| w[i] * y[i]).sum();
        let lo = gv.control_idx.iter().map(|&i| y[i]).fold(f64::INFINITY, f64::min);
        let hi = gv.control_idx.iter().map(|&i| y[i]).fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(lo - mean).max(mean - hi);
    }
    worst
}

/// CBPS and P-CBIPM with linear discriminators on random instances where
/// CBPS converged: the largest per-coordinate moment gap of either.
pub fn cbps_linear_equivalence(instances: usize, seed: u64) -> (usize, f64) {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut attempts = 0;
    while done < instances && attempts < 10 * instances {
        attempts += 1;
        let n = rng.random_range(100..300);
        let d = rng.random_range(1..5);
        let ds = random_dataset(&mut rng, n, d);
        let gv = ds.groups();
        let problem = BalanceProblem::att(&ds, &gv);
        let Ok(cbps) = cbps_att(&ds) else { continue };
        let method = Method::Pcbipm(Family::Linear);
        let settings = Settings::for_method(method);
        let Ok(cbipm::balancers::Balanced::Att(lin)) = balance(&ds, method, Estimand::Att, &settings, rng.random())
        else {
            continue;
        };
        for s in [&cbps, &lin] {
            let gaps = moment_gaps(&problem, &s.weights.group_weights(&gv));
            worst = worst.max(gaps.iter().map(|g| g.abs()).fold(0.0, f64::max));
        }
        done += 1;
    }
    (done, worst)
}

/// Whether a full estimate can be computed for every method on a small draw.
pub fn all_methods_run(design: Design, n: usize, seed: u64, iters: usize) -> Vec<(Method, Result<f64, String>)> {
    let (ds, _) = generate(&SimConfig::new(design, n, seed)).unwrap();
    Method::ALL
        .into_iter()
        .map(|m| {
            let mut s = Settings::for_method(m);
            s.schedule.iters = iters;
            let r = balance(&ds, m, Estimand::Att, &s, seed)
                .and_then(|b| estimate(&ds, &b))
                .map_err(|e| e.to_string());
            (m, r)
        })
        .collect()
}
