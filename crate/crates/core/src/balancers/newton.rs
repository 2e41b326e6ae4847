use nalgebra::{DMatrix, DVector};

/// Value, gradient and Hessian of a smooth convex function.
pub(crate) struct Local {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

pub(crate) enum Outcome {
    Converged {
        x: DVector<f64>,
        iterations: usize,
    },
    MaxIterations {
        x: DVector<f64>,
        iterations: usize,
    },
    Singular,
    /// Line search could not decrease the objective along the Newton direction.
    Stalled {
        x: DVector<f64>,
        iterations: usize,
    },
}

/// Newton's method with backtracking on the objective value. `converged` is
/// asked after every evaluation; the iteration stops as soon as it agrees.
pub(crate) fn minimize(
    mut eval: impl FnMut(&DVector<f64>) -> Local,
    mut converged: impl FnMut(&DVector<f64>, &Local) -> bool,
    x0: DVector<f64>,
    max_iter: usize,
) -> Outcome {
    let mut x = x0;
    let mut cur = eval(&x);
    for it in 0..max_iter {
        if converged(&x, &cur) {
            return Outcome::Converged { x, iterations: it };
        }
        let step = match solve(&cur.hess, &cur.grad) {
            Some(s) => s,
            None => return Outcome::Singular,
        };
        let slope = -cur.grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x - t * &step;
            let next = eval(&cand);
            let armijo = next.value <= cur.value + 1e-4 * t * slope;
            // near the optimum the value stops resolving progress; fall back
            // on the gradient norm
            let flat = next.value <= cur.value + 1e-12 * cur.value.abs().max(1.0) && next.grad.norm() < cur.grad.norm();
            if next.value.is_finite() && (armijo || flat) {
                accepted = Some((cand, next));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, next)) => {
                x = cand;
                cur = next;
            }
            None => {
                if converged(&x, &cur) {
                    return Outcome::Converged { x, iterations: it };
                }
                return Outcome::Stalled { x, iterations: it };
            }
        }
    }
    if converged(&x, &cur) {
        return Outcome::Converged {
            x,
            iterations: max_iter,
        };
    }
    Outcome::MaxIterations {
        x,
        iterations: max_iter,
    }
}

fn solve(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = hess.diagonal().amax();
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    if let Some(ch) = hess.clone().cholesky() {
        let step = ch.solve(grad);
        if step.iter().all(|v| v.is_finite()) {
            return Some(step);
        }
    }
    let lu = hess.clone().lu();
    let step = lu.solve(grad)?;
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Affine standardization of feature columns, used to condition the Newton
/// systems. Works on row-major `rows x p` buffers.
pub(crate) struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &[f64], p: usize) -> Self {
        let rows = features.len() / p.max(1);
        let mut mean = vec![0.0; p];
        let mut scale = vec![1.0; p];
        if rows == 0 || p == 0 {
            return Standardizer { mean, scale };
        }
        for j in 0..p {
            let m = (0..rows).map(|i| features[i * p + j]).sum::<f64>() / rows as f64;
            let var = (0..rows).map(|i| (features[i * p + j] - m).powi(2)).sum::<f64>() / rows as f64;
            mean[j] = m;
            if var.sqrt() > 0.0 {
                scale[j] = var.sqrt();
            }
        }
        Standardizer { mean, scale }
    }

    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        let p = self.mean.len();
        features
            .iter()
            .enumerate()
            .map(|(idx, v)| (v - self.mean[idx % p]) / self.scale[idx % p])
            .collect()
    }
}
