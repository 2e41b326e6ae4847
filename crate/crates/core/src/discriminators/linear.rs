use super::BalanceProblem;

/// Target mean minus weighted source mean, per covariate.
pub fn moment_gaps(problem: &BalanceProblem, w: &[f64]) -> Vec<f64> {
    let mut gaps = problem.target_mean();
    for (i, &wi) in w.iter().enumerate() {
        for (g, x) in gaps.iter_mut().zip(problem.source_row(i)) {
            *g -= wi * x;
        }
    }
    gaps
}

/// IPM over `{x -> a . x : |a|_inf <= 1}`, which is the l1 norm of the
/// moment gaps.
pub fn linear_ipm(problem: &BalanceProblem, w: &[f64]) -> f64 {
    moment_gaps(problem, w).iter().map(|g| g.abs()).sum()
}

/// Squared linear IPM and its gradient with respect to the source weights.
pub fn linear_loss_grad_w(problem: &BalanceProblem, w: &[f64]) -> (f64, Vec<f64>) {
    let gaps = moment_gaps(problem, w);
    let l1: f64 = gaps.iter().map(|g| g.abs()).sum();
    let signs: Vec<f64> = gaps.iter().map(|&g| if g == 0.0 { 0.0 } else { g.signum() }).collect();
    let grad = (0..problem.m())
        .map(|i| -2.0 * l1 * super::dot(&signs, problem.source_row(i)))
        .collect();
    (l1 * l1, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;

    #[test]
    fn l1_of_gaps() {
        let ds = Dataset::new(vec![0.0, 0.0, 2.0, 4.0, 1.0, 3.0], 2, vec![false, false, true], None).unwrap();
        let gv = ds.groups();
        let p = BalanceProblem::att(&ds, &gv);
        // weighted control mean (0.5, 1.0) vs treated (1, 3)
        assert_eq!(moment_gaps(&p, &[0.75, 0.25]), vec![0.5, 2.0]);
        assert_eq!(linear_ipm(&p, &[0.75, 0.25]), 2.5);
        assert_eq!(linear_ipm(&p, &[0.5, 0.5]), 0.0 + 1.0);
    }
}
