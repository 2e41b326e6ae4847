use crate::discriminators::BalanceProblem;

/// How weights over the source group are generated from `theta`.
///
/// Weights are `offset + scale * softmax(z)` with `z = sign * X theta`
/// (parametric) or `z = theta` (one free logit per unit). Since the source
/// group has `m` units, `m * offset + scale` must equal one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightMap {
    pub kind: MapKind,
    pub offset: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    /// Linear score `sign * theta . x`, no intercept.
    Parametric {
        negate: bool,
    },
    Nonparametric,
}

impl WeightMap {
    pub fn plain(kind: MapKind) -> Self {
        WeightMap {
            kind,
            offset: 0.0,
            scale: 1.0,
        }
    }

    pub fn theta_len(&self, problem: &BalanceProblem) -> usize {
        match self.kind {
            MapKind::Parametric { .. } => problem.d(),
            MapKind::Nonparametric => problem.m(),
        }
    }

    fn logits(&self, problem: &BalanceProblem, theta: &[f64]) -> Vec<f64> {
        match self.kind {
            MapKind::Parametric { negate } => {
                let sign = if negate { -1.0 } else { 1.0 };
                (0..problem.m())
                    .map(|i| sign * crate::discriminators::dot(problem.source_row(i), theta))
                    .collect()
            }
            MapKind::Nonparametric => theta.to_vec(),
        }
    }

    /// Softmax probabilities of the logits, max-shifted.
    pub fn softmax(&self, problem: &BalanceProblem, theta: &[f64]) -> Vec<f64> {
        let z = self.logits(problem, theta);
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
        let sum: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= sum);
        p
    }

    pub fn weights(&self, problem: &BalanceProblem, theta: &[f64]) -> Vec<f64> {
        self.weights_from_softmax(&self.softmax(problem, theta))
    }

    pub fn weights_from_softmax(&self, p: &[f64]) -> Vec<f64> {
        p.iter().map(|v| self.offset + self.scale * v).collect()
    }

    /// Chains a gradient with respect to the weights back to `theta`.
    pub fn pullback(&self, problem: &BalanceProblem, p: &[f64], grad_w: &[f64]) -> Vec<f64> {
        let mean: f64 = p.iter().zip(grad_w).map(|(a, b)| a * b).sum();
        let dz: Vec<f64> = p
            .iter()
            .zip(grad_w)
            .map(|(pi, gi)| self.scale * pi * (gi - mean))
            .collect();
        match self.kind {
            MapKind::Parametric { negate } => {
                let sign = if negate { -1.0 } else { 1.0 };
                let mut g = vec![0.0; problem.d()];
                for (i, dzi) in dz.iter().enumerate() {
                    for (gj, xj) in g.iter_mut().zip(problem.source_row(i)) {
                        *gj += sign * dzi * xj;
                    }
                }
                g
            }
            MapKind::Nonparametric => dz,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;

    fn problem() -> BalanceProblem {
        let ds = Dataset::new(
            vec![0.5, -1.0, 1.5, 0.2, -0.7, 2.0, 0.1, 0.9, -0.4, 0.3],
            2,
            vec![false, false, true, false, true],
            None,
        )
        .unwrap();
        BalanceProblem::att(&ds, &ds.groups())
    }

    #[test]
    fn zero_theta_is_uniform() {
        let p = problem();
        let map = WeightMap::plain(MapKind::Parametric { negate: false });
        for w in map.weights(&p, &[0.0, 0.0]) {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let np = WeightMap::plain(MapKind::Nonparametric);
        assert_eq!(np.weights(&p, &[4.2; 3]), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p = problem();
        let np = WeightMap::plain(MapKind::Nonparametric);
        let w = np.weights(&p, &[1000.0, 999.0, -1000.0]);
        assert!(w.iter().all(|v| v.is_finite()));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pullback_matches_finite_differences() {
        let p = problem();
        // a fixed linear functional of the weights
        let c = [0.3, -1.1, 0.7];
        for map in [
            WeightMap::plain(MapKind::Parametric { negate: false }),
            WeightMap {
                kind: MapKind::Parametric { negate: true },
                offset: 0.1,
                scale: 0.7,
            },
            WeightMap::plain(MapKind::Nonparametric),
        ] {
            let theta: Vec<f64> = (0..map.theta_len(&p)).map(|j| 0.2 * j as f64 - 0.3).collect();
            let soft = map.softmax(&p, &theta);
            let g = map.pullback(&p, &soft, &c);
            let f = |th: &[f64]| -> f64 { map.weights(&p, th).iter().zip(&c).map(|(a, b)| a * b).sum() };
            for j in 0..theta.len() {
                let h = 1e-6;
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-8, "{fd} vs {}", g[j]);
            }
        }
    }
}
