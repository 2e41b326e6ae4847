use crate::data::{Dataset, GroupView, Side, WeightVector};
use crate::error::{Error, Result};

use super::BalanceProblem;

/// RBF-kernel MMD with Gram matrices cached for one balancing problem.
///
/// The kernel is `k(x, x') = exp(-|x - x'|^2 / gamma^2)`. The radius of the
/// RKHS ball is not represented since it only rescales the metric.
#[derive(Debug, Clone)]
pub struct RbfMmd {
    gamma: f64,
    m: usize,
    k: usize,
    gram_ss: Vec<f64>,
    gram_st: Vec<f64>,
    gram_tt: Vec<f64>,
    // gram_st · v and v' gram_tt v
    cross: Vec<f64>,
    target_term: f64,
}

impl RbfMmd {
    pub fn new(problem: &BalanceProblem, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "kernel width must be positive, got {gamma}"
            )));
        }
        let (m, k) = (problem.m(), problem.k());
        let inv = 1.0 / (gamma * gamma);
        let kernel = |a: &[f64], b: &[f64]| {
            let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (-sq * inv).exp()
        };

        let mut gram_ss = vec![0.0; m * m];
        for i in 0..m {
            gram_ss[i * m + i] = 1.0;
            for j in 0..i {
                let v = kernel(problem.source_row(i), problem.source_row(j));
                gram_ss[i * m + j] = v;
                gram_ss[j * m + i] = v;
            }
        }
        let mut gram_st = vec![0.0; m * k];
        for i in 0..m {
            for j in 0..k {
                gram_st[i * k + j] = kernel(problem.source_row(i), problem.target_row(j));
            }
        }
        let mut gram_tt = vec![0.0; k * k];
        for i in 0..k {
            gram_tt[i * k + i] = 1.0;
            for j in 0..i {
                let v = kernel(problem.target_row(i), problem.target_row(j));
                gram_tt[i * k + j] = v;
                gram_tt[j * k + i] = v;
            }
        }

        let v = problem.target_weights();
        let cross: Vec<f64> = (0..m).map(|i| super::dot(&gram_st[i * k..(i + 1) * k], v)).collect();
        let target_term = (0..k).map(|i| v[i] * super::dot(&gram_tt[i * k..(i + 1) * k], v)).sum();

        Ok(RbfMmd {
            gamma,
            m,
            k,
            gram_ss,
            gram_st,
            gram_tt,
            cross,
            target_term,
        })
    }

    /// Controls against the treated.
    pub fn for_att(ds: &Dataset, gv: &GroupView, gamma: f64) -> Result<Self> {
        RbfMmd::new(&BalanceProblem::att(ds, gv), gamma)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn gram_ss(&self) -> &[f64] {
        &self.gram_ss
    }

    pub fn gram_st(&self) -> &[f64] {
        &self.gram_st
    }

    pub fn gram_tt(&self) -> &[f64] {
        &self.gram_tt
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.m {
            return Err(Error::DimensionMismatch {
                what: "MMD source weights",
                expected: self.m,
                got: w.len(),
            });
        }
        Ok(())
    }

    fn gram_times(&self, w: &[f64]) -> Vec<f64> {
        let m = self.m;
        (0..m)
            .map(|i| super::dot(&self.gram_ss[i * m..(i + 1) * m], w))
            .collect()
    }

    /// Squared MMD between the `w`-weighted source and the target measure.
    /// Round-off below zero is clamped.
    pub fn value(&self, w: &[f64]) -> Result<f64> {
        self.check(w)?;
        let kw = self.gram_times(w);
        Ok(self.assemble(w, &kw))
    }

    /// Gradient of the squared MMD with respect to the source weights.
    pub fn grad(&self, w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_grad(w)?.1)
    }

    pub fn value_and_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(w)?;
        let kw = self.gram_times(w);
        let value = self.assemble(w, &kw);
        let grad = kw.iter().zip(&self.cross).map(|(a, c)| 2.0 * (a - c)).collect();
        Ok((value, grad))
    }

    fn assemble(&self, w: &[f64], kw: &[f64]) -> f64 {
        let quad = super::dot(w, kw);
        let lin = super::dot(w, &self.cross);
        (quad - 2.0 * lin + self.target_term).max(0.0)
    }

    /// Number of target points the cache was built for.
    pub fn target_len(&self) -> usize {
        self.k
    }
}

fn att_check(w: &WeightVector, mmd: &RbfMmd, gv: &GroupView) -> Result<Vec<f64>> {
    if w.side() != Side::Control || w.len() != gv.n() {
        return Err(Error::InvalidWeights("expected dense control-side weights".into()));
    }
    if mmd.m != gv.n0() || mmd.k != gv.n1() {
        return Err(Error::DimensionMismatch {
            what: "MMD cache",
            expected: gv.n0(),
            got: mmd.m,
        });
    }
    Ok(w.group_weights(gv))
}

/// Squared MMD between the weighted controls and the treated (ATT layout).
pub fn mmd_sq(w: &WeightVector, mmd: &RbfMmd, gv: &GroupView) -> Result<f64> {
    mmd.value(&att_check(w, mmd, gv)?)
}

/// Dense length-n gradient of [`mmd_sq`]; treated entries are zero.
pub fn mmd_sq_grad_w(w: &WeightVector, mmd: &RbfMmd, gv: &GroupView) -> Result<Vec<f64>> {
    let local = mmd.grad(&att_check(w, mmd, gv)?)?;
    let mut dense = vec![0.0; gv.n()];
    for (&i, g) in gv.control_idx.iter().zip(local) {
        dense[i] = g;
    }
    Ok(dense)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(x: Vec<f64>, d: usize, t: Vec<bool>) -> Dataset {
        Dataset::new(x, d, t, None).unwrap()
    }

    #[test]
    fn identical_multisets_give_zero() {
        let data = ds(
            vec![0.0, 1.0, 2.0, 3.0, 2.0, 0.0, 1.0, 3.0],
            1,
            vec![false, false, false, false, true, true, true, true],
        );
        let gv = data.groups();
        let mmd = RbfMmd::for_att(&data, &gv, 1.5).unwrap();
        let w = WeightVector::uniform(&gv, Side::Control);
        assert!(mmd_sq(&w, &mmd, &gv).unwrap().abs() < 1e-12);
    }

    #[test]
    fn two_point_expansion() {
        let data = ds(vec![0.0, 0.0, 1.0, 2.0], 2, vec![false, true]);
        let gv = data.groups();
        let mmd = RbfMmd::for_att(&data, &gv, 2.0).unwrap();
        let w = WeightVector::uniform(&gv, Side::Control);
        let k = (-5.0f64 / 4.0).exp();
        assert!((mmd_sq(&w, &mmd, &gv).unwrap() - (2.0 - 2.0 * k)).abs() < 1e-14);

        let same = ds(vec![1.0, 2.0, 1.0, 2.0], 2, vec![false, true]);
        let gv = same.groups();
        let mmd = RbfMmd::for_att(&same, &gv, 2.0).unwrap();
        assert_eq!(
            mmd_sq(&WeightVector::uniform(&gv, Side::Control), &mmd, &gv).unwrap(),
            0.0
        );
    }

    #[test]
    fn gram_invariants() {
        let data = ds(
            vec![0.3, -1.0, 2.0, 0.5, 1.1, -0.2],
            1,
            vec![false, true, false, true, false, true],
        );
        let gv = data.groups();
        let mmd = RbfMmd::for_att(&data, &gv, 1.0).unwrap();
        let m = gv.n0();
        for i in 0..m {
            assert_eq!(mmd.gram_ss()[i * m + i], 1.0);
            for j in 0..m {
                assert_eq!(mmd.gram_ss()[i * m + j], mmd.gram_ss()[j * m + i]);
            }
        }
        assert!(mmd.gram_st().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn symmetric_controls_have_equal_gradient() {
        let data = ds(vec![-1.0, 0.0, 1.0, 0.0, 0.0, 0.0], 2, vec![false, false, true]);
        let gv = data.groups();
        let mmd = RbfMmd::for_att(&data, &gv, 1.0).unwrap();
        let g = mmd_sq_grad_w(&WeightVector::uniform(&gv, Side::Control), &mmd, &gv).unwrap();
        assert!((g[0] - g[1]).abs() < 1e-15);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn balanced_case_has_constant_gradient() {
        // identical multisets: uniform weights minimize over the simplex
        let data = ds(
            vec![0.0, 1.0, 2.5, 1.0, 2.5, 0.0],
            1,
            vec![false, false, false, true, true, true],
        );
        let gv = data.groups();
        let mmd = RbfMmd::for_att(&data, &gv, 2.0).unwrap();
        let g = mmd.grad(&[1.0 / 3.0; 3]).unwrap();
        assert!((g[0] - g[1]).abs() < 1e-12 && (g[1] - g[2]).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_gamma_and_lengths() {
        let data = ds(vec![0.0, 1.0], 1, vec![false, true]);
        let gv = data.groups();
        assert!(RbfMmd::for_att(&data, &gv, 0.0).is_err());
        let mmd = RbfMmd::for_att(&data, &gv, 1.0).unwrap();
        assert!(mmd.value(&[0.5, 0.5]).is_err());
    }
}
