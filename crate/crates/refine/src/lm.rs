//! Levenberg-Marquardt for `min_x sum_i r_i(x)^2`.
//!
//! The normal equations are assembled either densely or, when the problem
//! declares a bandwidth, in banded storage so long sequences with
//! neighbour-coupled frames stay linear in the number of frames.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{RefineError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 100,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-10,
            cost_tolerance: 1e-12,
        }
    }
}

impl LmOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.initial_damping,
            self.gradient_tolerance,
            self.step_tolerance,
            self.cost_tolerance,
            self.damping_down,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || !(self.damping_up > 1.0) || !(self.damping_down < 1.0) {
            return Err(RefineError::InvalidInput(
                "LM tolerances and damping factors must be positive (up > 1 > down)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmStatus {
    ZeroResidual,
    GradientTolerance,
    StepTolerance,
    CostTolerance,
    MaxIterations,
    /// Damping grew without finding a decreasing step.
    DampingExhausted,
}

#[derive(Clone, Debug)]
pub struct LmReport {
    pub x: Vec<f64>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub status: LmStatus,
}

/// Row-sparse Jacobian: each row lists its `(column, value)` entries.
#[derive(Clone, Debug, Default)]
pub struct SparseJacobian {
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Debug)]
pub enum Jacobian {
    Dense(DMatrix<f64>),
    Sparse(SparseJacobian),
}

pub trait LeastSquaresProblem {
    fn num_params(&self) -> usize;

    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Analytic Jacobian; `None` selects central differences.
    fn jacobian(&self, _x: &[f64]) -> Option<Result<Jacobian>> {
        None
    }

    /// Half-bandwidth of `J^T J`, if it is banded.
    fn normal_bandwidth(&self) -> Option<usize> {
        None
    }
}

/// A problem given by closures.
pub struct FnProblem<R, J> {
    pub n: usize,
    pub residuals: R,
    pub jacobian: Option<J>,
}

impl<R, J> LeastSquaresProblem for FnProblem<R, J>
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    fn num_params(&self) -> usize {
        self.n
    }

    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok((self.residuals)(x))
    }

    fn jacobian(&self, x: &[f64]) -> Option<Result<Jacobian>> {
        self.jacobian.as_ref().map(|j| Ok(Jacobian::Dense(j(x))))
    }
}

pub fn numeric_jacobian<P: LeastSquaresProblem + ?Sized>(problem: &P, x: &[f64], m: usize) -> Result<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(m, x.len());
    let mut probe = x.to_vec();
    for c in 0..x.len() {
        let h = 1e-6 * x[c].abs().max(1.0);
        probe[c] = x[c] + h;
        let hi = problem.residuals(&probe)?;
        probe[c] = x[c] - h;
        let lo = problem.residuals(&probe)?;
        probe[c] = x[c];
        for r in 0..m {
            jac[(r, c)] = (hi[r] - lo[r]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Symmetric positive (semi)definite matrix in lower-band storage.
#[derive(Clone, Debug)]
struct BandMatrix {
    n: usize,
    band: usize,
    /// `data[i * (band + 1) + k] = A[i][i - k]`.
    data: Vec<f64>,
}

impl BandMatrix {
    fn zeros(n: usize, band: usize) -> Self {
        BandMatrix {
            n,
            band,
            data: vec![0.0; n * (band + 1)],
        }
    }

    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        // i >= j, i - j <= band
        &mut self.data[i * (self.band + 1) + (i - j)]
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.band {
            0.0
        } else {
            self.data[i * (self.band + 1) + (i - j)]
        }
    }

    /// In-place banded Cholesky followed by the two triangular solves.
    fn solve(mut self, rhs: &[f64]) -> Option<Vec<f64>> {
        let (n, b) = (self.n, self.band);
        let w = b + 1;
        for i in 0..n {
            let j0 = i.saturating_sub(b);
            for j in j0..=i {
                let mut s = self.data[i * w + (i - j)];
                let k0 = j0.max(j.saturating_sub(b));
                for k in k0..j {
                    s -= self.data[i * w + (i - k)] * self.data[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    self.data[i * w] = s.sqrt();
                } else {
                    self.data[i * w + (i - j)] = s / self.data[j * w];
                }
            }
        }
        let mut y = rhs.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(b)..i {
                s -= self.data[i * w + (i - k)] * y[k];
            }
            y[i] = s / self.data[i * w];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + b + 1).min(n) {
                s -= self.data[k * w + (k - i)] * y[k];
            }
            y[i] = s / self.data[i * w];
        }
        Some(y)
    }
}

enum Normal {
    Dense(DMatrix<f64>),
    Banded(BandMatrix),
}

impl Normal {
    fn diagonal(&self) -> Vec<f64> {
        match self {
            Normal::Dense(a) => a.diagonal().iter().copied().collect(),
            Normal::Banded(b) => (0..b.n).map(|i| b.get(i, i)).collect(),
        }
    }

    fn solve_damped(&self, damping: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
        match self {
            Normal::Dense(a) => {
                let mut m = a.clone();
                for (i, d) in damping.iter().enumerate() {
                    m[(i, i)] += d;
                }
                let chol = m.cholesky()?;
                let sol = chol.solve(&DVector::from_column_slice(rhs));
                sol.iter().all(|v| v.is_finite()).then(|| sol.iter().copied().collect())
            }
            Normal::Banded(b) => {
                let mut m = b.clone();
                for (i, d) in damping.iter().enumerate() {
                    *m.at(i, i) += d;
                }
                m.solve(rhs)
            }
        }
    }
}

/// `J^T J` and `J^T r`.
fn normal_equations(jac: &Jacobian, r: &[f64], n: usize, band: Option<usize>) -> Result<(Normal, Vec<f64>)> {
    let mut g = vec![0.0; n];
    match (jac, band) {
        (Jacobian::Dense(j), _) => {
            let a = j.tr_mul(j);
            let gv = j.tr_mul(&DVector::from_column_slice(r));
            g.copy_from_slice(gv.as_slice());
            Ok((Normal::Dense(a), g))
        }
        (Jacobian::Sparse(s), Some(b)) => {
            let mut a = BandMatrix::zeros(n, b);
            for (row, (entries, &ri)) in s.rows.iter().zip(r).enumerate() {
                for (p, &(ci, vi)) in entries.iter().enumerate() {
                    g[ci] += vi * ri;
                    for (q, &(cj, vj)) in entries[..=p].iter().enumerate() {
                        let (hi, lo) = if ci >= cj { (ci, cj) } else { (cj, ci) };
                        if hi - lo > b {
                            return Err(RefineError::OutsideBand { row, col: hi, band: b });
                        }
                        // a repeated column within one row lands on the diagonal twice
                        let v = if ci == cj && p != q { 2.0 * vi * vj } else { vi * vj };
                        *a.at(hi, lo) += v;
                    }
                }
            }
            Ok((Normal::Banded(a), g))
        }
        (Jacobian::Sparse(s), None) => {
            let mut a = DMatrix::zeros(n, n);
            for (entries, &ri) in s.rows.iter().zip(r) {
                for &(ci, vi) in entries {
                    g[ci] += vi * ri;
                    for &(cj, vj) in entries {
                        a[(ci, cj)] += vi * vj;
                    }
                }
            }
            Ok((Normal::Dense(a), g))
        }
    }
}

fn cost_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

pub fn levenberg_marquardt<P: LeastSquaresProblem + ?Sized>(problem: &P, x0: &[f64], opts: &LmOptions) -> Result<LmReport> {
    opts.validate()?;
    let n = problem.num_params();
    if x0.len() != n {
        return Err(RefineError::InvalidInput(format!("x0 has {} entries, problem has {n}", x0.len())));
    }
    let mut x = x0.to_vec();
    let mut r = problem.residuals(&x)?;
    let mut cost = cost_of(&r);
    if !cost.is_finite() {
        return Err(RefineError::NonFiniteStart);
    }
    let initial_cost = cost;
    let report = |x: Vec<f64>, cost: f64, iterations, status| LmReport {
        x,
        initial_cost,
        final_cost: cost,
        iterations,
        status,
    };
    if cost == 0.0 {
        return Ok(report(x, cost, 0, LmStatus::ZeroResidual));
    }
    let mut lambda = opts.initial_damping;
    for iter in 0..opts.max_iterations {
        let jac = match problem.jacobian(&x) {
            Some(j) => j?,
            None => Jacobian::Dense(numeric_jacobian(problem, &x, r.len())?),
        };
        let (normal, g) = normal_equations(&jac, &r, n, problem.normal_bandwidth())?;
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax <= opts.gradient_tolerance {
            return Ok(report(x, cost, iter, LmStatus::GradientTolerance));
        }
        let diag: Vec<f64> = normal.diagonal().iter().map(|d| d.max(1e-9)).collect();
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        loop {
            let damping: Vec<f64> = diag.iter().map(|d| lambda * d).collect();
            let step = normal.solve_damped(&damping, &neg_g);
            if let Some(step) = step {
                let snorm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
                if snorm <= opts.step_tolerance * (xnorm + opts.step_tolerance) {
                    return Ok(report(x, cost, iter + 1, LmStatus::StepTolerance));
                }
                let trial: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
                if let Ok(rt) = problem.residuals(&trial) {
                    let ct = cost_of(&rt);
                    if ct.is_finite() && ct < cost {
                        let decrease = cost - ct;
                        x = trial;
                        r = rt;
                        cost = ct;
                        lambda = (lambda * opts.damping_down).max(1e-15);
                        if cost == 0.0 {
                            return Ok(report(x, cost, iter + 1, LmStatus::ZeroResidual));
                        }
                        if decrease <= opts.cost_tolerance * (cost + decrease) {
                            return Ok(report(x, cost, iter + 1, LmStatus::CostTolerance));
                        }
                        break;
                    }
                }
            }
            lambda *= opts.damping_up;
            if lambda > 1e16 {
                return Ok(report(x, cost, iter + 1, LmStatus::DampingExhausted));
            }
        }
    }
    Ok(report(x, cost, opts.max_iterations, LmStatus::MaxIterations))
}

#[cfg(test)]
mod tests {
    use super::*;

    type DenseFn = fn(&[f64]) -> DMatrix<f64>;

    #[test]
    fn zero_residual_returns_immediately() {
        let p = FnProblem::<_, DenseFn> {
            n: 2,
            residuals: |x: &[f64]| vec![x[0] - 1.0, x[1] + 2.0],
            jacobian: None,
        };
        let rep = levenberg_marquardt(&p, &[1.0, -2.0], &LmOptions::default()).unwrap();
        assert_eq!(rep.x, vec![1.0, -2.0]);
        assert_eq!(rep.iterations, 0);
        assert_eq!(rep.status, LmStatus::ZeroResidual);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let p = FnProblem::<_, DenseFn> {
            n: 1,
            residuals: |x: &[f64]| vec![1.0 / x[0]],
            jacobian: None,
        };
        assert!(matches!(
            levenberg_marquardt(&p, &[0.0], &LmOptions::default()),
            Err(RefineError::NonFiniteStart)
        ));
    }

    #[test]
    fn banded_solve_matches_dense() {
        let n = 9;
        let b = 2;
        let mut dense = DMatrix::<f64>::zeros(n, n);
        let mut band = BandMatrix::zeros(n, b);
        for i in 0..n {
            for j in i.saturating_sub(b)..=i {
                let v = if i == j { 10.0 + i as f64 } else { 1.0 / (1.0 + (i + j) as f64) };
                dense[(i, j)] = v;
                dense[(j, i)] = v;
                *band.at(i, j) = v;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = band.solve(&rhs).unwrap();
        let expect = dense.cholesky().unwrap().solve(&DVector::from_column_slice(&rhs));
        for (a, e) in x.iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-13);
        }
    }

    #[test]
    fn singular_normal_equations_are_damped() {
        // The second parameter does not affect the residuals at all.
        let p = FnProblem::<_, DenseFn> {
            n: 2,
            residuals: |x: &[f64]| vec![x[0] - 3.0, 2.0 * (x[0] - 3.0)],
            jacobian: None,
        };
        let rep = levenberg_marquardt(&p, &[0.0, 5.0], &LmOptions::default()).unwrap();
        assert!((rep.x[0] - 3.0).abs() < 1e-6);
        assert_eq!(rep.x[1], 5.0);
    }
}
