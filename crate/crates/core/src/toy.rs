//! Bi-objective least-squares toy with shared parameters, used to watch an
//! integration strategy drive the min-norm point of the gradient pair to zero.

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::integrate::{CaseTag, StrategyConfig};
use crate::numerics::{dot, Matrix, RealVec, RngStream};
use crate::pareto::solve_closed_form;

/// `L_i(theta) = 0.5 * ||A_i theta - b_i||^2` for `i` in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPair {
    a: [Matrix; 2],
    b: [RealVec; 2],
}

fn matvec(a: &Matrix, x: &[f64]) -> RealVec {
    (0..a.rows()).map(|r| a.row(r).iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

fn matvec_t(a: &Matrix, y: &[f64]) -> RealVec {
    let mut out = RealVec::zeros(a.cols());
    for (r, yr) in y.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(a.row(r)) {
            *o += v * yr;
        }
    }
    out
}

impl QuadraticPair {
    pub fn new(a: [Matrix; 2], b: [RealVec; 2]) -> Result<Self> {
        check_len(a[0].cols(), a[1].cols())?;
        for i in 0..2 {
            check_len(a[i].rows(), b[i].len())?;
        }
        Ok(Self { a, b })
    }

    /// Gaussian `A_i` (`rows x dim`, entries scaled by `1/sqrt(dim)`) and targets.
    /// With `2 * rows <= dim` both losses share a zero-loss minimizer.
    pub fn random(rng: &mut RngStream, dim: usize, rows: usize) -> Result<Self> {
        if dim == 0 || rows == 0 {
            return Err(Error::Config("toy dimensions must be positive".into()));
        }
        let scale = 1.0 / (dim as f64).sqrt();
        let mat = |rng: &mut RngStream| {
            Matrix::from_vec(rows, dim, (0..rows * dim).map(|_| scale * rng.standard_normal()).collect())
        };
        let a = [mat(rng)?, mat(rng)?];
        let b = [
            (0..rows).map(|_| rng.standard_normal()).collect(),
            (0..rows).map(|_| rng.standard_normal()).collect(),
        ];
        Self::new(a, b)
    }

    pub fn dim(&self) -> usize {
        self.a[0].cols()
    }

    fn residual(&self, i: usize, theta: &[f64]) -> RealVec {
        let mut r = matvec(&self.a[i], theta);
        for (x, b) in r.iter_mut().zip(self.b[i].iter()) {
            *x -= b;
        }
        r
    }

    pub fn losses(&self, theta: &[f64]) -> Result<[f64; 2]> {
        check_len(self.dim(), theta.len())?;
        let l = |i| {
            let r = self.residual(i, theta);
            0.5 * dot(&r, &r).unwrap_or(0.0)
        };
        Ok([l(0), l(1)])
    }

    pub fn gradients(&self, theta: &[f64]) -> Result<[RealVec; 2]> {
        check_len(self.dim(), theta.len())?;
        Ok([0, 1].map(|i| matvec_t(&self.a[i], &self.residual(i, theta))))
    }

    /// Upper bound on the largest curvature of `L_0 + L_1` (squared Frobenius norms).
    pub fn curvature_bound(&self) -> f64 {
        self.a.iter().map(|m| m.data().iter().map(|x| x * x).sum::<f64>()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub stationarity_iteration: Option<u64>,
    pub iterations_run: u64,
    pub conflict_steps: u64,
    pub initial_losses: [f64; 2],
    pub final_losses: [f64; 2],
    pub final_min_norm: f64,
    /// Largest increase of either loss over a single step.
    pub max_loss_increase: f64,
}

/// Full-batch updates `theta <- theta - eta * h`, where `h` integrates the two
/// gradients, until the Pareto solution of the pair is stationary or
/// `max_iter` steps have run.
pub fn run_to_stationarity(
    problem: &QuadraticPair,
    theta0: &[f64],
    strategy: &StrategyConfig,
    eta: f64,
    max_iter: u64,
) -> Result<ConvergenceReport> {
    strategy.validate()?;
    let mut theta = RealVec::from_slice(theta0);
    let initial_losses = problem.losses(&theta)?;
    let mut losses = initial_losses;
    let mut conflict_steps = 0;
    let mut max_loss_increase = 0.0f64;
    for t in 0..max_iter {
        let [g0, g1] = problem.gradients(&theta)?;
        let sol = solve_closed_form(&g0, &g1)?;
        if sol.is_stationary {
            return Ok(ConvergenceReport {
                stationarity_iteration: Some(t),
                iterations_run: t,
                conflict_steps,
                initial_losses,
                final_losses: losses,
                final_min_norm: sol.min_norm,
                max_loss_increase,
            });
        }
        let outcome = strategy.integrate(&g0, &g1)?;
        if outcome.case_tag == CaseTag::Conflict {
            conflict_steps += 1;
        }
        theta.axpy(-eta, &outcome.final_grad)?;
        let next = problem.losses(&theta)?;
        if !next.iter().all(|l| l.is_finite()) {
            return Err(Error::NumericalAbort {
                iteration: t,
                param_norms: vec![theta.l2_norm()?],
            });
        }
        max_loss_increase = max_loss_increase.max(next[0] - losses[0]).max(next[1] - losses[1]);
        losses = next;
    }
    let [g0, g1] = problem.gradients(&theta)?;
    let sol = solve_closed_form(&g0, &g1)?;
    Ok(ConvergenceReport {
        stationarity_iteration: sol.is_stationary.then_some(max_iter),
        iterations_run: max_iter,
        conflict_steps,
        initial_losses,
        final_losses: losses,
        final_min_norm: sol.min_norm,
        max_loss_increase,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::Strategy;

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngStream::new(1, 1);
        let p = QuadraticPair::random(&mut rng, 6, 2).unwrap();
        let theta: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
        let g = p.gradients(&theta).unwrap();
        let h = 1e-6;
        for j in 0..6 {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[j] += h;
            dn[j] -= h;
            let (lu, ld) = (p.losses(&up).unwrap(), p.losses(&dn).unwrap());
            for i in 0..2 {
                let fd = (lu[i] - ld[i]) / (2.0 * h);
                assert!((fd - g[i][j]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn mmpareto_reaches_stationarity() {
        let mut rng = RngStream::new(4, 0);
        let p = QuadraticPair::random(&mut rng, 8, 2).unwrap();
        let theta0: Vec<f64> = (0..8).map(|_| rng.standard_normal()).collect();
        let s = StrategyConfig::new(Strategy::MMPareto, 1.5);
        let eta = 1.0 / (s.gamma * p.curvature_bound());
        let rep = run_to_stationarity(&p, &theta0, &s, eta, 10_000).unwrap();
        assert!(rep.stationarity_iteration.is_some(), "{rep:?}");
        assert!(rep.final_losses[0] < rep.initial_losses[0]);
    }

    #[test]
    fn already_stationary_start() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let p = QuadraticPair::new(
            [a.clone(), a],
            [RealVec::from_slice(&[1.0]), RealVec::from_slice(&[-1.0])],
        )
        .unwrap();
        // gradients (-1, 0) and (1, 0): the hull contains the origin
        let rep = run_to_stationarity(&p, &[0.0, 0.0], &StrategyConfig::default(), 0.1, 10).unwrap();
        assert_eq!(rep.stationarity_iteration, Some(0));
    }
}
