//! Dense solvers for the optimization layers.
//!
//! Sign conventions: equality constraints `c(theta) = 0`, inequalities
//! `g(theta) <= 0`, and the Lagrangian stationarity condition
//! `grad f + J_eq^T pi2 + J_in^T pi1 - pi_lower + pi_upper = 0` with
//! `pi1, pi_lower, pi_upper >= 0` and `pi2` sign-free.

pub mod kkt;
pub mod qp;
pub mod sqp;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::symmetrize;

pub use kkt::{kkt_residual, qp_kkt_residual};
pub use qp::{solve_qp, QpProblem, QpSolution};
pub use sqp::solve_sqp;

#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    /// `pi2`, one per equality row.
    pub eq: DVector<f64>,
    /// `pi1`, one per general inequality row.
    pub ineq: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Multipliers {
    pub fn zeros(n: usize, n_eq: usize, n_in: usize) -> Self {
        Self {
            eq: DVector::zeros(n_eq),
            ineq: DVector::zeros(n_in),
            lower: DVector::zeros(n),
            upper: DVector::zeros(n),
        }
    }

    /// Largest multiplier magnitude over the general constraints.
    pub fn max_constraint_multiplier(&self) -> f64 {
        self.eq
            .iter()
            .chain(self.ineq.iter())
            .fold(0.0, |m, v| f64::max(m, v.abs()))
    }
}

/// Values and first derivatives of an NLP at one point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub cost: f64,
    pub grad: DVector<f64>,
    pub eq: DVector<f64>,
    pub eq_jac: DMatrix<f64>,
    pub ineq: DVector<f64>,
    pub ineq_jac: DMatrix<f64>,
}

impl Evaluation {
    /// `grad f + J_eq^T pi2 + J_in^T pi1` (bounds excluded).
    pub fn lagrangian_gradient(&self, mult: &Multipliers) -> DVector<f64> {
        let mut g = self.grad.clone();
        if !self.eq.is_empty() {
            g += self.eq_jac.tr_mul(&mult.eq);
        }
        if !self.ineq.is_empty() {
            g += self.ineq_jac.tr_mul(&mult.ineq);
        }
        g
    }

    /// `||c_eq||_1 + sum max(0, g_in)`.
    pub fn violation(&self) -> f64 {
        self.eq.iter().map(|v| v.abs()).sum::<f64>()
            + self.ineq.iter().map(|v| v.max(0.0)).sum::<f64>()
    }
}

/// A smooth NLP over a box: `min f(theta)` s.t. `c(theta) = 0`, `g(theta) <= 0`,
/// `lower <= theta <= upper`.
pub trait NlpProblem {
    fn dim(&self) -> usize;
    fn lower(&self) -> DVector<f64>;
    fn upper(&self) -> DVector<f64>;
    fn evaluate(&self, theta: &DVector<f64>) -> Result<Evaluation>;

    /// Hessian of the Lagrangian. The default differentiates
    /// [`Evaluation::lagrangian_gradient`] by central differences.
    fn lagrangian_hessian(&self, theta: &DVector<f64>, mult: &Multipliers) -> Result<DMatrix<f64>> {
        fd_lagrangian_hessian(self, theta, mult)
    }

    /// True when every constraint is affine in `theta`.
    fn constraints_affine(&self) -> bool {
        false
    }
}

/// Central differences of the Lagrangian gradient, symmetrized.
pub fn fd_lagrangian_hessian<P: NlpProblem + ?Sized>(
    problem: &P,
    theta: &DVector<f64>,
    mult: &Multipliers,
) -> Result<DMatrix<f64>> {
    let n = problem.dim();
    let mut h = DMatrix::zeros(n, n);
    let mut probe = theta.clone();
    for i in 0..n {
        let step = 1e-5 * theta[i].abs().max(1.0);
        probe[i] = theta[i] + step;
        let plus = problem.evaluate(&probe)?.lagrangian_gradient(mult);
        probe[i] = theta[i] - step;
        let minus = problem.evaluate(&probe)?.lagrangian_gradient(mult);
        probe[i] = theta[i];
        h.set_column(i, &((plus - minus) / (2.0 * step)));
    }
    symmetrize(&mut h);
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub kkt_tol: f64,
    pub max_iter: usize,
    /// Backtracking factor of the line search.
    pub ls_beta: f64,
    /// Smallest eigenvalue enforced on the reduced Hessian.
    pub reg_min: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            max_iter: 200,
            ls_beta: 0.5,
            reg_min: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub theta: DVector<f64>,
    pub multipliers: Multipliers,
    pub cost: f64,
    /// Recomputed from problem data at `theta`.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

impl NlpSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// A convex QP seen as an NLP, so the SQP and the KKT check apply to it.
impl NlpProblem for QpProblem {
    fn dim(&self) -> usize {
        self.g.len()
    }

    fn lower(&self) -> DVector<f64> {
        self.lower.clone()
    }

    fn upper(&self) -> DVector<f64> {
        self.upper.clone()
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation> {
        Ok(Evaluation {
            cost: self.objective(x),
            grad: &self.h * x + &self.g,
            eq: &self.a_eq * x - &self.b_eq,
            eq_jac: self.a_eq.clone(),
            ineq: &self.a_in * x - &self.b_in,
            ineq_jac: self.a_in.clone(),
        })
    }

    fn lagrangian_hessian(
        &self,
        _theta: &DVector<f64>,
        _mult: &Multipliers,
    ) -> Result<DMatrix<f64>> {
        Ok(self.h.clone())
    }

    fn constraints_affine(&self) -> bool {
        true
    }
}
