//! Line-search SQP with an l1 merit function.

use nalgebra::{DMatrix, DVector};

use super::kkt::{kkt_residual, residual_from};
use super::qp::{solve_qp, QpProblem};
use super::{Evaluation, Multipliers, NlpProblem, NlpSolution, SolveStatus, SolverOptions};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{max_abs, min_symmetric_eigenvalue, null_space, vec_inf_norm};
use alloc::vec::Vec;

const ARMIJO: f64 = 1e-4;

fn clamp_to(x: &mut DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

fn merit(eval: &Evaluation, mu: f64) -> f64 {
    eval.cost + mu * eval.violation()
}

/// Rows `a` and offsets `c` of the linearized working set `a d + c = 0`:
/// equalities plus the constraints with positive multipliers.
fn working_set(
    eval: &Evaluation,
    x: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    mult: &Multipliers,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = x.len();
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut offs: Vec<f64> = Vec::new();
    for i in 0..eval.eq.len() {
        rows.push(eval.eq_jac.row(i).transpose());
        offs.push(eval.eq[i]);
    }
    if mult.ineq.len() == eval.ineq.len() {
        for i in 0..eval.ineq.len() {
            if mult.ineq[i] > 0.0 {
                rows.push(eval.ineq_jac.row(i).transpose());
                offs.push(eval.ineq[i]);
            }
        }
    }
    if mult.lower.len() == n {
        for i in 0..n {
            for (m, bound) in [(mult.lower[i], lower[i]), (mult.upper[i], upper[i])] {
                if m > 0.0 && bound.is_finite() {
                    let mut e = DVector::zeros(n);
                    e[i] = 1.0;
                    rows.push(e);
                    offs.push(x[i] - bound);
                }
            }
        }
    }
    let a = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
    (a, DVector::from_vec(offs))
}

/// Makes the QP strictly convex without moving its solution. Curvature is
/// first fixed on the null space of the working set (a diagonal shift up to
/// `reg_min`); the remaining directions are then convexified by the exact
/// penalty `sigma/2 |A d + c|^2`, which vanishes on the working set.
fn convexify(
    h: &mut DMatrix<f64>,
    g: &mut DVector<f64>,
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    reg_min: f64,
) {
    let n = h.nrows();
    let z = null_space(a);
    if z.ncols() > 0 {
        let lam = min_symmetric_eigenvalue(&z.tr_mul(&(&*h * &z)));
        let shift = (reg_min - lam).max(0.0);
        for i in 0..n {
            h[(i, i)] += shift;
        }
    }
    let floor = reg_min.max(1e-10);
    if min_symmetric_eigenvalue(h) >= floor || a.nrows() == 0 {
        return;
    }
    let ata = a.tr_mul(a);
    let atc = a.tr_mul(c);
    let mut sigma = (max_abs(h).max(1.0)) / max_abs(&ata).max(1e-300);
    for _ in 0..12 {
        let trial = &*h + &ata * sigma;
        if min_symmetric_eigenvalue(&trial) >= floor {
            *h = trial;
            g.axpy(sigma, &atc, 1.0);
            return;
        }
        sigma *= 10.0;
    }
    // fall back to a plain shift
    let lam = min_symmetric_eigenvalue(h);
    for i in 0..n {
        h[(i, i)] += floor - lam;
    }
}

fn subproblem(
    h: DMatrix<f64>,
    g: DVector<f64>,
    eval: &Evaluation,
    x: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> QpProblem {
    QpProblem::new(h, g)
        .with_equalities(eval.eq_jac.clone(), -&eval.eq)
        .with_inequalities(eval.ineq_jac.clone(), -&eval.ineq)
        .with_bounds(lower - x, upper - x)
}

/// Moves `x` onto the affine equality set with the smallest step inside the box.
fn project_affine<P: NlpProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<DVector<f64>> {
    let eval = problem.evaluate(x)?;
    if eval.eq.is_empty() {
        return Ok(x.clone());
    }
    let n = x.len();
    let qp = QpProblem::new(DMatrix::identity(n, n), DVector::zeros(n))
        .with_equalities(eval.eq_jac.clone(), -&eval.eq)
        .with_bounds(lower - x, upper - x);
    let step = solve_qp(&qp)?;
    let mut out = x + step.x;
    clamp_to(&mut out, lower, upper);
    Ok(out)
}

pub fn solve_sqp<P: NlpProblem + ?Sized>(
    problem: &P,
    theta0: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<NlpSolution> {
    let n = problem.dim();
    check_dim("sqp start", n, theta0.len())?;
    if !(opts.ls_beta > 0.0 && opts.ls_beta < 1.0) {
        return Err(Error::Config(
            "line-search factor must lie in (0, 1)".into(),
        ));
    }
    let lower = problem.lower();
    let upper = problem.upper();
    let mut x = theta0.clone();
    clamp_to(&mut x, &lower, &upper);
    if problem.constraints_affine() {
        x = project_affine(problem, &x, &lower, &upper)?;
    }

    let mut eval = problem.evaluate(&x)?;
    let mut mult = Multipliers::zeros(n, eval.eq.len(), eval.ineq.len());
    let mut mu = 0.0f64;
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;

    for iter in 0..opts.max_iter {
        iterations = iter;
        let mut h = problem.lagrangian_hessian(&x, &mult)?;
        let mut g = eval.grad.clone();
        let (wa, wc) = working_set(&eval, &x, &lower, &upper, &mult);
        convexify(&mut h, &mut g, &wa, &wc, opts.reg_min);
        let qp = subproblem(h, g, &eval, &x, &lower, &upper);
        let sol = solve_qp(&qp)?;
        let d = sol.x;
        let qp_mult = sol.multipliers;

        if residual_from(&eval, &x, &lower, &upper, &qp_mult) <= opts.kkt_tol {
            mult = qp_mult;
            status = SolveStatus::Converged;
            break;
        }

        mu = mu.max(1.5 * qp_mult.max_constraint_multiplier());
        let phi0 = merit(&eval, mu);
        let slope = eval.grad.dot(&d) - mu * eval.violation();
        let slack = 1e-14 * (1.0 + phi0.abs());
        let tiny = vec_inf_norm(&d) <= 1e-15 * (1.0 + vec_inf_norm(&x));

        let mut alpha = 1.0;
        let mut accepted: Option<(DVector<f64>, Evaluation)> = None;
        while alpha >= 1e-12 {
            let mut trial = &x + &d * alpha;
            clamp_to(&mut trial, &lower, &upper);
            if let Ok(te) = problem.evaluate(&trial) {
                if tiny || merit(&te, mu) <= phi0 + ARMIJO * alpha * slope.min(0.0) + slack {
                    accepted = Some((trial, te));
                    break;
                }
                if alpha == 1.0 && !te.eq.is_empty() && !problem.constraints_affine() {
                    // second-order correction against the Maratos effect
                    if let Some((xc, ec)) =
                        second_order_correction(problem, &trial, &te, &lower, &upper)
                    {
                        if merit(&ec, mu) <= phi0 + ARMIJO * slope.min(0.0) + slack {
                            accepted = Some((xc, ec));
                            break;
                        }
                    }
                }
            }
            alpha *= opts.ls_beta;
        }
        match accepted {
            Some((xn, en)) => {
                x = xn;
                eval = en;
                mult = qp_mult;
            }
            None => {
                mult = qp_mult;
                status = SolveStatus::LineSearchFailure;
                break;
            }
        }
        iterations = iter + 1;
    }

    let kkt = kkt_residual(problem, &x, &mult)?;
    if status == SolveStatus::Converged && kkt > opts.kkt_tol {
        status = SolveStatus::MaxIter;
    }
    Ok(NlpSolution {
        cost: eval.cost,
        theta: x,
        multipliers: mult,
        kkt_residual: kkt,
        iterations,
        status,
    })
}

/// Minimum-norm correction `J^T (J J^T)^{-1} (-c)` evaluated at the trial point.
fn second_order_correction<P: NlpProblem + ?Sized>(
    problem: &P,
    trial: &DVector<f64>,
    te: &Evaluation,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Option<(DVector<f64>, Evaluation)> {
    let j = &te.eq_jac;
    let gram = j * j.transpose();
    let y = gram.lu().solve(&(-&te.eq))?;
    let mut xc = trial + j.tr_mul(&y);
    clamp_to(&mut xc, lower, upper);
    let ec = problem.evaluate(&xc).ok()?;
    Some((xc, ec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sqrt;
    use alloc::vec;

    /// `min (x0 - 2)^2 + (x1 - 1)^2` on the unit circle, solution `(2, 1)/sqrt(5)`.
    struct Circle;

    impl NlpProblem for Circle {
        fn dim(&self) -> usize {
            2
        }
        fn lower(&self) -> DVector<f64> {
            DVector::from_element(2, -5.0)
        }
        fn upper(&self) -> DVector<f64> {
            DVector::from_element(2, 5.0)
        }
        fn evaluate(&self, t: &DVector<f64>) -> Result<Evaluation> {
            Ok(Evaluation {
                cost: (t[0] - 2.0).powi(2) + (t[1] - 1.0).powi(2),
                grad: DVector::from_vec(vec![2.0 * (t[0] - 2.0), 2.0 * (t[1] - 1.0)]),
                eq: DVector::from_element(1, t[0] * t[0] + t[1] * t[1] - 1.0),
                eq_jac: DMatrix::from_row_slice(1, 2, &[2.0 * t[0], 2.0 * t[1]]),
                ineq: DVector::zeros(0),
                ineq_jac: DMatrix::zeros(0, 2),
            })
        }
    }

    #[test]
    fn nonlinear_equality() {
        let s = solve_sqp(
            &Circle,
            &DVector::from_vec(vec![0.1, 0.9]),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(s.converged(), "{:?}", s.status);
        let r = sqrt(5.0);
        assert!((s.theta[0] - 2.0 / r).abs() < 1e-8);
        assert!((s.theta[1] - 1.0 / r).abs() < 1e-8);
        // stationarity: 2(x - a) + 2 pi x = 0 => pi = sqrt(5) - 1
        assert!((s.multipliers.eq[0] - (r - 1.0)).abs() < 1e-7);
    }

    #[test]
    fn quadratic_in_one_iteration() {
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let qp = QpProblem::new(h, DVector::from_vec(vec![-1.0, 2.0, -3.0]))
            .with_equalities(
                DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]),
                DVector::from_element(1, 1.0),
            )
            .with_bounds(DVector::from_element(3, 0.0), DVector::from_element(3, 0.8));
        let direct = solve_qp(&qp).unwrap();
        let opts = SolverOptions {
            reg_min: 0.0,
            ..SolverOptions::default()
        };
        let s = solve_sqp(&qp, &DVector::from_element(3, 0.2), &opts).unwrap();
        assert!(s.converged());
        assert!(s.iterations <= 1, "{}", s.iterations);
        assert!((s.theta - direct.x).amax() <= 1e-9);
    }

    #[test]
    fn rejects_bad_line_search_factor() {
        let opts = SolverOptions {
            ls_beta: 1.0,
            ..SolverOptions::default()
        };
        assert!(solve_sqp(&Circle, &DVector::zeros(2), &opts).is_err());
    }
}
