//! First-order optimality residuals, computed from problem data alone.

use nalgebra::DVector;

use super::qp::QpProblem;
use super::{Evaluation, Multipliers, NlpProblem};
use crate::error::Result;
use crate::linalg::vec_inf_norm;

/// Infinity norm of the stacked KKT conditions at `theta`:
/// stationarity, equality violation, positive inequality and bound
/// violation, complementarity and multiplier negativity.
pub fn kkt_residual<P: NlpProblem + ?Sized>(
    problem: &P,
    theta: &DVector<f64>,
    mult: &Multipliers,
) -> Result<f64> {
    let eval = problem.evaluate(theta)?;
    Ok(residual_from(
        &eval,
        theta,
        &problem.lower(),
        &problem.upper(),
        mult,
    ))
}

pub fn residual_from(
    eval: &Evaluation,
    theta: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    mult: &Multipliers,
) -> f64 {
    let mut stat = eval.grad.clone();
    if !eval.eq.is_empty() {
        stat += eval.eq_jac.tr_mul(&mult.eq);
    }
    if !eval.ineq.is_empty() {
        stat += eval.ineq_jac.tr_mul(&mult.ineq);
    }
    stat -= &mult.lower;
    stat += &mult.upper;
    let mut res = vec_inf_norm(&stat);
    res = res.max(vec_inf_norm(&eval.eq));
    for i in 0..eval.ineq.len() {
        let (c, pi) = (eval.ineq[i], mult.ineq[i]);
        res = res.max(c.max(0.0)).max((pi * c).abs()).max((-pi).max(0.0));
    }
    for i in 0..theta.len() {
        if lower[i].is_finite() {
            let s = theta[i] - lower[i];
            res = res.max((-s).max(0.0)).max((mult.lower[i] * s).abs());
        } else {
            res = res.max(mult.lower[i].abs());
        }
        if upper[i].is_finite() {
            let s = upper[i] - theta[i];
            res = res.max((-s).max(0.0)).max((mult.upper[i] * s).abs());
        } else {
            res = res.max(mult.upper[i].abs());
        }
        res = res
            .max((-mult.lower[i]).max(0.0))
            .max((-mult.upper[i]).max(0.0));
    }
    res
}

pub fn qp_kkt_residual(qp: &QpProblem, x: &DVector<f64>, mult: &Multipliers) -> f64 {
    let eval = Evaluation {
        cost: qp.objective(x),
        grad: &qp.h * x + &qp.g,
        eq: &qp.a_eq * x - &qp.b_eq,
        eq_jac: qp.a_eq.clone(),
        ineq: &qp.a_in * x - &qp.b_in,
        ineq_jac: qp.a_in.clone(),
    };
    residual_from(&eval, x, &qp.lower, &qp.upper, mult)
}
