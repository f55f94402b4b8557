//! The periodic modifier-adaptation DRTO.
//!
//! The modified model is `F(theta) = F_m(theta) + lambda_x x0 + lambda_u u_vec + eps`.
//! States are eliminated, so the NLP lives in `theta = (x0, u_vec)` only.
//! Constraint layout, shared by the modified problem and the plant oracle so
//! that multipliers carry over between them:
//!
//! - equalities: `x_T(theta) - x0 = 0` (`n_x` rows);
//! - inequalities: `x_i - x_max <= 0` then `x_min - x_i <= 0`, for
//!   `i = 1..T-1` (the last state equals `x0`, which the box already bounds);
//! - box: `x_min <= x0 <= x_max`, `u_min <= u_i <= u_max`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::gradients::{lift, lift_with_jacobian, LiftedJacobian, Theta};
use crate::linalg::{spectral_radius, vec_inf_norm};
use crate::model::LiftedLinearModel;
use crate::plant::PeriodicPlant;
use crate::solver::{solve_sqp, Evaluation, Multipliers, NlpProblem, NlpSolution, SolverOptions};

/// Stage cost `q_a^2 + c q_b^2 + p * 0.012 / (S (h1 + h2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EconomicCost {
    pub c: f64,
    pub p: f64,
    /// Tank cross-section `S` (m^2).
    pub area: f64,
}

impl EconomicCost {
    pub fn validate(&self) -> Result<()> {
        if self.c > 0.0 && self.p > 0.0 && self.area > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(
                "cost weights and area must be positive".into(),
            ))
        }
    }

    fn level_weight(&self) -> f64 {
        self.p * 0.012 / self.area
    }

    pub fn stage(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        let s = x[0] + x[1];
        if !(s > 0.0) {
            return Err(Error::NegativeLevel { tank: 0, level: s });
        }
        Ok(u[0] * u[0] + self.c * u[1] * u[1] + self.level_weight() / s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrtoBounds {
    pub x_min: DVector<f64>,
    pub x_max: DVector<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
}

impl DrtoBounds {
    pub fn validate(&self) -> Result<()> {
        check_dim("state bounds", self.x_min.len(), self.x_max.len())?;
        check_dim("input bounds", self.u_min.len(), self.u_max.len())?;
        let ok = self.x_min.iter().zip(self.x_max.iter()).all(|(a, b)| a < b)
            && self
                .u_min
                .iter()
                .zip(self.u_max.iter())
                .all(|(a, b)| a <= b);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "lower bounds must lie below upper bounds".into(),
            ))
        }
    }
}

/// Affine corrections of the lifted model.
#[derive(Debug, Clone, PartialEq)]
pub struct Modifiers {
    pub lambda_x: DMatrix<f64>,
    pub lambda_u: DMatrix<f64>,
    pub eps: DVector<f64>,
    pub iteration: usize,
}

impl Modifiers {
    pub fn zeros(n_x: usize, n_u: usize, period: usize) -> Self {
        Self {
            lambda_x: DMatrix::zeros(period * n_x, n_x),
            lambda_u: DMatrix::zeros(period * n_x, period * n_u),
            eps: DVector::zeros(period * n_x),
            iteration: 0,
        }
    }

    /// `[lambda_x lambda_u]`.
    pub fn lambda(&self) -> DMatrix<f64> {
        let (rows, nx, nu) = (
            self.lambda_x.nrows(),
            self.lambda_x.ncols(),
            self.lambda_u.ncols(),
        );
        let mut l = DMatrix::zeros(rows, nx + nu);
        l.columns_mut(0, nx).copy_from(&self.lambda_x);
        l.columns_mut(nx, nu).copy_from(&self.lambda_u);
        l
    }

    pub fn lambda_norm(&self) -> f64 {
        self.lambda_x.amax().max(self.lambda_u.amax())
    }

    pub fn eps_norm(&self) -> f64 {
        vec_inf_norm(&self.eps)
    }

    /// `lambda_x x0 + lambda_u u_vec + eps`.
    pub fn correction(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.lambda() * theta + &self.eps
    }
}

/// One period of states and inputs. `states[i]` is `x_{i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicTrajectory {
    pub x0: DVector<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub step_seconds: f64,
    pub closed: bool,
}

pub const CLOSURE_TOL: f64 = 1e-8;

impl PeriodicTrajectory {
    pub fn from_lifted(
        theta: &DVector<f64>,
        stacked: &DVector<f64>,
        n_x: usize,
        n_u: usize,
        step_seconds: f64,
    ) -> Self {
        let period = stacked.len() / n_x;
        let x0 = theta.rows(0, n_x).into_owned();
        let states = (0..period)
            .map(|i| stacked.rows(i * n_x, n_x).into_owned())
            .collect();
        let inputs = (0..period)
            .map(|i| theta.rows(n_x + i * n_u, n_u).into_owned())
            .collect();
        let mut traj = Self {
            x0,
            states,
            inputs,
            step_seconds,
            closed: false,
        };
        traj.closed = traj.closure_violation() <= CLOSURE_TOL;
        traj
    }

    pub fn period(&self) -> usize {
        self.inputs.len()
    }

    /// `x_i` for `i = 0..=T`.
    pub fn state(&self, i: usize) -> &DVector<f64> {
        if i == 0 {
            &self.x0
        } else {
            &self.states[i - 1]
        }
    }

    pub fn closure_violation(&self) -> f64 {
        match self.states.last() {
            Some(last) => vec_inf_norm(&(last - &self.x0)),
            None => 0.0,
        }
    }

    /// `max_i ||x_i - x_0||_inf` over the period.
    pub fn max_state_spread(&self) -> f64 {
        self.states
            .iter()
            .fold(0.0, |m, s| m.max(vec_inf_norm(&(s - &self.x0))))
    }

    pub fn theta(&self) -> DVector<f64> {
        let nx = self.x0.len();
        let nu = self.inputs.first().map_or(0, |u| u.len());
        let mut t = DVector::zeros(nx + nu * self.inputs.len());
        t.rows_mut(0, nx).copy_from(&self.x0);
        for (i, u) in self.inputs.iter().enumerate() {
            t.rows_mut(nx + i * nu, nu).copy_from(u);
        }
        t
    }
}

/// The economic reference handed to the control layers: stage `i` pairs
/// `x_i` with `u_i` for `i = 0..T-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EconomicReference {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub step_seconds: f64,
    pub iteration: usize,
}

impl EconomicReference {
    pub fn period(&self) -> usize {
        self.inputs.len()
    }

    pub fn value_count(&self) -> usize {
        self.states.iter().map(|s| s.len()).sum::<usize>()
            + self.inputs.iter().map(|u| u.len()).sum::<usize>()
    }
}

pub fn extract_reference(traj: &PeriodicTrajectory, iteration: usize) -> Result<EconomicReference> {
    if !traj.closed {
        return Err(Error::PeriodicClosure {
            violation: traj.closure_violation(),
        });
    }
    Ok(EconomicReference {
        states: (0..traj.period()).map(|i| traj.state(i).clone()).collect(),
        inputs: traj.inputs.clone(),
        step_seconds: traj.step_seconds,
        iteration,
    })
}

/// A map from `theta` to the stacked states `x_1..x_T`.
pub trait LiftedMap {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn period(&self) -> usize;
    fn value(&self, theta: &DVector<f64>) -> Result<DVector<f64>>;
    fn value_and_jacobian(&self, theta: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>;
    fn is_affine(&self) -> bool;
}

/// The lifted linear model with modifiers applied.
#[derive(Debug, Clone)]
pub struct ModifiedModel {
    pub lifted: LiftedLinearModel,
    pub modifiers: Modifiers,
    jacobian: DMatrix<f64>,
}

impl ModifiedModel {
    pub fn new(lifted: LiftedLinearModel, modifiers: Modifiers) -> Result<Self> {
        let rows = lifted.period * lifted.n_x;
        check_dim("lambda_x rows", rows, modifiers.lambda_x.nrows())?;
        check_dim("lambda_x cols", lifted.n_x, modifiers.lambda_x.ncols())?;
        check_dim("lambda_u rows", rows, modifiers.lambda_u.nrows())?;
        check_dim(
            "lambda_u cols",
            lifted.period * lifted.n_u,
            modifiers.lambda_u.ncols(),
        )?;
        check_dim("eps", rows, modifiers.eps.len())?;
        let jacobian = lifted.jacobian() + modifiers.lambda();
        Ok(Self {
            lifted,
            modifiers,
            jacobian,
        })
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }
}

impl LiftedMap for ModifiedModel {
    fn state_dim(&self) -> usize {
        self.lifted.n_x
    }

    fn input_dim(&self) -> usize {
        self.lifted.n_u
    }

    fn period(&self) -> usize {
        self.lifted.period
    }

    fn value(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("theta", self.lifted.theta_dim(), theta.len())?;
        Ok(&self.jacobian * theta + &self.lifted.c + &self.modifiers.eps)
    }

    fn value_and_jacobian(&self, theta: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((self.value(theta)?, self.jacobian.clone()))
    }

    fn is_affine(&self) -> bool {
        true
    }
}

/// The true plant over one period.
#[derive(Debug, Clone)]
pub struct PlantMap<'a, P: PeriodicPlant + ?Sized> {
    pub plant: &'a P,
}

impl<P: PeriodicPlant + ?Sized> LiftedMap for PlantMap<'_, P> {
    fn state_dim(&self) -> usize {
        self.plant.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.plant.input_dim()
    }

    fn period(&self) -> usize {
        self.plant.period()
    }

    fn value(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        lift(self.plant, theta)
    }

    fn value_and_jacobian(&self, theta: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        lift_with_jacobian(self.plant, theta)
    }

    fn is_affine(&self) -> bool {
        false
    }
}

/// The periodic DRTO over a lifted map.
///
/// With `state_penalty = Some(rho)` the inner state bounds are softened by
/// one slack `s_r >= 0` per state entry, `x_min - s_r <= x_r <= x_max + s_r`,
/// at a cost `rho (s_r + s_r^2 / 2)`. The NLP variable is then
/// `(theta, s)`; `x0` and the inputs stay hard-bounded.
#[derive(Debug, Clone)]
pub struct DrtoProblem<M> {
    pub map: M,
    pub cost: EconomicCost,
    pub bounds: DrtoBounds,
    pub step_seconds: f64,
    pub state_penalty: Option<f64>,
}

impl<M: LiftedMap> DrtoProblem<M> {
    pub fn new(map: M, cost: EconomicCost, bounds: DrtoBounds, step_seconds: f64) -> Result<Self> {
        cost.validate()?;
        bounds.validate()?;
        check_dim("state bounds", map.state_dim(), bounds.x_min.len())?;
        check_dim("input bounds", map.input_dim(), bounds.u_min.len())?;
        Ok(Self {
            map,
            cost,
            bounds,
            step_seconds,
            state_penalty: None,
        })
    }

    pub fn with_state_penalty(mut self, penalty: Option<f64>) -> Result<Self> {
        if let Some(rho) = penalty {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(Error::Config(
                    "state penalty must be positive and finite".into(),
                ));
            }
        }
        self.state_penalty = penalty;
        Ok(self)
    }

    fn dims(&self) -> (usize, usize, usize) {
        (
            self.map.state_dim(),
            self.map.input_dim(),
            self.map.period(),
        )
    }

    pub fn theta_dim(&self) -> usize {
        let (nx, nu, t) = self.dims();
        nx + t * nu
    }

    pub fn slack_dim(&self) -> usize {
        let (nx, _, t) = self.dims();
        if self.state_penalty.is_some() {
            (t - 1) * nx
        } else {
            0
        }
    }

    /// Splits an NLP point into `theta` and the slacks.
    pub fn split(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.theta_dim();
        (
            y.rows(0, n).into_owned(),
            y.rows(n, y.len() - n).into_owned(),
        )
    }

    /// NLP start from `theta`: slacks set to the current bound violation.
    pub fn initial_point(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.theta_dim();
        if theta.len() == n + self.slack_dim() {
            return Ok(theta.clone());
        }
        check_dim("theta", n, theta.len())?;
        let mut y = DVector::zeros(n + self.slack_dim());
        y.rows_mut(0, n).copy_from(theta);
        if self.slack_dim() > 0 {
            let (nx, _, _) = self.dims();
            let stacked = self.map.value(theta)?;
            for r in 0..self.slack_dim() {
                let b = r % nx;
                let v = (stacked[r] - self.bounds.x_max[b]).max(self.bounds.x_min[b] - stacked[r]);
                y[n + r] = v.max(0.0);
            }
        }
        Ok(y)
    }

    /// Economic cost over the period given stacked states.
    pub fn total_cost(&self, theta: &DVector<f64>, stacked: &DVector<f64>) -> Result<f64> {
        let (nx, nu, t) = self.dims();
        let mut total = 0.0;
        for i in 0..t {
            let x = if i == 0 {
                theta.rows(0, nx).into_owned()
            } else {
                stacked.rows((i - 1) * nx, nx).into_owned()
            };
            total += self
                .cost
                .stage(&x, &theta.rows(nx + i * nu, nu).into_owned())?;
        }
        Ok(total)
    }

    pub fn penalty(&self, slack: &DVector<f64>) -> f64 {
        match self.state_penalty {
            Some(rho) => slack.iter().map(|s| rho * (s + 0.5 * s * s)).sum(),
            None => 0.0,
        }
    }

    /// Gradient and Gauss-Newton Hessian of the economic cost through the
    /// (possibly linearized) map. Exact when the map is affine.
    fn cost_derivatives(
        &self,
        theta: &DVector<f64>,
        stacked: &DVector<f64>,
        jac: &DMatrix<f64>,
        with_hessian: bool,
    ) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let (nx, nu, t) = self.dims();
        let n = theta.len();
        let k = self.cost.level_weight();
        let mut grad = DVector::zeros(n);
        let mut hess = if with_hessian {
            Some(DMatrix::zeros(n, n))
        } else {
            None
        };
        for i in 0..t {
            // w = d(h1 + h2)/d theta
            let (s, w) = if i == 0 {
                let mut w = DVector::zeros(n);
                w[0] = 1.0;
                w[1] = 1.0;
                (theta[0] + theta[1], w)
            } else {
                let r = (i - 1) * nx;
                let w = (jac.row(r) + jac.row(r + 1)).transpose();
                (stacked[r] + stacked[r + 1], w)
            };
            if !(s > 0.0) {
                return Err(Error::NegativeLevel { tank: 0, level: s });
            }
            grad.axpy(-k / (s * s), &w, 1.0);
            let ui = nx + i * nu;
            grad[ui] += 2.0 * theta[ui];
            grad[ui + 1] += 2.0 * self.cost.c * theta[ui + 1];
            if let Some(h) = hess.as_mut() {
                h.ger(2.0 * k / (s * s * s), &w, &w, 1.0);
                h[(ui, ui)] += 2.0;
                h[(ui + 1, ui + 1)] += 2.0 * self.cost.c;
            }
        }
        Ok((grad, hess))
    }

    fn constraints(
        &self,
        theta: &DVector<f64>,
        slack: &DVector<f64>,
        stacked: &DVector<f64>,
        jac: &DMatrix<f64>,
    ) -> (DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let (nx, _, t) = self.dims();
        let n = theta.len();
        let ns = slack.len();
        let last = (t - 1) * nx;
        let eq = stacked.rows(last, nx) - theta.rows(0, nx);
        let mut eq_jac = DMatrix::zeros(nx, n + ns);
        eq_jac
            .view_mut((0, 0), (nx, n))
            .copy_from(&jac.rows(last, nx));
        for i in 0..nx {
            eq_jac[(i, i)] -= 1.0;
        }
        let inner = (t - 1) * nx;
        let mut ineq = DVector::zeros(2 * inner);
        let mut ineq_jac = DMatrix::zeros(2 * inner, n + ns);
        for r in 0..inner {
            let b = r % nx;
            let s = if ns > 0 { slack[r] } else { 0.0 };
            ineq[r] = stacked[r] - self.bounds.x_max[b] - s;
            ineq[inner + r] = self.bounds.x_min[b] - stacked[r] - s;
            ineq_jac.view_mut((r, 0), (1, n)).copy_from(&jac.row(r));
            ineq_jac
                .view_mut((inner + r, 0), (1, n))
                .copy_from(&(-jac.row(r)));
            if ns > 0 {
                ineq_jac[(r, n + r)] = -1.0;
                ineq_jac[(inner + r, n + r)] = -1.0;
            }
        }
        (eq, eq_jac, ineq, ineq_jac)
    }
}

impl<M: LiftedMap> NlpProblem for DrtoProblem<M> {
    fn dim(&self) -> usize {
        self.theta_dim() + self.slack_dim()
    }

    fn lower(&self) -> DVector<f64> {
        let (nx, nu, t) = self.dims();
        let mut l = DVector::zeros(self.dim());
        l.rows_mut(0, nx).copy_from(&self.bounds.x_min);
        for i in 0..t {
            l.rows_mut(nx + i * nu, nu).copy_from(&self.bounds.u_min);
        }
        l
    }

    fn upper(&self) -> DVector<f64> {
        let (nx, nu, t) = self.dims();
        let mut l = DVector::from_element(self.dim(), f64::INFINITY);
        l.rows_mut(0, nx).copy_from(&self.bounds.x_max);
        for i in 0..t {
            l.rows_mut(nx + i * nu, nu).copy_from(&self.bounds.u_max);
        }
        l
    }

    fn evaluate(&self, y: &DVector<f64>) -> Result<Evaluation> {
        check_dim("drto variable", self.dim(), y.len())?;
        let (theta, slack) = self.split(y);
        let (stacked, jac) = self.map.value_and_jacobian(&theta)?;
        let cost = self.total_cost(&theta, &stacked)? + self.penalty(&slack);
        let (g_theta, _) = self.cost_derivatives(&theta, &stacked, &jac, false)?;
        let mut grad = DVector::zeros(y.len());
        grad.rows_mut(0, theta.len()).copy_from(&g_theta);
        if let Some(rho) = self.state_penalty {
            for (r, s) in slack.iter().enumerate() {
                grad[theta.len() + r] = rho * (1.0 + s);
            }
        }
        let (eq, eq_jac, ineq, ineq_jac) = self.constraints(&theta, &slack, &stacked, &jac);
        Ok(Evaluation {
            cost,
            grad,
            eq,
            eq_jac,
            ineq,
            ineq_jac,
        })
    }

    fn lagrangian_hessian(&self, y: &DVector<f64>, mult: &Multipliers) -> Result<DMatrix<f64>> {
        let n = self.theta_dim();
        let mut h = DMatrix::zeros(self.dim(), self.dim());
        let (theta, _) = self.split(y);
        if self.map.is_affine() {
            let (stacked, jac) = self.map.value_and_jacobian(&theta)?;
            let (_, hc) = self.cost_derivatives(&theta, &stacked, &jac, true)?;
            h.view_mut((0, 0), (n, n))
                .copy_from(&hc.expect("requested"));
        } else {
            // slacks enter linearly in the constraints and separably in the
            // cost, so only the theta block needs differencing
            let mut probe = y.clone();
            for i in 0..n {
                let step = 1e-5 * y[i].abs().max(1.0);
                probe[i] = y[i] + step;
                let plus = self.evaluate(&probe)?.lagrangian_gradient(mult);
                probe[i] = y[i] - step;
                let minus = self.evaluate(&probe)?.lagrangian_gradient(mult);
                probe[i] = y[i];
                let col = (plus.rows(0, n) - minus.rows(0, n)) / (2.0 * step);
                h.view_mut((0, i), (n, 1)).copy_from(&col);
            }
            crate::linalg::symmetrize(&mut h);
        }
        if let Some(rho) = self.state_penalty {
            for r in n..self.dim() {
                h[(r, r)] = rho;
            }
        }
        Ok(h)
    }

    fn constraints_affine(&self) -> bool {
        self.map.is_affine()
    }
}

pub fn build_modified_drto(
    lifted: &LiftedLinearModel,
    mods: &Modifiers,
    cost: EconomicCost,
    bounds: DrtoBounds,
) -> Result<DrtoProblem<ModifiedModel>> {
    let step = lifted.step_seconds;
    DrtoProblem::new(
        ModifiedModel::new(lifted.clone(), mods.clone())?,
        cost,
        bounds,
        step,
    )
}

/// The DRTO with the true plant map.
pub fn build_plant_drto<P: PeriodicPlant + ?Sized>(
    plant: &P,
    cost: EconomicCost,
    bounds: DrtoBounds,
) -> Result<DrtoProblem<PlantMap<'_, P>>> {
    let step = plant.step_seconds();
    DrtoProblem::new(PlantMap { plant }, cost, bounds, step)
}

/// True-plant cost of applying `theta` from `x0`.
pub fn plant_cost<P: PeriodicPlant + ?Sized>(
    plant: &P,
    theta: &DVector<f64>,
    cost: &EconomicCost,
) -> Result<f64> {
    let (nx, nu, t) = (plant.state_dim(), plant.input_dim(), plant.period());
    let stacked = lift(plant, theta)?;
    let mut total = 0.0;
    for i in 0..t {
        let x = if i == 0 {
            theta.rows(0, nx).into_owned()
        } else {
            stacked.rows((i - 1) * nx, nx).into_owned()
        };
        total += cost.stage(&x, &theta.rows(nx + i * nu, nu).into_owned())?;
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct DrtoSolution {
    pub theta: Theta,
    /// State-bound slacks (empty with hard bounds).
    pub slack: DVector<f64>,
    pub trajectory: PeriodicTrajectory,
    pub solution: NlpSolution,
}

/// Solves a DRTO and rebuilds its trajectory. A converged solution must
/// close the period to [`CLOSURE_TOL`].
pub fn solve_drto<M: LiftedMap>(
    problem: &DrtoProblem<M>,
    warm_start: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<DrtoSolution> {
    let y0 = problem.initial_point(warm_start)?;
    let solution = solve_sqp(problem, &y0, opts)?;
    let (theta, slack) = problem.split(&solution.theta);
    let stacked = problem.map.value(&theta)?;
    let (nx, nu, _) = problem.dims();
    let trajectory =
        PeriodicTrajectory::from_lifted(&theta, &stacked, nx, nu, problem.step_seconds);
    if solution.converged() && !trajectory.closed {
        return Err(Error::PeriodicClosure {
            violation: trajectory.closure_violation(),
        });
    }
    Ok(DrtoSolution {
        theta: Theta::from_vector(theta, nx)?,
        slack,
        trajectory,
        solution,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateOptions {
    /// When false only the zeroth-order modifier `eps` is adapted.
    pub first_order: bool,
    /// Use the freshly computed `Lambda_{l+1}` in the `eps` update instead of `Lambda_l`.
    pub eps_uses_new_lambda: bool,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        Self {
            first_order: true,
            eps_uses_new_lambda: false,
        }
    }
}

/// `Lambda_{l+1} = Jp - Jm`, `eps_{l+1} = F_p(theta) - (F_m(theta) + Lambda_l theta)`.
pub fn update_modifiers(
    theta: &Theta,
    mods: &Modifiers,
    jp: &LiftedJacobian,
    jm: &LiftedJacobian,
    fp: &DVector<f64>,
    fm: &DVector<f64>,
    opts: UpdateOptions,
) -> Result<Modifiers> {
    let th = theta.as_vector();
    let nx = theta.state_dim();
    let (rows, cols) = (mods.eps.len(), th.len());
    for (what, m) in [
        ("plant jacobian", &jp.matrix),
        ("model jacobian", &jm.matrix),
    ] {
        check_dim(what, rows, m.nrows())?;
        check_dim(what, cols, m.ncols())?;
    }
    check_dim("plant values", rows, fp.len())?;
    check_dim("model values", rows, fm.len())?;
    let lambda_new = if opts.first_order {
        &jp.matrix - &jm.matrix
    } else {
        DMatrix::zeros(rows, cols)
    };
    let lambda_eps = if opts.eps_uses_new_lambda {
        lambda_new.clone()
    } else {
        mods.lambda()
    };
    let eps = fp - (fm + &lambda_eps * th);
    Ok(Modifiers {
        lambda_x: lambda_new.columns(0, nx).into_owned(),
        lambda_u: lambda_new.columns(nx, cols - nx).into_owned(),
        eps,
        iteration: mods.iteration + 1,
    })
}

/// Filter gains, each square of size `T n_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterGains {
    pub kx: DMatrix<f64>,
    pub ku: DMatrix<f64>,
    pub keps: DMatrix<f64>,
}

impl FilterGains {
    pub fn scalar(kx: f64, ku: f64, keps: f64, rows: usize) -> Self {
        let eye = DMatrix::<f64>::identity(rows, rows);
        Self {
            kx: &eye * kx,
            ku: &eye * ku,
            keps: &eye * keps,
        }
    }

    pub fn validate(&self, rows: usize) -> Result<()> {
        for k in [&self.kx, &self.ku, &self.keps] {
            check_dim("filter gain rows", rows, k.nrows())?;
            check_dim("filter gain cols", rows, k.ncols())?;
            if spectral_radius(k) > 1.0 + 1e-12 {
                return Err(Error::Config(
                    "filter gain spectral radius exceeds one".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        let rows = self.kx.nrows();
        let eye = DMatrix::<f64>::identity(rows, rows);
        self.kx == eye && self.ku == eye && self.keps == eye
    }
}

/// `tilde_{l+1} = K new + (I - K) tilde_l` for each modifier.
pub fn filter_modifiers(
    new: &Modifiers,
    old: &Modifiers,
    gains: &FilterGains,
) -> Result<Modifiers> {
    let rows = new.eps.len();
    gains.validate(rows)?;
    let eye = DMatrix::<f64>::identity(rows, rows);
    let mix = |k: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>| k * a + (&eye - k) * b;
    let eps = &gains.keps * &new.eps + (&eye - &gains.keps) * &old.eps;
    Ok(Modifiers {
        lambda_x: mix(&gains.kx, &new.lambda_x, &old.lambda_x),
        lambda_u: mix(&gains.ku, &new.lambda_u, &old.lambda_u),
        eps,
        iteration: new.iteration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark;
    use crate::gradients::{fd_jacobian, plant_jacobian_exact, JacobianSource};
    use crate::model::{build_lifted, AffinePlant, StepBridge};
    use crate::plant::FourTankPlant;
    use crate::solver::kkt_residual;

    fn lifted() -> LiftedLinearModel {
        let m = benchmark::linear_model();
        build_lifted(
            &m.transition(3600.0, StepBridge::Composed).unwrap(),
            7,
            3600.0,
        )
    }

    fn start() -> DVector<f64> {
        let mut t = DVector::zeros(18);
        t.rows_mut(0, 4)
            .copy_from(&benchmark::linearization_state());
        for k in 0..7 {
            t[4 + 2 * k] = 1.948;
            t[5 + 2 * k] = 2.0;
        }
        t
    }

    fn bounds() -> DrtoBounds {
        benchmark::bounds(&benchmark::tank_params())
    }

    #[test]
    fn stage_cost_value() {
        let c = benchmark::economic_cost();
        let x = DVector::from_vec(alloc::vec![0.5, 0.5, 0.0, 0.0]);
        let u = DVector::from_vec(alloc::vec![1.0, 2.0]);
        // 1 + 4 + 20 * 0.012 / 0.03
        assert!((c.stage(&x, &u).unwrap() - 13.0).abs() < 1e-12);
    }

    #[test]
    fn modified_jacobian_is_model_plus_lambda() {
        let l = lifted();
        let mut mods = Modifiers::zeros(4, 2, 7);
        mods.lambda_x[(3, 1)] = 0.25;
        mods.lambda_u[(10, 5)] = -0.5;
        mods.eps[2] = 0.01;
        let m = ModifiedModel::new(l.clone(), mods.clone()).unwrap();
        let expect = l.jacobian() + mods.lambda();
        assert_eq!(m.jacobian(), &expect);
        let th = start();
        let fd = fd_jacobian(|t| m.value(t), &th, 1e-6).unwrap();
        assert!((fd - expect).amax() < 1e-8);
    }

    #[test]
    fn zero_modifiers_reproduce_the_model() {
        let l = lifted();
        let m = ModifiedModel::new(l.clone(), Modifiers::zeros(4, 2, 7)).unwrap();
        let th = start();
        let direct = l
            .lift(&th.rows(0, 4).into_owned(), &th.rows(4, 14).into_owned())
            .unwrap();
        assert!((m.value(&th).unwrap() - direct).amax() <= 1e-12);
    }

    #[test]
    fn drto_gradient_matches_finite_differences() {
        let mut mods = Modifiers::zeros(4, 2, 7);
        mods.lambda_u[(6, 3)] = 0.1;
        let p =
            build_modified_drto(&lifted(), &mods, benchmark::economic_cost(), bounds()).unwrap();
        let th = start();
        let ev = p.evaluate(&th).unwrap();
        let fd = fd_jacobian(
            |t| Ok(DVector::from_element(1, p.evaluate(t)?.cost)),
            &th,
            1e-6,
        )
        .unwrap();
        assert!((fd.transpose() - &ev.grad).amax() < 1e-6);
        let h = p
            .lagrangian_hessian(&th, &Multipliers::zeros(18, 4, 48))
            .unwrap();
        let fdh =
            crate::solver::fd_lagrangian_hessian(&p, &th, &Multipliers::zeros(18, 4, 48)).unwrap();
        assert!((h - fdh).amax() < 1e-5);
    }

    #[test]
    fn first_iteration_is_a_steady_state() {
        let p = build_modified_drto(
            &lifted(),
            &Modifiers::zeros(4, 2, 7),
            benchmark::economic_cost(),
            bounds(),
        )
        .unwrap();
        let s = solve_drto(&p, &start(), &SolverOptions::default()).unwrap();
        assert!(s.solution.converged(), "{:?}", s.solution.status);
        assert!(
            s.trajectory.max_state_spread() <= 1e-6,
            "{}",
            s.trajectory.max_state_spread()
        );
        assert!(s.trajectory.closed);
        for u in &s.trajectory.inputs {
            assert!(u[0] >= 0.0 && u[0] <= 3.6 && u[1] >= 0.0 && u[1] <= 4.0);
        }
        assert!(kkt_residual(&p, s.theta.as_vector(), &s.solution.multipliers).unwrap() <= 1e-8);
    }

    #[test]
    fn zero_mismatch_update_is_zero() {
        let l = lifted();
        let th = Theta::from_vector(start(), 4).unwrap();
        let jm = LiftedJacobian::model(&l);
        let fm = l.lift(&th.x0(), &th.inputs()).unwrap();
        let new = update_modifiers(
            &th,
            &Modifiers::zeros(4, 2, 7),
            &jm,
            &jm,
            &fm,
            &fm,
            UpdateOptions::default(),
        )
        .unwrap();
        assert_eq!(new.lambda_norm(), 0.0);
        assert_eq!(new.eps_norm(), 0.0);
        assert_eq!(new.iteration, 1);
    }

    #[test]
    fn eps_update_uses_old_lambda() {
        let l = lifted();
        let plant = FourTankPlant::new(benchmark::tank_params()).unwrap();
        let th = Theta::from_vector(start(), 4).unwrap();
        let jp = plant_jacobian_exact(&plant, &th).unwrap();
        assert_eq!(jp.source, JacobianSource::PlantExact);
        let jm = LiftedJacobian::model(&l);
        let fp = lift(&plant, th.as_vector()).unwrap();
        let fm = l.lift(&th.x0(), &th.inputs()).unwrap();
        let zero = Modifiers::zeros(4, 2, 7);
        // Lambda_l = 0: eps is the plain prediction error
        let m1 =
            update_modifiers(&th, &zero, &jp, &jm, &fp, &fm, UpdateOptions::default()).unwrap();
        assert_eq!(m1.eps, &fp - &fm);
        assert_eq!(m1.lambda(), &jp.matrix - &jm.matrix);
        // with the new-lambda flag the prediction matches at theta
        let opts = UpdateOptions {
            eps_uses_new_lambda: true,
            ..UpdateOptions::default()
        };
        let m2 = update_modifiers(&th, &zero, &jp, &jm, &fp, &fm, opts).unwrap();
        let pred = ModifiedModel::new(l.clone(), m2)
            .unwrap()
            .value(th.as_vector())
            .unwrap();
        assert!((pred - &fp).amax() < 1e-12);
        // fixed point: applying the update again at the same point is stationary
        let m3 = update_modifiers(&th, &m1, &jp, &jm, &fp, &fm, UpdateOptions::default()).unwrap();
        let m4 = update_modifiers(&th, &m3, &jp, &jm, &fp, &fm, UpdateOptions::default()).unwrap();
        assert!((&m4.eps - &m3.eps).amax() <= 1e-10);
        assert!((m4.lambda() - m3.lambda()).amax() <= 1e-10);
    }

    #[test]
    fn eps_only_mode_keeps_lambda_zero() {
        let l = lifted();
        let th = Theta::from_vector(start(), 4).unwrap();
        let mut jp = LiftedJacobian::model(&l);
        jp.matrix[(0, 0)] += 1.0;
        let jm = LiftedJacobian::model(&l);
        let fm = l.lift(&th.x0(), &th.inputs()).unwrap();
        let fp = fm.add_scalar(0.1);
        let opts = UpdateOptions {
            first_order: false,
            ..UpdateOptions::default()
        };
        let m =
            update_modifiers(&th, &Modifiers::zeros(4, 2, 7), &jp, &jm, &fp, &fm, opts).unwrap();
        assert_eq!(m.lambda_norm(), 0.0);
        assert!((m.eps_norm() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn filter_limits() {
        let mut new = Modifiers::zeros(1, 1, 1);
        new.lambda_x[(0, 0)] = 1.0;
        new.eps[0] = 2.0;
        let mut old = Modifiers::zeros(1, 1, 1);
        old.lambda_u[(0, 0)] = 3.0;
        let pass = filter_modifiers(&new, &old, &FilterGains::scalar(1.0, 1.0, 1.0, 1)).unwrap();
        assert_eq!(pass, new);
        let frozen = filter_modifiers(&new, &old, &FilterGains::scalar(0.0, 0.0, 0.0, 1)).unwrap();
        assert_eq!(frozen.lambda(), old.lambda());
        assert_eq!(frozen.eps, old.eps);
        // K = 0.5: error to a constant target halves each iteration
        let mut cur = old.clone();
        let half = FilterGains::scalar(0.5, 0.5, 0.5, 1);
        for l in 1..=10 {
            cur = filter_modifiers(&new, &cur, &half).unwrap();
            let err = (cur.eps[0] - 2.0).abs();
            assert!((err - 2.0 * 0.5f64.powi(l)).abs() < 1e-15);
        }
        assert!(filter_modifiers(&new, &old, &FilterGains::scalar(1.5, 1.0, 1.0, 1)).is_err());
    }

    #[test]
    fn reference_layout() {
        let p = build_modified_drto(
            &lifted(),
            &Modifiers::zeros(4, 2, 7),
            benchmark::economic_cost(),
            bounds(),
        )
        .unwrap();
        let s = solve_drto(&p, &start(), &SolverOptions::default()).unwrap();
        let r = extract_reference(&s.trajectory, 1).unwrap();
        assert_eq!(r.value_count(), 7 * 6);
        assert_eq!(r.period(), 7);
        for x in &r.states {
            assert!((x - &r.states[0]).amax() <= 1e-6);
        }
        let mut open = s.trajectory.clone();
        open.closed = false;
        assert!(extract_reference(&open, 1).is_err());
    }

    #[test]
    fn oracle_with_affine_plant_equals_model_drto() {
        let m = benchmark::linear_model();
        let plant = AffinePlant::new(m, StepBridge::Composed, 7, 3600.0).unwrap();
        let oracle = build_plant_drto(&plant, benchmark::economic_cost(), bounds()).unwrap();
        let model = build_modified_drto(
            &lifted(),
            &Modifiers::zeros(4, 2, 7),
            benchmark::economic_cost(),
            bounds(),
        )
        .unwrap();
        let opts = SolverOptions::default();
        let a = solve_drto(&oracle, &start(), &opts).unwrap();
        let b = solve_drto(&model, &start(), &opts).unwrap();
        assert!(a.solution.converged() && b.solution.converged());
        assert!((a.theta.as_vector() - b.theta.as_vector()).amax() <= 1e-8);
    }
}
