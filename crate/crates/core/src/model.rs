//! The affine prediction model and its lifted (one period) form.
//!
//! The published model is a 5 s discretization around a linearization point,
//!
//! ```text
//! x+ = A (x - x_lin) + B (u - u_lin) + x_lin
//! ```
//!
//! while the DRTO works on `t_T` steps. [`compose_transition`] bridges the two
//! by composing the 5 s map with the input held constant.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::matrix_power;
use crate::plant::PeriodicPlant;

/// Affine model in deviation form around `(x_lin, u_lin)` with step `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub x_lin: DVector<f64>,
    pub u_lin: DVector<f64>,
    /// Discretization step (s).
    pub dt: f64,
}

/// `x+ = a x + b u + c` in absolute coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineStep {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

/// How the model step relates to the DRTO step `t_T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepBridge {
    /// Compose `t_T / dt` model steps with zero-order-hold input.
    #[default]
    Composed,
    /// Use the model matrices directly as the `t_T` transition.
    Direct,
}

impl AffineModel {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        check_dim("model A columns", n, self.a.ncols())?;
        check_dim("model B rows", n, self.b.nrows())?;
        check_dim("linearization state", n, self.x_lin.len())?;
        check_dim("linearization input", self.b.ncols(), self.u_lin.len())?;
        if !(self.dt > 0.0) {
            return Err(Error::Config("model dt must be positive".into()));
        }
        Ok(())
    }

    /// One `dt` step.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * (x - &self.x_lin) + &self.b * (u - &self.u_lin) + &self.x_lin
    }

    /// Number of model steps in `seconds`; errors unless it divides exactly.
    pub fn steps_in(&self, seconds: f64) -> Result<usize> {
        let n = seconds / self.dt;
        let rounded = libm::round(n);
        if rounded < 1.0 || (n - rounded).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::Config(alloc::format!(
                "{seconds} s is not a positive multiple of the model step {} s",
                self.dt
            )));
        }
        Ok(rounded as usize)
    }

    /// The transition over `seconds` according to `bridge`.
    pub fn transition(&self, seconds: f64, bridge: StepBridge) -> Result<AffineStep> {
        match bridge {
            StepBridge::Composed => Ok(compose_transition(self, self.steps_in(seconds)?)),
            StepBridge::Direct => Ok(compose_transition(self, 1)),
        }
    }
}

impl AffineStep {
    pub fn apply(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.c
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// `n` applications of the model with constant input, as one affine map:
/// `A_eff = A^n`, `B_eff = sum_{i<n} A^i B`.
pub fn compose_transition(model: &AffineModel, n_steps: usize) -> AffineStep {
    assert!(n_steps >= 1, "compose_transition needs at least one step");
    let nx = model.state_dim();
    let a_eff = matrix_power(&model.a, n_steps);
    // sum_{i<n} A^i via doubling: S(2m) = S(m) + A^m S(m)
    let geometric = geometric_sum(&model.a, n_steps);
    let b_eff = &geometric * &model.b;
    let c = (DMatrix::identity(nx, nx) - &a_eff) * &model.x_lin - &b_eff * &model.u_lin;
    AffineStep {
        a: a_eff,
        b: b_eff,
        c,
    }
}

/// `sum_{i=0}^{n-1} a^i`.
fn geometric_sum(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let dim = a.nrows();
    if n == 0 {
        return DMatrix::zeros(dim, dim);
    }
    if n == 1 {
        return DMatrix::identity(dim, dim);
    }
    let half = geometric_sum(a, n / 2);
    let mut s = &half + matrix_power(a, n / 2) * &half;
    if n % 2 == 1 {
        s += matrix_power(a, n - 1);
    }
    s
}

/// The model over one period: `x_vec = fx x0 + fu u_vec + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedLinearModel {
    pub fx: DMatrix<f64>,
    pub fu: DMatrix<f64>,
    pub c: DVector<f64>,
    pub period: usize,
    pub step_seconds: f64,
    pub n_x: usize,
    pub n_u: usize,
}

/// Block `(i, j)` of `fu` is `A^(i-j) B` for `i >= j`; row block `i` of `fx`
/// is `A^(i+1)`.
pub fn build_lifted(step: &AffineStep, period: usize, step_seconds: f64) -> LiftedLinearModel {
    assert!(period >= 1, "period must be at least one step");
    let nx = step.state_dim();
    let nu = step.input_dim();
    let mut fx = DMatrix::zeros(period * nx, nx);
    let mut fu = DMatrix::zeros(period * nx, period * nu);
    let mut c = DVector::zeros(period * nx);

    // powers[k] = A^k B
    let mut powers: Vec<DMatrix<f64>> = Vec::with_capacity(period);
    powers.push(step.b.clone());
    for k in 1..period {
        let next = &step.a * &powers[k - 1];
        powers.push(next);
    }

    let mut a_pow = step.a.clone();
    let mut offset = step.c.clone();
    for i in 0..period {
        fx.view_mut((i * nx, 0), (nx, nx)).copy_from(&a_pow);
        for j in 0..=i {
            fu.view_mut((i * nx, j * nu), (nx, nu))
                .copy_from(&powers[i - j]);
        }
        c.rows_mut(i * nx, nx).copy_from(&offset);
        a_pow = &step.a * &a_pow;
        offset = &step.a * &offset + &step.c;
    }
    LiftedLinearModel {
        fx,
        fu,
        c,
        period,
        step_seconds,
        n_x: nx,
        n_u: nu,
    }
}

impl LiftedLinearModel {
    pub fn theta_dim(&self) -> usize {
        self.n_x + self.period * self.n_u
    }

    /// Stacked predictions `x_1..x_T`.
    pub fn lift(&self, x0: &DVector<f64>, u_vec: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("initial state", self.n_x, x0.len())?;
        check_dim("stacked inputs", self.period * self.n_u, u_vec.len())?;
        Ok(&self.fx * x0 + &self.fu * u_vec + &self.c)
    }

    /// Homogeneous part only: the response to deviations.
    pub fn lift_deviation(&self, dx0: &DVector<f64>, du: &DVector<f64>) -> DVector<f64> {
        &self.fx * dx0 + &self.fu * du
    }

    /// `[fx fu]`, the (constant) Jacobian w.r.t. `theta = (x0, u_vec)`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.period * self.n_x, self.theta_dim());
        j.columns_mut(0, self.n_x).copy_from(&self.fx);
        j.columns_mut(self.n_x, self.period * self.n_u)
            .copy_from(&self.fu);
        j
    }
}

/// Stacked prediction by chaining one step at a time.
pub fn lift_model(
    x0: &DVector<f64>,
    u_vec: &DVector<f64>,
    lifted: &LiftedLinearModel,
) -> Result<DVector<f64>> {
    lifted.lift(x0, u_vec)
}

/// An affine plant: the model itself playing the role of the real system.
/// Used to exercise the zero-mismatch fixed points.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePlant {
    pub base: AffineModel,
    pub global: AffineStep,
    pub period: usize,
    pub step_seconds: f64,
}

impl AffinePlant {
    pub fn new(
        base: AffineModel,
        bridge: StepBridge,
        period: usize,
        step_seconds: f64,
    ) -> Result<Self> {
        base.validate()?;
        let global = base.transition(step_seconds, bridge)?;
        Ok(Self {
            base,
            global,
            period,
            step_seconds,
        })
    }
}

impl PeriodicPlant for AffinePlant {
    fn state_dim(&self) -> usize {
        self.base.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.base.input_dim()
    }

    fn period(&self) -> usize {
        self.period
    }

    fn step_seconds(&self) -> f64 {
        self.step_seconds
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, _k: usize) -> Result<DVector<f64>> {
        check_dim("plant state", self.state_dim(), x.len())?;
        check_dim("plant input", self.input_dim(), u.len())?;
        Ok(self.global.apply(x, u))
    }

    fn step_sensitivity(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        k: usize,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        Ok((
            self.step(x, u, k)?,
            self.global.a.clone(),
            self.global.b.clone(),
        ))
    }

    fn advance(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _t_start: f64,
        duration: f64,
    ) -> Result<DVector<f64>> {
        let n = self.base.steps_in(duration)?;
        Ok(compose_transition(&self.base, n).apply(x, u))
    }
}
