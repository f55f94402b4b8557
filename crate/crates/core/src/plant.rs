//! The true plant: a quadruple tank whose valve split ratios follow a fixed
//! cycle, making the dynamics periodic with period `T` global steps.
//!
//! Levels are in metres, flows in m³/h, time in seconds. One global step
//! lasts `t_T` seconds and is integrated with classical RK4 on a fixed
//! substep. Sensitivities are obtained by differentiating every RK4 stage, so
//! they are the exact derivatives of the discrete map that [`step_plant`]
//! evaluates.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix4, Matrix4x2, SMatrix, Vector2, Vector4};

use crate::error::{check_dim, Error, Result};
use crate::linalg::sqrt;

pub type Levels = Vector4<f64>;
pub type Flows = Vector2<f64>;

/// Split ratios `(gamma_a, gamma_b)`.
pub type Split = Vector2<f64>;

const SECONDS_PER_HOUR: f64 = 3600.0;

/// Physical parameters and the split-ratio cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct TankParams {
    /// Cross-section `S` of every tank (m²).
    pub area: f64,
    /// Discharge constants `a` (m²).
    pub discharge: Vector4<f64>,
    pub h_min: Vector4<f64>,
    pub h_max: Vector4<f64>,
    pub q_min: Vector2<f64>,
    pub q_max: Vector2<f64>,
    pub gravity: f64,
    /// One split ratio per global step; its length is the period `T`.
    pub gamma_cycle: Vec<Split>,
    /// Global step `t_T` (s).
    pub step_seconds: f64,
    /// RK4 substep (s); must divide `step_seconds`.
    pub substep: f64,
}

impl TankParams {
    pub fn period(&self) -> usize {
        self.gamma_cycle.len()
    }

    /// Split ratio active during global step `k` (cyclic).
    pub fn gamma(&self, k: usize) -> Split {
        self.gamma_cycle[k % self.period()]
    }

    pub fn substeps_per_step(&self) -> usize {
        libm::round(self.step_seconds / self.substep) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.area > 0.0) || self.discharge.iter().any(|a| !(*a > 0.0)) {
            return fail("tank area and discharge constants must be positive");
        }
        if !(self.gravity > 0.0) {
            return fail("gravity must be positive");
        }
        if self.gamma_cycle.is_empty() {
            return fail("gamma cycle must have at least one column");
        }
        if self
            .gamma_cycle
            .iter()
            .flat_map(|g| g.iter())
            .any(|g| !(0.0..=1.0).contains(g))
        {
            return fail("split ratios must lie in [0, 1]");
        }
        if (0..4).any(|i| !(self.h_min[i] < self.h_max[i])) {
            return fail("h_min must be strictly below h_max");
        }
        if (0..2).any(|i| !(self.q_min[i] < self.q_max[i])) {
            return fail("q_min must be strictly below q_max");
        }
        if !(self.substep > 0.0) || !(self.step_seconds > 0.0) {
            return fail("step lengths must be positive");
        }
        let n = self.step_seconds / self.substep;
        if (n - libm::round(n)).abs() > 1e-9 * n.max(1.0) {
            return fail("t_T must be an integer multiple of the integrator substep");
        }
        Ok(())
    }
}

/// Outcome of one integrated step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantStep {
    pub state: Levels,
    /// A negative level was clamped inside an RK4 stage.
    pub clamped: bool,
    /// Some final level is below `1e-9` m.
    pub below_floor: bool,
}

/// Right-hand side of the tank balance; negative levels are clamped to zero.
fn rhs(p: &TankParams, h: &Levels, q: &Flows, gamma: &Split) -> (Levels, bool) {
    let mut clamped = false;
    let mut outflow = Vector4::zeros();
    for i in 0..4 {
        let hi = if h[i] < 0.0 {
            clamped = true;
            0.0
        } else {
            h[i]
        };
        outflow[i] = p.discharge[i] * sqrt(2.0 * p.gravity * hi);
    }
    let qa = q[0] / SECONDS_PER_HOUR;
    let qb = q[1] / SECONDS_PER_HOUR;
    let (ga, gb) = (gamma[0], gamma[1]);
    let d = Vector4::new(
        -outflow[0] + outflow[2] + ga * qa,
        -outflow[1] + outflow[3] + gb * qb,
        -outflow[2] + (1.0 - gb) * qb,
        -outflow[3] + (1.0 - ga) * qa,
    ) / p.area;
    (d, clamped)
}

/// `dh/dt` of the four tanks (m/s).
pub fn tank_derivative(
    h: &Levels,
    q: &Flows,
    gamma: &Split,
    params: &TankParams,
) -> Result<Levels> {
    if let Some(tank) = (0..4).find(|&i| h[i] < 0.0) {
        return Err(Error::NegativeLevel {
            tank,
            level: h[tank],
        });
    }
    Ok(rhs(params, h, q, gamma).0)
}

/// Exact Jacobians `(df/dh, df/dq)` of [`tank_derivative`].
pub fn plant_jacobians(
    h: &Levels,
    q: &Flows,
    gamma: &Split,
    params: &TankParams,
) -> Result<(Matrix4<f64>, Matrix4x2<f64>)> {
    let _ = q;
    if let Some(tank) = (0..4).find(|&i| !(h[i] > 0.0)) {
        return Err(Error::Singular {
            tank,
            level: h[tank],
        });
    }
    let s = params.area;
    // d/dh of a*sqrt(2 g h) = a*g / sqrt(2 g h)
    let w: Vector4<f64> = Vector4::from_fn(|i, _| {
        params.discharge[i] * params.gravity / sqrt(2.0 * params.gravity * h[i]) / s
    });
    #[rustfmt::skip]
    let dh = Matrix4::new(
        -w[0], 0.0,   w[2],  0.0,
        0.0,   -w[1], 0.0,   w[3],
        0.0,   0.0,   -w[2], 0.0,
        0.0,   0.0,   0.0,   -w[3],
    );
    let k = 1.0 / (SECONDS_PER_HOUR * s);
    let (ga, gb) = (gamma[0], gamma[1]);
    #[rustfmt::skip]
    let dq = Matrix4x2::new(
        ga * k,         0.0,
        0.0,            gb * k,
        0.0,            (1.0 - gb) * k,
        (1.0 - ga) * k, 0.0,
    );
    Ok((dh, dq))
}

fn substep_count(p: &TankParams, duration: f64) -> Result<usize> {
    let n = duration / p.substep;
    let rounded = libm::round(n);
    if (n - rounded).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::Config(alloc::format!(
            "duration {duration} s is not a multiple of the {} s substep",
            p.substep
        )));
    }
    Ok(rounded as usize)
}

fn rk4(
    p: &TankParams,
    h0: &Levels,
    q: &Flows,
    gamma: &Split,
    dt: f64,
    n: usize,
) -> Result<(Levels, bool)> {
    let mut h = *h0;
    let mut clamped = false;
    for step in 0..n {
        let (k1, c1) = rhs(p, &h, q, gamma);
        let (k2, c2) = rhs(p, &(h + k1 * (0.5 * dt)), q, gamma);
        let (k3, c3) = rhs(p, &(h + k2 * (0.5 * dt)), q, gamma);
        let (k4, c4) = rhs(p, &(h + k3 * dt), q, gamma);
        h += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt / 6.0);
        clamped |= c1 | c2 | c3 | c4;
        if !h.iter().all(|v| v.is_finite()) {
            return Err(Error::Integration { substep: step });
        }
    }
    Ok((h, clamped))
}

type Sensitivity = SMatrix<f64, 4, 6>;

/// RK4 with forward sensitivities w.r.t. `(h0, q)`.
fn rk4_sensitivity(
    p: &TankParams,
    h0: &Levels,
    q: &Flows,
    gamma: &Split,
    dt: f64,
    n: usize,
) -> Result<(Levels, Matrix4<f64>, Matrix4x2<f64>)> {
    let mut h = *h0;
    let mut sens = Sensitivity::zeros();
    sens.fixed_view_mut::<4, 4>(0, 0).fill_with_identity();
    // dq/d(h0, q) = [0 I]
    let mut dq_dp = SMatrix::<f64, 2, 6>::zeros();
    dq_dp[(0, 4)] = 1.0;
    dq_dp[(1, 5)] = 1.0;

    let stage = |h: &Levels, s: &Sensitivity| -> Result<(Levels, Sensitivity)> {
        let (jh, jq) = plant_jacobians(h, q, gamma, p)?;
        let (f, _) = rhs(p, h, q, gamma);
        Ok((f, jh * s + jq * dq_dp))
    };

    for step in 0..n {
        let (k1, s1) = stage(&h, &sens)?;
        let (k2, s2) = stage(&(h + k1 * (0.5 * dt)), &(sens + s1 * (0.5 * dt)))?;
        let (k3, s3) = stage(&(h + k2 * (0.5 * dt)), &(sens + s2 * (0.5 * dt)))?;
        let (k4, s4) = stage(&(h + k3 * dt), &(sens + s3 * dt))?;
        h += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt / 6.0);
        sens += (s1 + 2.0 * s2 + 2.0 * s3 + s4) * (dt / 6.0);
        if !h.iter().all(|v| v.is_finite()) {
            return Err(Error::Integration { substep: step });
        }
    }
    Ok((
        h,
        sens.fixed_view::<4, 4>(0, 0).into_owned(),
        sens.fixed_view::<4, 2>(0, 4).into_owned(),
    ))
}

/// Integrate over `duration` seconds with constant flows and split ratio.
pub fn integrate(
    h: &Levels,
    q: &Flows,
    gamma: &Split,
    duration: f64,
    params: &TankParams,
) -> Result<PlantStep> {
    let n = substep_count(params, duration)?;
    let (state, clamped) = rk4(params, h, q, gamma, params.substep, n)?;
    Ok(PlantStep {
        state,
        clamped,
        below_floor: state.iter().any(|&v| v < 1e-9),
    })
}

/// One global step of `t_T` seconds starting at global time index `k`.
pub fn step_plant(x: &Levels, u: &Flows, k: usize, params: &TankParams) -> Result<PlantStep> {
    integrate(x, u, &params.gamma(k), params.step_seconds, params)
}

/// One global step together with `(dx'/dx, dx'/du)`.
pub fn step_plant_sensitivity(
    x: &Levels,
    u: &Flows,
    k: usize,
    params: &TankParams,
) -> Result<(Levels, Matrix4<f64>, Matrix4x2<f64>)> {
    let n = substep_count(params, params.step_seconds)?;
    rk4_sensitivity(params, x, u, &params.gamma(k), params.substep, n)
}

/// The lifted plant map: states `x_1..x_T` reached from `x0` under `u_seq`.
pub fn lift_plant(x0: &Levels, u_seq: &[Flows], params: &TankParams) -> Result<Vec<Levels>> {
    check_dim("input sequence", params.period(), u_seq.len())?;
    let mut x = *x0;
    let mut out = Vec::with_capacity(u_seq.len());
    for (k, u) in u_seq.iter().enumerate() {
        x = step_plant(&x, u, k, params)?.state;
        out.push(x);
    }
    Ok(out)
}

/// A plant with periodic dynamics `x_{k+1} = f_{p,k}(x_k, u_k)`, `f_{p,k} = f_{p,k+T}`.
pub trait PeriodicPlant {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn period(&self) -> usize;
    /// Global step `t_T` (s).
    fn step_seconds(&self) -> f64;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, k: usize) -> Result<DVector<f64>>;
    /// Successor state and its Jacobians w.r.t. `x` and `u`.
    fn step_sensitivity(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        k: usize,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)>;
    /// Advance `duration` seconds from `t_start` seconds after a period
    /// boundary, holding `u` constant. Used by the local (MPC) time scale.
    fn advance(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        t_start: f64,
        duration: f64,
    ) -> Result<DVector<f64>>;
}

/// The quadruple-tank benchmark as a [`PeriodicPlant`].
#[derive(Debug, Clone, PartialEq)]
pub struct FourTankPlant {
    pub params: TankParams,
}

impl FourTankPlant {
    pub fn new(params: TankParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }
}

fn levels(x: &DVector<f64>) -> Result<Levels> {
    check_dim("plant state", 4, x.len())?;
    Ok(Levels::from_column_slice(x.as_slice()))
}

fn flows(u: &DVector<f64>) -> Result<Flows> {
    check_dim("plant input", 2, u.len())?;
    Ok(Flows::from_column_slice(u.as_slice()))
}

fn to_dvector(x: &Levels) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

impl PeriodicPlant for FourTankPlant {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn period(&self) -> usize {
        self.params.period()
    }

    fn step_seconds(&self) -> f64 {
        self.params.step_seconds
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        let next = step_plant(&levels(x)?, &flows(u)?, k, &self.params)?;
        Ok(to_dvector(&next.state))
    }

    fn step_sensitivity(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        k: usize,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let (next, dx, du) = step_plant_sensitivity(&levels(x)?, &flows(u)?, k, &self.params)?;
        Ok((
            to_dvector(&next),
            DMatrix::from_column_slice(4, 4, dx.as_slice()),
            DMatrix::from_column_slice(4, 2, du.as_slice()),
        ))
    }

    fn advance(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        t_start: f64,
        duration: f64,
    ) -> Result<DVector<f64>> {
        let p = &self.params;
        let mut h = levels(x)?;
        let q = flows(u)?;
        let mut t = t_start;
        let end = t_start + duration;
        // split at global-step boundaries so each segment sees a single split ratio
        while end - t > 1e-9 {
            let k = libm::floor(t / p.step_seconds + 1e-12) as usize;
            let boundary = (k + 1) as f64 * p.step_seconds;
            let seg_end = if boundary < end { boundary } else { end };
            h = integrate(&h, &q, &p.gamma(k), seg_end - t, p)?.state;
            t = seg_end;
        }
        Ok(to_dvector(&h))
    }
}
