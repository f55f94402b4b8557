//! Offset-free periodic MPC on the local time scale `t_N`.
//!
//! The local model is affine with an additive, phase-indexed disturbance:
//!
//! ```text
//! z+ = A z + B v + c + d_j
//! ```
//!
//! `d_j` lives in a ring buffer of one local period `L` and is corrected
//! once per period from the observed one-step innovation.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::spectral_radius;
use crate::model::{compose_transition, AffineModel, AffineStep};
use crate::solver::{solve_qp, QpProblem};
use crate::stto::MpcReference;

#[derive(Debug, Clone, PartialEq)]
pub struct MpcModel {
    pub step: AffineStep,
    pub v_min: DVector<f64>,
    pub v_max: DVector<f64>,
    /// `t_N` (s).
    pub step_seconds: f64,
}

impl MpcModel {
    pub fn new(
        step: AffineStep,
        v_min: DVector<f64>,
        v_max: DVector<f64>,
        step_seconds: f64,
    ) -> Result<Self> {
        let (nz, nv) = (step.state_dim(), step.input_dim());
        check_dim("mpc A columns", nz, step.a.ncols())?;
        check_dim("mpc offset", nz, step.c.len())?;
        check_dim("mpc lower input bound", nv, v_min.len())?;
        check_dim("mpc upper input bound", nv, v_max.len())?;
        if (0..nv).any(|i| !(v_min[i] <= v_max[i])) {
            return Err(Error::Config(
                "mpc input bounds must satisfy vL <= vU".into(),
            ));
        }
        if !(step_seconds > 0.0) {
            return Err(Error::Config("mpc step must be positive".into()));
        }
        Ok(Self {
            step,
            v_min,
            v_max,
            step_seconds,
        })
    }

    /// The fine-step model composed to `t_n` seconds.
    pub fn from_model(
        model: &AffineModel,
        t_n: f64,
        v_min: DVector<f64>,
        v_max: DVector<f64>,
    ) -> Result<Self> {
        model.validate()?;
        let steps = model.steps_in(t_n)?;
        Self::new(compose_transition(model, steps), v_min, v_max, t_n)
    }

    pub fn state_dim(&self) -> usize {
        self.step.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.step.input_dim()
    }

    pub fn predict(&self, z: &DVector<f64>, v: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        self.step.apply(z, v) + d
    }

    pub(crate) fn input_box(&self, horizon: usize) -> (DVector<f64>, DVector<f64>) {
        let nv = self.input_dim();
        let mut lo = DVector::zeros(horizon * nv);
        let mut hi = DVector::zeros(horizon * nv);
        for i in 0..horizon {
            lo.rows_mut(i * nv, nv).copy_from(&self.v_min);
            hi.rows_mut(i * nv, nv).copy_from(&self.v_max);
        }
        (lo, hi)
    }
}

/// Stacked predictions `z_1..z_n = ax z0 + bv v + w` under disturbances `d_0..d_{n-1}`.
pub(crate) struct Condensed {
    pub ax: DMatrix<f64>,
    pub bv: DMatrix<f64>,
    pub w: DVector<f64>,
}

pub(crate) fn condense(model: &MpcModel, d: &[DVector<f64>]) -> Condensed {
    let (nz, nv, n) = (model.state_dim(), model.input_dim(), d.len());
    let a = &model.step.a;
    let mut ax = DMatrix::zeros(n * nz, nz);
    let mut bv = DMatrix::zeros(n * nz, n * nv);
    let mut w = DVector::zeros(n * nz);
    let mut power = DMatrix::identity(nz, nz);
    let mut prev_w = DVector::zeros(nz);
    for i in 0..n {
        power = a * power;
        ax.view_mut((i * nz, 0), (nz, nz)).copy_from(&power);
        let wi = a * &prev_w + &model.step.c + &d[i];
        w.rows_mut(i * nz, nz).copy_from(&wi);
        prev_w = wi;
        // block (i, k) = A^{i-k} B
        bv.view_mut((i * nz, i * nv), (nz, nv))
            .copy_from(&model.step.b);
        if i > 0 {
            let above = bv.view(((i - 1) * nz, 0), (nz, i * nv)).into_owned();
            bv.view_mut((i * nz, 0), (nz, i * nv))
                .copy_from(&(a * above));
        }
    }
    Condensed { ax, bv, w }
}

/// Per-phase additive disturbances with the innovation gain `Kd`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceBuffer {
    d: Vec<DVector<f64>>,
    kd: DMatrix<f64>,
}

impl DisturbanceBuffer {
    /// Zero-initialized buffer of `period` phases. Requires the spectral
    /// radius of `I - Kd` to be below one.
    pub fn new(period: usize, n_z: usize, kd: DMatrix<f64>) -> Result<Self> {
        if period == 0 {
            return Err(Error::Config("disturbance period must be positive".into()));
        }
        check_dim("Kd rows", n_z, kd.nrows())?;
        check_dim("Kd cols", n_z, kd.ncols())?;
        let rho = spectral_radius(&(DMatrix::identity(n_z, n_z) - &kd));
        if !(rho < 1.0) {
            return Err(Error::Config(alloc::format!(
                "disturbance gain is not stable: spectral radius of I - Kd is {rho}"
            )));
        }
        Ok(Self {
            d: alloc::vec![DVector::zeros(n_z); period],
            kd,
        })
    }

    pub fn period(&self) -> usize {
        self.d.len()
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.kd
    }

    /// `d_j`, indexed by phase `j mod L`.
    pub fn get(&self, j: usize) -> &DVector<f64> {
        &self.d[j % self.d.len()]
    }

    /// `d_j .. d_{j+len-1}`.
    pub fn window(&self, j: usize, len: usize) -> Vec<DVector<f64>> {
        (0..len).map(|i| self.get(j + i).clone()).collect()
    }
}

/// `d_{j+L} = d_j + Kd (z_next - f(z_j, v_j, d_j))`, stored at phase `j`.
/// Returns the innovation.
pub fn estimate_disturbance(
    buf: &mut DisturbanceBuffer,
    model: &MpcModel,
    j: usize,
    z_j: &DVector<f64>,
    v_j: &DVector<f64>,
    z_next: &DVector<f64>,
) -> Result<DVector<f64>> {
    let nz = model.state_dim();
    check_dim("measured state", nz, z_j.len())?;
    check_dim("measured successor", nz, z_next.len())?;
    check_dim("applied input", model.input_dim(), v_j.len())?;
    let phase = j % buf.period();
    let innovation = z_next - model.predict(z_j, v_j, &buf.d[phase]);
    buf.d[phase] += &buf.kd * &innovation;
    Ok(innovation)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl TrackingWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        for (what, m) in [("Q", &q), ("R", &r)] {
            if m.nrows() != m.ncols() {
                return Err(Error::Config(alloc::format!(
                    "weight {what} must be square"
                )));
            }
            if crate::linalg::min_symmetric_eigenvalue(m) < 0.0 {
                return Err(Error::Config(alloc::format!(
                    "weight {what} must be positive semidefinite"
                )));
            }
        }
        Ok(Self { q, r })
    }

    pub fn diagonal(q: f64, r: f64, n_z: usize, n_v: usize) -> Self {
        Self {
            q: DMatrix::identity(n_z, n_z) * q,
            r: DMatrix::identity(n_v, n_v) * r,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    /// `v*_0`, the only input applied.
    pub input: DVector<f64>,
    pub inputs: Vec<DVector<f64>>,
    /// `z_0..z_N` with `z_0` the measurement.
    pub predicted: Vec<DVector<f64>>,
    pub cost: f64,
}

/// Tracking MPC over the reference horizon, `z_0` pinned to the measurement.
/// Stage costs run over `i = 0..N-1`; there is no terminal term.
pub fn solve_mpc(
    z_j: &DVector<f64>,
    reference: &MpcReference,
    buf: &DisturbanceBuffer,
    model: &MpcModel,
    weights: &TrackingWeights,
) -> Result<MpcSolution> {
    let (nz, nv) = (model.state_dim(), model.input_dim());
    let n = reference.horizon();
    if n == 0 {
        return Err(Error::Config("mpc horizon must be positive".into()));
    }
    check_dim("measured state", nz, z_j.len())?;
    check_dim("Q", nz, weights.q.nrows())?;
    check_dim("R", nv, weights.r.nrows())?;
    check_dim("mpc reference states", n, reference.z_ref.len())?;
    for (z, v) in reference.z_ref.iter().zip(&reference.v_ref) {
        check_dim("mpc reference state", nz, z.len())?;
        check_dim("mpc reference input", nv, v.len())?;
    }
    let cond = condense(model, &buf.window(reference.start, n));
    let free = &cond.ax * z_j + &cond.w;

    // states z_1..z_{N-1} are penalized
    let mut h = DMatrix::zeros(n * nv, n * nv);
    let mut g = DVector::zeros(n * nv);
    for i in 1..n {
        let rows = (i - 1) * nz;
        let gi = cond.bv.rows(rows, nz);
        let qg = &weights.q * gi;
        h += gi.tr_mul(&qg) * 2.0;
        let e = free.rows(rows, nz) - &reference.z_ref[i];
        g += qg.tr_mul(&e) * 2.0;
    }
    for i in 0..n {
        let k = i * nv;
        let mut block = h.view_mut((k, k), (nv, nv));
        block += &weights.r * 2.0;
        let rv = &weights.r * &reference.v_ref[i];
        let mut gk = g.rows_mut(k, nv);
        gk -= rv * 2.0;
    }
    let (lo, hi) = model.input_box(n);
    let sol = solve_qp(&QpProblem::new(h, g).with_bounds(lo, hi))?;
    let v = sol.x;

    let stacked = &free + &cond.bv * &v;
    let mut predicted = Vec::with_capacity(n + 1);
    predicted.push(z_j.clone());
    for i in 0..n {
        predicted.push(stacked.rows(i * nz, nz).into_owned());
    }
    let inputs: Vec<DVector<f64>> = (0..n).map(|i| v.rows(i * nv, nv).into_owned()).collect();
    let mut cost = 0.0;
    for i in 0..n {
        let ez = &predicted[i] - &reference.z_ref[i];
        let ev = &inputs[i] - &reference.v_ref[i];
        cost += ez.dot(&(&weights.q * &ez)) + ev.dot(&(&weights.r * &ev));
    }
    Ok(MpcSolution {
        input: inputs[0].clone(),
        inputs,
        predicted,
        cost,
    })
}
