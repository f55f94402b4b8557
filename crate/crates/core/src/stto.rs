//! Steady trajectory target optimization: turns the hourly economic
//! reference into an `L`-step reference that the disturbed MPC model can
//! follow exactly and that closes over one local period.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::mpc::{condense, DisturbanceBuffer, MpcModel, TrackingWeights};
use crate::pma::EconomicReference;
use crate::solver::{solve_qp, QpProblem};

/// A reference on the local grid; entry `i` pairs `z_i` with `v_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalReference {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub step_seconds: f64,
}

impl LocalReference {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// The horizon-length reference handed to the MPC.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcReference {
    pub z_ref: Vec<DVector<f64>>,
    pub v_ref: Vec<DVector<f64>>,
    /// Local step index `j` the first entry belongs to.
    pub start: usize,
    pub step_seconds: f64,
}

impl MpcReference {
    pub fn horizon(&self) -> usize {
        self.v_ref.len()
    }
}

/// `t_T / t_N`, required to be a positive integer.
pub fn steps_per_stage(t_t: f64, t_n: f64) -> Result<usize> {
    if !(t_t > 0.0 && t_n > 0.0) {
        return Err(Error::Config("sampling times must be positive".into()));
    }
    let ratio = t_t / t_n;
    let r = libm::round(ratio);
    if r < 1.0 || (ratio - r).abs() > 1e-9 * ratio {
        return Err(Error::Config(alloc::format!(
            "t_T = {t_t} s is not a multiple of t_N = {t_n} s"
        )));
    }
    Ok(r as usize)
}

/// Zero-order hold of every stage over `t_T / t_N` local steps.
pub fn resample_reference(r: &EconomicReference, t_n: f64) -> Result<LocalReference> {
    let k = steps_per_stage(r.step_seconds, t_n)?;
    let mut states = Vec::with_capacity(r.period() * k);
    let mut inputs = Vec::with_capacity(r.period() * k);
    for (x, u) in r.states.iter().zip(&r.inputs) {
        for _ in 0..k {
            states.push(x.clone());
            inputs.push(u.clone());
        }
    }
    Ok(LocalReference {
        states,
        inputs,
        step_seconds: t_n,
    })
}

/// Cyclic rotation: entry `i` of the result is entry `(i + j) mod L`.
pub fn shift_reference(r: &LocalReference, j: usize) -> LocalReference {
    let l = r.len();
    if l == 0 {
        return r.clone();
    }
    let s = j % l;
    let rot = |v: &Vec<DVector<f64>>| v[s..].iter().chain(&v[..s]).cloned().collect();
    LocalReference {
        states: rot(&r.states),
        inputs: rot(&r.inputs),
        step_seconds: r.step_seconds,
    }
}

#[derive(Debug, Clone)]
pub struct SttoSolution {
    /// `z_0..z_{L-1}` and `v_0..v_{L-1}`; `z_L = z_0`.
    pub reference: LocalReference,
    pub start: usize,
    pub cost: f64,
    pub closure_violation: f64,
}

/// Tracks `r` (already shifted to step `j`) with the disturbed model over
/// one local period, with `z_L = z_0` and `z_0` free.
pub fn solve_stto(
    r: &LocalReference,
    j: usize,
    buf: &DisturbanceBuffer,
    model: &MpcModel,
    weights: &TrackingWeights,
) -> Result<SttoSolution> {
    let (nz, nv, l) = (model.state_dim(), model.input_dim(), r.len());
    check_dim("stto reference length", buf.period(), l)?;
    check_dim("Qs", nz, weights.q.nrows())?;
    check_dim("Rs", nv, weights.r.nrows())?;
    check_dim("stto reference states", l, r.states.len())?;
    for (z, v) in r.states.iter().zip(&r.inputs) {
        check_dim("stto reference state", nz, z.len())?;
        check_dim("stto reference input", nv, v.len())?;
    }
    let cond = condense(model, &buf.window(j, l));
    let n = nz + l * nv;

    // z_i = S_i y + s_i with y = (z0, v)
    let mut s_mat = DMatrix::zeros(l * nz, n);
    let mut s_off = DVector::zeros(l * nz);
    for i in 0..nz {
        s_mat[(i, i)] = 1.0;
    }
    for i in 1..l {
        let rows = (i - 1) * nz;
        s_mat
            .view_mut((i * nz, 0), (nz, nz))
            .copy_from(&cond.ax.rows(rows, nz));
        s_mat
            .view_mut((i * nz, nz), (nz, l * nv))
            .copy_from(&cond.bv.rows(rows, nz));
        s_off.rows_mut(i * nz, nz).copy_from(&cond.w.rows(rows, nz));
    }
    let mut qs_s = DMatrix::zeros(l * nz, n);
    let mut target = DVector::zeros(l * nz);
    for i in 0..l {
        let block = &weights.q * s_mat.rows(i * nz, nz);
        qs_s.view_mut((i * nz, 0), (nz, n)).copy_from(&block);
        target
            .rows_mut(i * nz, nz)
            .copy_from(&(s_off.rows(i * nz, nz) - &r.states[i]));
    }
    let mut h = s_mat.tr_mul(&qs_s) * 2.0;
    let mut g = qs_s.tr_mul(&target) * 2.0;
    for i in 0..l {
        let k = nz + i * nv;
        let mut block = h.view_mut((k, k), (nv, nv));
        block += &weights.r * 2.0;
        let mut gk = g.rows_mut(k, nv);
        gk -= &weights.r * &r.inputs[i] * 2.0;
    }

    // periodic closure (A_L - I) z0 + B_L v = -w_L
    let last = (l - 1) * nz;
    let mut a_eq = DMatrix::zeros(nz, n);
    let mut closure = cond.ax.rows(last, nz).into_owned();
    for i in 0..nz {
        closure[(i, i)] -= 1.0;
    }
    a_eq.view_mut((0, 0), (nz, nz)).copy_from(&closure);
    a_eq.view_mut((0, nz), (nz, l * nv))
        .copy_from(&cond.bv.rows(last, nz));
    let b_eq = -cond.w.rows(last, nz);

    let (vlo, vhi) = model.input_box(l);
    let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(n, f64::INFINITY);
    lower.rows_mut(nz, l * nv).copy_from(&vlo);
    upper.rows_mut(nz, l * nv).copy_from(&vhi);

    let qp = QpProblem::new(h, g)
        .with_equalities(a_eq, b_eq)
        .with_bounds(lower, upper);
    let y = solve_qp(&qp)?.x;

    let z0 = y.rows(0, nz).into_owned();
    let v = y.rows(nz, l * nv).into_owned();
    let stacked = &cond.ax * &z0 + &cond.bv * &v + &cond.w;
    let mut states = Vec::with_capacity(l);
    states.push(z0.clone());
    for i in 1..l {
        states.push(stacked.rows((i - 1) * nz, nz).into_owned());
    }
    let inputs: Vec<DVector<f64>> = (0..l).map(|i| v.rows(i * nv, nv).into_owned()).collect();
    let mut cost = 0.0;
    for i in 0..l {
        let ez = &states[i] - &r.states[i];
        let ev = &inputs[i] - &r.inputs[i];
        cost += ez.dot(&(&weights.q * &ez)) + ev.dot(&(&weights.r * &ev));
    }
    let closure_violation = (stacked.rows(last, nz) - &z0).amax();
    Ok(SttoSolution {
        reference: LocalReference {
            states,
            inputs,
            step_seconds: model.step_seconds,
        },
        start: j,
        cost,
        closure_violation,
    })
}

/// The first `n` entries of a reference that starts at step `start`.
pub fn trim_reference(full: &LocalReference, n: usize, start: usize) -> Result<MpcReference> {
    if n == 0 || n > full.len() {
        return Err(Error::Config(alloc::format!(
            "mpc horizon {n} must lie in 1..={}",
            full.len()
        )));
    }
    Ok(MpcReference {
        z_ref: full.states[..n].to_vec(),
        v_ref: full.inputs[..n].to_vec(),
        start,
        step_seconds: full.step_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark;
    use crate::mpc::TrackingWeights;

    fn model() -> MpcModel {
        let p = benchmark::tank_params();
        let lo = DVector::from_column_slice(p.q_min.as_slice());
        let hi = DVector::from_column_slice(p.q_max.as_slice());
        MpcModel::from_model(&benchmark::linear_model(), 300.0, lo, hi).unwrap()
    }

    fn economic() -> EconomicReference {
        let x = benchmark::linearization_state();
        EconomicReference {
            states: (0..7).map(|i| &x * (1.0 + 0.01 * i as f64)).collect(),
            inputs: (0..7)
                .map(|i| DVector::from_vec(alloc::vec![1.5 + 0.1 * i as f64, 2.0]))
                .collect(),
            step_seconds: 3600.0,
            iteration: 0,
        }
    }

    /// The periodic orbit of the disturbed model under `inputs`.
    fn periodic_orbit(
        m: &MpcModel,
        buf: &DisturbanceBuffer,
        inputs: &[DVector<f64>],
    ) -> LocalReference {
        let l = inputs.len();
        let c = condense(m, &buf.window(0, l));
        let v = DVector::from_iterator(2 * l, inputs.iter().flat_map(|u| u.iter().copied()));
        let last = (l - 1) * 4;
        let lhs = DMatrix::identity(4, 4) - c.ax.rows(last, 4);
        let z0 = lhs
            .lu()
            .solve(&(c.bv.rows(last, 4) * &v + c.w.rows(last, 4)))
            .unwrap();
        let mut states = alloc::vec![z0];
        for i in 0..l - 1 {
            let next = m.predict(&states[i], &inputs[i], buf.get(i));
            states.push(next);
        }
        LocalReference {
            states,
            inputs: inputs.to_vec(),
            step_seconds: 300.0,
        }
    }

    #[test]
    fn resampling_holds_each_stage() {
        let r = resample_reference(&economic(), 300.0).unwrap();
        assert_eq!(r.len(), 84);
        for i in 0..84 {
            assert_eq!(r.inputs[i], economic().inputs[i / 12]);
        }
        assert_eq!(r.len() as f64 * r.step_seconds, 7.0 * 3600.0);
        let same = resample_reference(&economic(), 3600.0).unwrap();
        assert_eq!(same.inputs, economic().inputs);
        assert!(resample_reference(&economic(), 7.0).is_err());
    }

    #[test]
    fn shifting_is_cyclic() {
        let r = resample_reference(&economic(), 300.0).unwrap();
        assert_eq!(shift_reference(&r, 0), r);
        assert_eq!(shift_reference(&r, 84), r);
        assert_eq!(
            shift_reference(&shift_reference(&r, 30), 70),
            shift_reference(&r, 100)
        );
    }

    #[test]
    fn feasible_reference_is_a_fixed_point() {
        let m = model();
        let buf = DisturbanceBuffer::new(12, 4, DMatrix::identity(4, 4) * 0.7).unwrap();
        let inputs: Vec<DVector<f64>> = (0..12)
            .map(|i| DVector::from_vec(alloc::vec![1.6 + 0.05 * i as f64, 2.4 - 0.03 * i as f64]))
            .collect();
        let r = periodic_orbit(&m, &buf, &inputs);
        let s = solve_stto(&r, 0, &buf, &m, &TrackingWeights::diagonal(1.0, 0.1, 4, 2)).unwrap();
        assert!(s.cost <= 1e-10, "{}", s.cost);
        assert!(s.closure_violation <= 1e-9);
        for i in 0..12 {
            assert!((&s.reference.inputs[i] - &inputs[i]).amax() < 1e-6);
        }
    }

    #[test]
    fn infeasible_inputs_are_clipped() {
        let m = model();
        let buf = DisturbanceBuffer::new(84, 4, DMatrix::identity(4, 4) * 0.7).unwrap();
        let mut r = resample_reference(&economic(), 300.0).unwrap();
        for u in r.inputs.iter_mut() {
            *u = DVector::from_vec(alloc::vec![3.4, 3.8]) * 1.5;
        }
        let s = solve_stto(&r, 0, &buf, &m, &TrackingWeights::diagonal(1e-6, 0.1, 4, 2)).unwrap();
        assert!(s.cost > 0.0);
        assert!(s.closure_violation <= 1e-9);
        let mut at_bound = false;
        for v in &s.reference.inputs {
            for k in 0..2 {
                assert!(v[k] >= m.v_min[k] && v[k] <= m.v_max[k]);
                at_bound |= v[k] == m.v_max[k];
            }
        }
        assert!(at_bound);
        // the result obeys the disturbed model
        for i in 0..84 {
            let next = m.predict(&s.reference.states[i], &s.reference.inputs[i], buf.get(i));
            let want = &s.reference.states[(i + 1) % 84];
            assert!((next - want).amax() <= 1e-9);
        }
    }

    #[test]
    fn trimming() {
        let r = resample_reference(&economic(), 300.0).unwrap();
        let full = trim_reference(&r, 84, 0).unwrap();
        assert_eq!(full.v_ref, r.inputs);
        let one = trim_reference(&r, 1, 0).unwrap();
        assert_eq!(one.z_ref, alloc::vec![r.states[0].clone()]);
        let a = trim_reference(&shift_reference(&r, 1), 24, 1).unwrap();
        let b = trim_reference(&r, 25, 0).unwrap();
        assert_eq!(a.v_ref[0], b.v_ref[1]);
        assert!(trim_reference(&r, 85, 0).is_err());
    }
}
