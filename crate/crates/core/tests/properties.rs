use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pma_core::gradients::{lift, plant_jacobian_exact, LiftedJacobian};
use pma_core::model::{build_lifted, compose_transition, AffinePlant, StepBridge};
use pma_core::mpc::{
    estimate_disturbance, solve_mpc, DisturbanceBuffer, MpcModel, TrackingWeights,
};
use pma_core::pma::{filter_modifiers, update_modifiers, FilterGains, UpdateOptions};
use pma_core::solver::{qp_kkt_residual, solve_qp, QpProblem};
use pma_core::stto::{shift_reference, solve_stto, trim_reference, LocalReference};
use pma_core::{benchmark, FourTankPlant, Modifiers, Theta};

fn theta_strategy() -> impl Strategy<Value = DVector<f64>> {
    (
        prop::collection::vec(0.3..1.2f64, 4),
        prop::collection::vec(0.2..3.5f64, 14),
    )
        .prop_map(|(x, u)| {
            let mut t = DVector::zeros(18);
            t.rows_mut(0, 4).copy_from_slice(&x);
            t.rows_mut(4, 14).copy_from_slice(&u);
            t
        })
}

fn lifted() -> pma_core::LiftedLinearModel {
    let m = benchmark::linear_model();
    build_lifted(
        &m.transition(3600.0, StepBridge::Composed).unwrap(),
        7,
        3600.0,
    )
}

fn mpc_model() -> MpcModel {
    let p = benchmark::tank_params();
    MpcModel::from_model(
        &benchmark::linear_model(),
        300.0,
        DVector::from_column_slice(p.q_min.as_slice()),
        DVector::from_column_slice(p.q_max.as_slice()),
    )
    .unwrap()
}

fn local_reference(len: usize, seed: &[f64]) -> LocalReference {
    let states = (0..len)
        .map(|i| DVector::from_fn(4, |r, _| 0.5 + 0.1 * seed[(i + r) % seed.len()]))
        .collect();
    let inputs = (0..len)
        .map(|i| DVector::from_fn(2, |r, _| 1.0 + seed[(2 * i + r) % seed.len()]))
        .collect();
    LocalReference {
        states,
        inputs,
        step_seconds: 300.0,
    }
}

/// A symmetric positive definite matrix from an arbitrary square one.
fn spd(m: DMatrix<f64>, shift: f64) -> DMatrix<f64> {
    let n = m.nrows();
    m.transpose() * &m + DMatrix::identity(n, n) * shift
}

fn square(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn plant_levels_stay_nonnegative(theta in theta_strategy()) {
        let plant = FourTankPlant::new(benchmark::tank_params()).unwrap();
        let stacked = lift(&plant, &theta).unwrap();
        prop_assert!(stacked.iter().all(|h| h.is_finite() && *h >= 0.0));
    }

    #[test]
    fn plant_sensitivity_matches_differences(theta in theta_strategy()) {
        let plant = FourTankPlant::new(benchmark::tank_params()).unwrap();
        let exact = plant_jacobian_exact(&plant, &Theta::from_vector(theta.clone(), 4).unwrap()).unwrap();
        let mut worst = 0.0f64;
        for i in 0..18 {
            let h = 1e-5 * theta[i].abs().max(1.0);
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[i] += h;
            m[i] -= h;
            let col = (lift(&plant, &p).unwrap() - lift(&plant, &m).unwrap()) / (2.0 * h);
            worst = worst.max((col - exact.matrix.column(i)).amax());
        }
        prop_assert!(worst <= 1e-4 * exact.matrix.amax(), "{}", worst);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lifted_model_is_affine(a in theta_strategy(), b in theta_strategy(), w in 0.0..1.0f64) {
        let l = lifted();
        let f = |t: &DVector<f64>| l.lift(&t.rows(0, 4).into_owned(), &t.rows(4, 14).into_owned()).unwrap();
        let mix = &a * w + &b * (1.0 - w);
        let lhs = f(&mix);
        let rhs = f(&a) * w + f(&b) * (1.0 - w);
        prop_assert!((lhs - rhs).amax() <= 1e-12);
    }

    #[test]
    fn composed_steps_chain(n in 1usize..40, m in 1usize..40, x in prop::collection::vec(0.0..1.4f64, 4), u in prop::collection::vec(0.0..3.6f64, 2)) {
        let model = benchmark::linear_model();
        let (x, u) = (DVector::from_vec(x), DVector::from_vec(u));
        let direct = compose_transition(&model, n + m).apply(&x, &u);
        let chained = compose_transition(&model, m).apply(&compose_transition(&model, n).apply(&x, &u), &u);
        prop_assert!((direct - chained).amax() <= 1e-12);
    }

    #[test]
    fn shifting_is_a_group_action(len in 1usize..30, a in 0usize..100, b in 0usize..100, seed in prop::collection::vec(0.0..1.0f64, 5)) {
        let r = local_reference(len, &seed);
        prop_assert_eq!(shift_reference(&shift_reference(&r, a), b), shift_reference(&r, a + b));
        prop_assert_eq!(shift_reference(&r, len * (a + 1)), r);
    }

    #[test]
    fn trimming_a_shift_aligns(len in 2usize..30, n in 1usize..29, seed in prop::collection::vec(0.0..1.0f64, 5)) {
        prop_assume!(n < len);
        let r = local_reference(len, &seed);
        let a = trim_reference(&shift_reference(&r, 1), n, 1).unwrap();
        let b = trim_reference(&r, n + 1, 0).unwrap();
        prop_assert_eq!(&a.z_ref[..], &b.z_ref[1..]);
        prop_assert_eq!(&a.v_ref[..], &b.v_ref[1..]);
    }

    #[test]
    fn qp_commutes_with_permutation(m in square(6), g in prop::collection::vec(-3.0..3.0f64, 6), perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle()) {
        let h = spd(m, 0.3);
        let g = DVector::from_vec(g);
        let lo = DVector::from_element(6, -0.5);
        let hi = DVector::from_element(6, 0.7);
        let x = solve_qp(&QpProblem::new(h.clone(), g.clone()).with_bounds(lo.clone(), hi.clone())).unwrap().x;
        let p = DMatrix::from_fn(6, 6, |i, j| if perm[i] == j { 1.0 } else { 0.0 });
        let qp = QpProblem::new(&p * &h * p.transpose(), &p * &g).with_bounds(&p * &lo, &p * &hi);
        let y = solve_qp(&qp).unwrap().x;
        prop_assert!((y - &p * x).amax() <= 1e-10);
    }

    #[test]
    fn qp_with_general_constraints_satisfies_kkt(
        m in square(5),
        g in prop::collection::vec(-2.0..2.0f64, 5),
        a in prop::collection::vec(-1.0..1.0f64, 15),
    ) {
        let h = spd(m, 0.2);
        // x = 0 is strictly feasible for the inequalities and satisfies the equality
        let a_eq = DMatrix::from_row_slice(1, 5, &a[..5]);
        let a_in = DMatrix::from_row_slice(2, 5, &a[5..]);
        let qp = QpProblem::new(h, DVector::from_vec(g))
            .with_equalities(a_eq, DVector::zeros(1))
            .with_inequalities(a_in, DVector::from_element(2, 0.5))
            .with_bounds(DVector::from_element(5, -1.0), DVector::from_element(5, 1.0));
        let sol = solve_qp(&qp).unwrap();
        prop_assert!(qp_kkt_residual(&qp, &sol.x, &sol.multipliers) <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn affine_mismatch_is_a_modifier_fixed_point(t1 in theta_strategy(), t2 in theta_strategy(), t3 in theta_strategy(), scale in 0.9..0.99f64) {
        // an affine "plant" with different dynamics than the model
        let mut other = benchmark::linear_model();
        other.a *= scale;
        let plant = AffinePlant::new(other, StepBridge::Composed, 7, 3600.0).unwrap();
        let l = lifted();
        let jm = LiftedJacobian::model(&l);
        let update = |t: &DVector<f64>, mods: &Modifiers, opts| {
            let th = Theta::from_vector(t.clone(), 4).unwrap();
            let fp = lift(&plant, t).unwrap();
            let fm = l.lift(&th.x0(), &th.inputs()).unwrap();
            let jp = plant_jacobian_exact(&plant, &th).unwrap();
            update_modifiers(&th, mods, &jp, &jm, &fp, &fm, opts).unwrap()
        };
        let literal = UpdateOptions::default();
        let m1 = update(&t1, &Modifiers::zeros(4, 2, 7), literal);
        let m2 = update(&t2, &m1, literal);
        let m3 = update(&t3, &m2, literal);
        prop_assert!((m3.lambda() - m2.lambda()).amax() <= 1e-10);
        prop_assert!((&m3.eps - &m2.eps).amax() <= 1e-10);

        let fresh = UpdateOptions { eps_uses_new_lambda: true, ..literal };
        let n1 = update(&t1, &Modifiers::zeros(4, 2, 7), fresh);
        let n2 = update(&t2, &n1, fresh);
        prop_assert!((&n2.eps - &n1.eps).amax() <= 1e-10);
        prop_assert!((&n2.eps - &m2.eps).amax() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scalar_filter_contracts(k in 0.0..1.0f64, target in prop::collection::vec(-1.0..1.0f64, 28), steps in 1usize..8) {
        let mut new = Modifiers::zeros(4, 2, 7);
        new.eps = DVector::from_vec(target);
        new.lambda_x.fill(0.5);
        let gains = FilterGains::scalar(k, k, k, 28);
        let mut m = Modifiers::zeros(4, 2, 7);
        for _ in 0..steps {
            m = filter_modifiers(&new, &m, &gains).unwrap();
        }
        let expect = (1.0 - k).powi(steps as i32);
        let err = (&m.eps - &new.eps).amax();
        prop_assert!((err - expect * new.eps.amax()).abs() <= 1e-12);
        prop_assert!(((0.5 - m.lambda_x[(0, 0)]) - 0.5 * expect).abs() <= 1e-12);
    }

    #[test]
    fn estimator_converges_geometrically(k in 0.05..1.95f64, delta in prop::collection::vec(-0.1..0.1f64, 4), periods in 1usize..6) {
        let model = mpc_model();
        let delta = DVector::from_vec(delta);
        let mut buf = DisturbanceBuffer::new(3, 4, DMatrix::identity(4, 4) * k).unwrap();
        let z = benchmark::linearization_state();
        let v = DVector::from_vec(vec![1.9, 2.0]);
        let truth = model.step.apply(&z, &v) + &delta;
        for p in 0..periods {
            for j in 0..3 {
                estimate_disturbance(&mut buf, &model, p * 3 + j, &z, &v, &truth).unwrap();
            }
        }
        let expect = (1.0 - k).abs().powi(periods as i32) * delta.amax();
        for j in 0..3 {
            prop_assert!(((buf.get(j) - &delta).amax() - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn mpc_is_deterministic_and_bounded(z in prop::collection::vec(0.2..1.3f64, 4), seed in prop::collection::vec(0.0..3.0f64, 5), start in 0usize..84) {
        let model = mpc_model();
        let buf = DisturbanceBuffer::new(84, 4, DMatrix::identity(4, 4) * 0.7).unwrap();
        let w = TrackingWeights::diagonal(1.0, 0.1, 4, 2);
        let r = trim_reference(&local_reference(84, &seed), 24, start).unwrap();
        let z = DVector::from_vec(z);
        let a = solve_mpc(&z, &r, &buf, &model, &w).unwrap();
        let b = solve_mpc(&z, &r, &buf, &model, &w).unwrap();
        prop_assert_eq!(&a.input, &b.input);
        for v in &a.inputs {
            for k in 0..2 {
                prop_assert!(v[k] >= model.v_min[k] && v[k] <= model.v_max[k]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn stto_is_phase_consistent(seed in prop::collection::vec(0.0..3.0f64, 5), j in 0usize..84, d in prop::collection::vec(-0.01..0.01f64, 4)) {
        let model = mpc_model();
        let mut buf = DisturbanceBuffer::new(84, 4, DMatrix::identity(4, 4)).unwrap();
        // seed one phase with a nonzero disturbance
        let z = benchmark::linearization_state();
        let v = DVector::from_vec(vec![1.9, 2.0]);
        let next = model.step.apply(&z, &v) + DVector::from_vec(d);
        estimate_disturbance(&mut buf, &model, j, &z, &v, &next).unwrap();
        let w = TrackingWeights::diagonal(1.0, 0.1, 4, 2);
        let r = shift_reference(&local_reference(84, &seed), j);
        let a = solve_stto(&r, j, &buf, &model, &w).unwrap();
        let b = solve_stto(&r, j + 84, &buf, &model, &w).unwrap();
        prop_assert_eq!(&a.reference, &b.reference);
        prop_assert!(a.closure_violation <= 1e-9);
        for i in 0..84 {
            let pred = model.predict(&a.reference.states[i], &a.reference.inputs[i], buf.get(j + i));
            prop_assert!((pred - &a.reference.states[(i + 1) % 84]).amax() <= 1e-9);
        }
    }
}
