//! Lifted Jacobians `dF/dtheta` with `theta = (x0, u_0, .., u_{T-1})`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::model::LiftedLinearModel;
use crate::plant::PeriodicPlant;

/// Decision vector of the DRTO: initial state followed by the stacked inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    values: DVector<f64>,
    n_x: usize,
}

impl Theta {
    pub fn new(x0: &DVector<f64>, u_vec: &DVector<f64>) -> Self {
        let n_x = x0.len();
        let mut values = DVector::zeros(n_x + u_vec.len());
        values.rows_mut(0, n_x).copy_from(x0);
        values.rows_mut(n_x, u_vec.len()).copy_from(u_vec);
        Self { values, n_x }
    }

    pub fn from_vector(values: DVector<f64>, n_x: usize) -> Result<Self> {
        if values.len() < n_x {
            return Err(Error::Dimension {
                what: "theta",
                expected: n_x,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("theta has non-finite entries".into()));
        }
        Ok(Self { values, n_x })
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.values
    }

    pub fn state_dim(&self) -> usize {
        self.n_x
    }

    pub fn x0(&self) -> DVector<f64> {
        self.values.rows(0, self.n_x).into_owned()
    }

    pub fn inputs(&self) -> DVector<f64> {
        self.values
            .rows(self.n_x, self.values.len() - self.n_x)
            .into_owned()
    }

    /// Input applied at step `k`, given `n_u` inputs per step.
    pub fn input(&self, k: usize, n_u: usize) -> DVector<f64> {
        self.values.rows(self.n_x + k * n_u, n_u).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianSource {
    PlantExact,
    PlantFiniteDifference,
    ModelAnalytic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedJacobian {
    /// `(T n_x) x (n_x + T n_u)`; columns ordered `x0` first, then inputs in time order.
    pub matrix: DMatrix<f64>,
    pub source: JacobianSource,
}

impl LiftedJacobian {
    pub fn model(lifted: &LiftedLinearModel) -> Self {
        Self {
            matrix: lifted.jacobian(),
            source: JacobianSource::ModelAnalytic,
        }
    }

    pub fn state_part(&self, n_x: usize) -> DMatrix<f64> {
        self.matrix.columns(0, n_x).into_owned()
    }

    pub fn input_part(&self, n_x: usize) -> DMatrix<f64> {
        self.matrix
            .columns(n_x, self.matrix.ncols() - n_x)
            .into_owned()
    }
}

/// Central differences with per-coordinate step `rel_step * max(1, |theta_i|)`.
pub fn fd_jacobian<F>(mut map: F, theta: &DVector<f64>, rel_step: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    if !(rel_step > 0.0) {
        return Err(Error::Config(
            "finite-difference step must be positive".into(),
        ));
    }
    let n = theta.len();
    let mut jac: Option<DMatrix<f64>> = None;
    let mut probe = theta.clone();
    for i in 0..n {
        let h = rel_step * theta[i].abs().max(1.0);
        probe[i] = theta[i] + h;
        let plus = map(&probe).map_err(|_| Error::NonFinite { coordinate: i })?;
        probe[i] = theta[i] - h;
        let minus = map(&probe).map_err(|_| Error::NonFinite { coordinate: i })?;
        probe[i] = theta[i];
        if plus.iter().chain(minus.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { coordinate: i });
        }
        let j = jac.get_or_insert_with(|| DMatrix::zeros(plus.len(), n));
        j.set_column(i, &((plus - minus) / (2.0 * h)));
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

/// The lifted plant map `F_p(x0, u_vec)` as stacked states `x_1..x_T`.
pub fn lift<P: PeriodicPlant + ?Sized>(plant: &P, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let (nx, nu, t) = (plant.state_dim(), plant.input_dim(), plant.period());
    check_dim("theta", nx + t * nu, theta.len())?;
    let mut out = DVector::zeros(t * nx);
    let mut x = theta.rows(0, nx).into_owned();
    for k in 0..t {
        let u = theta.rows(nx + k * nu, nu).into_owned();
        x = plant.step(&x, &u, k)?;
        out.rows_mut(k * nx, nx).copy_from(&x);
    }
    Ok(out)
}

/// `F_p(theta)` and its exact Jacobian by chaining per-step sensitivities:
/// `dx_i/dx0 = Phi_{i-1}..Phi_0`, `dx_i/du_j = Phi_{i-1}..Phi_{j+1} Gamma_j`.
pub fn lift_with_jacobian<P: PeriodicPlant + ?Sized>(
    plant: &P,
    theta: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (nx, nu, t) = (plant.state_dim(), plant.input_dim(), plant.period());
    check_dim("theta", nx + t * nu, theta.len())?;
    let mut values = DVector::zeros(t * nx);
    let mut jac = DMatrix::zeros(t * nx, nx + t * nu);
    let mut x = theta.rows(0, nx).into_owned();
    let mut prev_row: Option<DMatrix<f64>> = None;
    for k in 0..t {
        let u = theta.rows(nx + k * nu, nu).into_owned();
        let (next, phi, gamma) = plant.step_sensitivity(&x, &u, k)?;
        let row = match prev_row {
            // d x_{k+1} / d theta = Phi_k * (d x_k / d theta) + Gamma_k * e_{u_k}
            Some(ref prev) => &phi * prev,
            None => {
                let mut r = DMatrix::zeros(nx, nx + t * nu);
                r.columns_mut(0, nx).copy_from(&phi);
                r
            }
        };
        let mut row = row;
        row.columns_mut(nx + k * nu, nu).copy_from(&gamma);
        jac.rows_mut(k * nx, nx).copy_from(&row);
        values.rows_mut(k * nx, nx).copy_from(&next);
        prev_row = Some(row);
        x = next;
    }
    Ok((values, jac))
}

pub fn plant_jacobian_exact<P: PeriodicPlant + ?Sized>(
    plant: &P,
    theta: &Theta,
) -> Result<LiftedJacobian> {
    let (_, matrix) = lift_with_jacobian(plant, theta.as_vector())?;
    Ok(LiftedJacobian {
        matrix,
        source: JacobianSource::PlantExact,
    })
}

pub fn plant_jacobian_fd<P: PeriodicPlant + ?Sized>(
    plant: &P,
    theta: &Theta,
    rel_step: f64,
) -> Result<LiftedJacobian> {
    let matrix = fd_jacobian(|th| lift(plant, th), theta.as_vector(), rel_step)?;
    Ok(LiftedJacobian {
        matrix,
        source: JacobianSource::PlantFiniteDifference,
    })
}

/// Which plant-gradient path the modifier update uses.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GradientSource {
    #[default]
    Exact,
    FiniteDifference {
        rel_step: f64,
    },
}

pub const DEFAULT_REL_STEP: f64 = 1e-6;

pub fn plant_jacobian<P: PeriodicPlant + ?Sized>(
    plant: &P,
    theta: &Theta,
    source: GradientSource,
) -> Result<LiftedJacobian> {
    match source {
        GradientSource::Exact => plant_jacobian_exact(plant, theta),
        GradientSource::FiniteDifference { rel_step } => plant_jacobian_fd(plant, theta, rel_step),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark;
    use crate::linalg::{max_abs, relative_error};
    use crate::model::{build_lifted, StepBridge};
    use crate::plant::FourTankPlant;

    fn sample_theta(shift: f64) -> DVector<f64> {
        let mut v = DVector::zeros(18);
        let x0 = [0.70, 0.82, 0.66, 0.93];
        for i in 0..4 {
            v[i] = x0[i] + 0.05 * shift;
        }
        for k in 0..7 {
            v[4 + 2 * k] = 1.9 + 0.1 * shift + 0.05 * k as f64;
            v[5 + 2 * k] = 2.0 - 0.04 * k as f64 + 0.1 * shift;
        }
        v
    }

    #[test]
    fn central_difference_is_exact_on_a_quadratic() {
        let theta = DVector::from_element(1, 3.0);
        let j = fd_jacobian(|t| Ok(DVector::from_element(1, t[0] * t[0])), &theta, 1e-3).unwrap();
        assert!((j[(0, 0)] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn fd_of_lifted_model_matches_block_matrices() {
        let m = benchmark::linear_model();
        let step = m.transition(3600.0, StepBridge::Composed).unwrap();
        let l = build_lifted(&step, 7, 3600.0);
        let theta = sample_theta(0.0);
        let fd = fd_jacobian(
            |t| l.lift(&t.rows(0, 4).into_owned(), &t.rows(4, 14).into_owned()),
            &theta,
            DEFAULT_REL_STEP,
        )
        .unwrap();
        assert!(max_abs(&(fd - l.jacobian())) <= 1e-8);
    }

    #[test]
    fn non_finite_map_names_the_coordinate() {
        let theta = DVector::from_vec(alloc::vec![1.0, 2.0]);
        let err = fd_jacobian(
            |t| {
                Ok(DVector::from_element(
                    1,
                    if t[1] > 2.0 { f64::NAN } else { t[0] },
                ))
            },
            &theta,
            1e-6,
        )
        .unwrap_err();
        assert_eq!(err, Error::NonFinite { coordinate: 1 });
    }

    #[test]
    fn exact_plant_jacobian_is_causal() {
        let plant = FourTankPlant::new(benchmark::tank_params()).unwrap();
        let theta = Theta::from_vector(sample_theta(0.0), 4).unwrap();
        let j = plant_jacobian_exact(&plant, &theta).unwrap();
        for i in 0..7 {
            for k in (i + 1)..7 {
                let block = j.matrix.view((4 * i, 4 + 2 * k), (4, 2));
                assert_eq!(block.amax(), 0.0, "block ({i},{k})");
            }
        }
    }

    #[test]
    fn exact_plant_jacobian_matches_finite_differences() {
        let plant = FourTankPlant::new(benchmark::tank_params()).unwrap();
        for shift in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let theta = Theta::from_vector(sample_theta(shift), 4).unwrap();
            let exact = plant_jacobian_exact(&plant, &theta).unwrap();
            let fd = plant_jacobian_fd(&plant, &theta, DEFAULT_REL_STEP).unwrap();
            let err = relative_error(&fd.matrix, &exact.matrix);
            assert!(err <= 1e-4, "shift {shift}: {err:e}");
            // values agree with the plain lift
            let (values, _) = lift_with_jacobian(&plant, theta.as_vector()).unwrap();
            assert_eq!(values, lift(&plant, theta.as_vector()).unwrap());
        }
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let plant = FourTankPlant::new(benchmark::tank_params()).unwrap();
        let theta = Theta::from_vector(sample_theta(0.3), 4).unwrap();
        let a = plant_jacobian_exact(&plant, &theta).unwrap();
        let b = plant_jacobian_exact(&plant, &theta).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn theta_round_trip() {
        let x0 = DVector::from_vec(alloc::vec![1.0, 2.0]);
        let u = DVector::from_vec(alloc::vec![3.0, 4.0, 5.0]);
        let t = Theta::new(&x0, &u);
        assert_eq!(t.x0(), x0);
        assert_eq!(t.inputs(), u);
        assert_eq!(t.input(1, 1)[0], 4.0);
    }
}
