//! The two-rate experiment on a simulated clock.
//!
//! The DRTO loop (modifier adaptation, one iteration per `t_D`) publishes
//! economic references into a single-slot [`Mailbox`]. The control loop
//! (STTO + MPC, one tick per `t_N`) always reads the latest snapshot. The
//! scheduler interleaves them deterministically: one DRTO iteration, then
//! `D L` control ticks.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::gradients::{lift, plant_jacobian, GradientSource, LiftedJacobian};
use crate::linalg::vec_inf_norm;
use crate::model::{build_lifted, AffineModel, LiftedLinearModel, StepBridge};
use crate::mpc::{estimate_disturbance, solve_mpc, DisturbanceBuffer, MpcModel, TrackingWeights};
use crate::plant::{PeriodicPlant, TankParams};
use crate::pma::{
    build_modified_drto, build_plant_drto, extract_reference, filter_modifiers, solve_drto,
    DrtoBounds, DrtoProblem, DrtoSolution, EconomicCost, EconomicReference, FilterGains, LiftedMap,
    Modifiers, PeriodicTrajectory, PlantMap, UpdateOptions,
};
use crate::solver::{kkt_residual, SolveStatus, SolverOptions};
use crate::stto::{
    resample_reference, shift_reference, solve_stto, steps_per_stage, trim_reference,
    LocalReference,
};
use crate::{benchmark, pma};

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    /// `t_T` (s).
    pub t_t: f64,
    /// `T`.
    pub period: usize,
    /// `t_N` (s).
    pub t_n: f64,
    /// MPC horizon `N`.
    pub horizon: usize,
    /// `D`: plant periods per DRTO iteration.
    pub drto_every: usize,
    /// Plant periods simulated in full mode.
    pub control_periods: usize,
}

impl Timing {
    /// `L = T t_T / t_N`.
    pub fn local_period(&self) -> Result<usize> {
        Ok(steps_per_stage(self.t_t, self.t_n)? * self.period)
    }

    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::Config("timing.T must be positive".into()));
        }
        if self.drto_every == 0 {
            return Err(Error::Config("timing.D must be a positive integer".into()));
        }
        let l = self.local_period()?;
        if self.horizon == 0 || self.horizon > l {
            return Err(Error::Config(format!(
                "mpc.N = {} must lie in 1..={l}",
                self.horizon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmaSettings {
    pub max_iter: usize,
    pub update: UpdateOptions,
    /// Scalar filter gains `(Kx, Ku, Keps)`; all ones is the passthrough.
    pub gains: (f64, f64, f64),
    /// Convergence threshold on `||theta_l - theta_{l-1}||` and `||eps_{l+1} - eps_l||`.
    pub tol: f64,
}

impl Default for PmaSettings {
    fn default() -> Self {
        Self {
            max_iter: 15,
            update: UpdateOptions::default(),
            gains: (1.0, 1.0, 1.0),
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSettings {
    pub weights: TrackingWeights,
    pub kd: DMatrix<f64>,
    pub v_min: DVector<f64>,
    pub v_max: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub timing: Timing,
    pub plant: TankParams,
    pub model: AffineModel,
    pub bridge: StepBridge,
    pub cost: EconomicCost,
    pub bounds: DrtoBounds,
    pub solver: SolverOptions,
    pub gradients: GradientSource,
    pub pma: PmaSettings,
    /// Soft inner state bounds; `None` keeps them hard.
    pub state_penalty: Option<f64>,
    pub stto: TrackingWeights,
    pub mpc: MpcSettings,
    /// Plant state at time zero and the DRTO warm start.
    pub x_init: DVector<f64>,
    /// Input held over the period in the warm start.
    pub u_init: DVector<f64>,
}

impl ExperimentConfig {
    /// The quadruple-tank study: `T = 7`, `t_T = 1 h`, `t_N = 300 s`, `N = 24`.
    pub fn benchmark() -> Self {
        let plant = benchmark::tank_params();
        let bounds = benchmark::bounds(&plant);
        let model = benchmark::linear_model();
        let (nx, nu) = (model.state_dim(), model.input_dim());
        Self {
            timing: Timing {
                t_t: plant.step_seconds,
                period: plant.period(),
                t_n: 300.0,
                horizon: 24,
                drto_every: 1,
                control_periods: 30,
            },
            cost: benchmark::economic_cost(),
            solver: SolverOptions::default(),
            gradients: GradientSource::Exact,
            pma: PmaSettings::default(),
            state_penalty: Some(1e3),
            stto: TrackingWeights::diagonal(1.0, 0.1, nx, nu),
            mpc: MpcSettings {
                weights: TrackingWeights::diagonal(1.0, 0.1, nx, nu),
                kd: DMatrix::identity(nx, nx) * 0.7,
                v_min: bounds.u_min.clone(),
                v_max: bounds.u_max.clone(),
            },
            x_init: model.x_lin.clone(),
            u_init: model.u_lin.clone(),
            bridge: StepBridge::Composed,
            model,
            bounds,
            plant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.model.validate()?;
        self.cost.validate()?;
        self.bounds.validate()?;
        self.timing.validate()?;
        if self.timing.period != self.plant.period() {
            return Err(Error::Config(format!(
                "timing.T = {} but the split-ratio cycle has {} entries",
                self.timing.period,
                self.plant.period()
            )));
        }
        if (self.timing.t_t - self.plant.step_seconds).abs() > 1e-9 * self.timing.t_t {
            return Err(Error::Config(
                "timing.t_T differs from the plant step".into(),
            ));
        }
        let (nx, nu) = (self.model.state_dim(), self.model.input_dim());
        check_dim("state bounds", nx, self.bounds.x_min.len())?;
        check_dim("input bounds", nu, self.bounds.u_min.len())?;
        check_dim("initial state", nx, self.x_init.len())?;
        check_dim("initial input", nu, self.u_init.len())?;
        let p = &self.pma;
        if !(p.tol > 0.0) {
            return Err(Error::Config("pma.tol must be positive".into()));
        }
        for g in [p.gains.0, p.gains.1, p.gains.2] {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Config("filter gains must lie in [0, 1]".into()));
            }
        }
        if let GradientSource::FiniteDifference { rel_step } = self.gradients {
            if !(rel_step > 0.0) {
                return Err(Error::Config("gradients.rel_step must be positive".into()));
            }
        }
        let s = &self.solver;
        if !(s.kkt_tol > 0.0
            && s.max_iter > 0
            && s.ls_beta > 0.0
            && s.ls_beta < 1.0
            && s.reg_min >= 0.0)
        {
            return Err(Error::Config("invalid solver options".into()));
        }
        self.mpc_model()?;
        DisturbanceBuffer::new(1, nx, self.mpc.kd.clone())?;
        TrackingWeights::new(self.mpc.weights.q.clone(), self.mpc.weights.r.clone())?;
        TrackingWeights::new(self.stto.q.clone(), self.stto.r.clone())?;
        Ok(())
    }

    pub fn lifted_model(&self) -> Result<LiftedLinearModel> {
        let step = self.model.transition(self.timing.t_t, self.bridge)?;
        Ok(build_lifted(&step, self.timing.period, self.timing.t_t))
    }

    pub fn mpc_model(&self) -> Result<MpcModel> {
        MpcModel::from_model(
            &self.model,
            self.timing.t_n,
            self.mpc.v_min.clone(),
            self.mpc.v_max.clone(),
        )
    }

    /// `(x_init, u_init, ..., u_init)`.
    pub fn initial_theta(&self) -> DVector<f64> {
        let (nx, nu) = (self.x_init.len(), self.u_init.len());
        let mut t = DVector::zeros(nx + self.timing.period * nu);
        t.rows_mut(0, nx).copy_from(&self.x_init);
        for k in 0..self.timing.period {
            t.rows_mut(nx + k * nu, nu).copy_from(&self.u_init);
        }
        t
    }

    fn plant_problem<'a, P: PeriodicPlant + ?Sized>(
        &self,
        plant: &'a P,
    ) -> Result<DrtoProblem<PlantMap<'a, P>>> {
        build_plant_drto(plant, self.cost, self.bounds.clone())?
            .with_state_penalty(self.state_penalty)
    }
}

/// Penalized and penalty-free true-plant objective of `theta`.
pub fn true_objective<P: PeriodicPlant + ?Sized>(
    problem: &DrtoProblem<PlantMap<'_, P>>,
    theta: &DVector<f64>,
) -> Result<(f64, f64)> {
    let stacked = problem.map.value(theta)?;
    let economic = problem.total_cost(theta, &stacked)?;
    let (_, slack) = problem.split(&problem.initial_point(theta)?);
    Ok((economic + problem.penalty(&slack), economic))
}

#[derive(Debug, Clone)]
pub struct OracleStart {
    pub theta0: DVector<f64>,
    pub status: Option<SolveStatus>,
    pub cost: Option<f64>,
    pub error: Option<String>,
}

/// The plant-true optimum.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub theta: DVector<f64>,
    pub slack: DVector<f64>,
    pub trajectory: PeriodicTrajectory,
    /// Penalized objective (the one minimized).
    pub cost: f64,
    pub economic_cost: f64,
    pub kkt_residual: f64,
    pub starts: Vec<OracleStart>,
}

/// Three spread starts: inputs at 0.8, 1.0 and 1.2 times `u_init`, each
/// with `x0` settled by simulating the plant for 50 periods.
pub fn oracle_starts<P: PeriodicPlant + ?Sized>(
    cfg: &ExperimentConfig,
    plant: &P,
) -> Result<Vec<DVector<f64>>> {
    let nx = cfg.x_init.len();
    let b = &cfg.bounds;
    let mut out = Vec::new();
    for scale in [0.8, 1.0, 1.2] {
        let mut theta = cfg.initial_theta();
        for k in 0..cfg.timing.period {
            let u =
                (&cfg.u_init * scale).zip_zip_map(&b.u_min, &b.u_max, |v, lo, hi| v.clamp(lo, hi));
            theta.rows_mut(nx + k * u.len(), u.len()).copy_from(&u);
        }
        for _ in 0..50 {
            let stacked = lift(plant, &theta)?;
            let last = stacked.rows(stacked.len() - nx, nx).into_owned();
            theta.rows_mut(0, nx).copy_from(&last);
        }
        let x0 = theta
            .rows(0, nx)
            .zip_zip_map(&b.x_min, &b.x_max, |v, lo, hi| v.clamp(lo, hi));
        theta.rows_mut(0, nx).copy_from(&x0);
        out.push(theta);
    }
    Ok(out)
}

/// Solves the DRTO with the true plant map from every start and keeps the
/// best converged solution.
pub fn compute_oracle<P: PeriodicPlant + ?Sized>(
    cfg: &ExperimentConfig,
    plant: &P,
    starts: &[DVector<f64>],
) -> Result<Oracle> {
    let problem = cfg.plant_problem(plant)?;
    let mut best: Option<(DrtoSolution, f64)> = None;
    let mut log = Vec::new();
    for theta0 in starts {
        match solve_drto(&problem, theta0, &cfg.solver) {
            Ok(sol) => {
                log.push(OracleStart {
                    theta0: theta0.clone(),
                    status: Some(sol.solution.status),
                    cost: Some(sol.solution.cost),
                    error: None,
                });
                let better = best.as_ref().is_none_or(|(_, c)| sol.solution.cost < *c);
                if sol.solution.converged() && better {
                    let c = sol.solution.cost;
                    best = Some((sol, c));
                }
            }
            Err(e) => log.push(OracleStart {
                theta0: theta0.clone(),
                status: None,
                cost: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let (sol, _) = best.ok_or(Error::OracleUnavailable)?;
    let theta = sol.theta.as_vector().clone();
    let (cost, economic_cost) = true_objective(&problem, &theta)?;
    Ok(Oracle {
        theta,
        slack: sol.slack,
        trajectory: sol.trajectory,
        cost,
        economic_cost,
        kkt_residual: sol.solution.kkt_residual,
        starts: log,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Converged,
    MaxIter,
    Failed(String),
}

/// One DRTO iteration `l` (1-based): the solve with modifiers `l - 1`.
#[derive(Debug, Clone)]
pub struct DrtoRecord {
    pub iteration: usize,
    pub theta: DVector<f64>,
    /// Modified-model prediction `x_0..x_T`.
    pub predicted: PeriodicTrajectory,
    /// True-plant response `x_1..x_T` to `theta`.
    pub plant_states: Vec<DVector<f64>>,
    /// Objective of the modified DRTO at its solution.
    pub model_cost: f64,
    /// Penalized true-plant objective.
    pub plant_cost: f64,
    pub plant_economic_cost: f64,
    /// `(plant_cost - oracle) / |oracle|`.
    pub cost_gap: Option<f64>,
    /// `max_i ||x_i - x_i^opt||` over the predicted trajectory.
    pub oracle_distance: Option<f64>,
    pub eps_norm: f64,
    pub lambda_norm: f64,
    pub kkt_residual: f64,
    /// KKT residual of the plant-map DRTO at this solution and its multipliers.
    pub plant_kkt_residual: f64,
    pub sqp_iterations: usize,
    pub status: SolveStatus,
    /// `||F_p(theta) - F_mod(theta)||`.
    pub prediction_error: f64,
    /// `||(J_p - J_m)(theta) - Lambda_l||`.
    pub lambda_mismatch: f64,
    pub theta_step: Option<f64>,
    pub eps_step: f64,
}

/// The modifier-adaptation DRTO loop, one iteration per [`DrtoLoop::step`].
pub struct DrtoLoop<'a, P: PeriodicPlant + ?Sized> {
    cfg: &'a ExperimentConfig,
    plant: &'a P,
    lifted: LiftedLinearModel,
    plant_problem: DrtoProblem<PlantMap<'a, P>>,
    oracle: Option<&'a Oracle>,
    pub modifiers: Modifiers,
    warm: DVector<f64>,
    prev_theta: Option<DVector<f64>>,
    pub records: Vec<DrtoRecord>,
    pub verdict: Option<Verdict>,
    pub last_solution: Option<DrtoSolution>,
}

impl<'a, P: PeriodicPlant + ?Sized> DrtoLoop<'a, P> {
    pub fn new(
        cfg: &'a ExperimentConfig,
        plant: &'a P,
        oracle: Option<&'a Oracle>,
    ) -> Result<Self> {
        cfg.validate()?;
        let lifted = cfg.lifted_model()?;
        check_dim("plant period", lifted.period, plant.period())?;
        check_dim("plant states", lifted.n_x, plant.state_dim())?;
        Ok(Self {
            modifiers: Modifiers::zeros(lifted.n_x, lifted.n_u, lifted.period),
            plant_problem: cfg.plant_problem(plant)?,
            warm: cfg.initial_theta(),
            cfg,
            plant,
            lifted,
            oracle,
            prev_theta: None,
            records: Vec::new(),
            verdict: None,
            last_solution: None,
        })
    }

    pub fn finished(&self) -> bool {
        self.verdict.is_some()
    }

    /// Runs one iteration and returns the published reference. A failure
    /// ends the loop and returns `None`.
    pub fn step(&mut self) -> Option<EconomicReference> {
        if self.finished() {
            return None;
        }
        match self.iterate() {
            Ok(r) => Some(r),
            Err(e) => {
                self.verdict = Some(Verdict::Failed(format!(
                    "DRTO iteration {}: {e}",
                    self.records.len() + 1
                )));
                None
            }
        }
    }

    /// Iterates until convergence, `max_iter` or failure.
    pub fn run(&mut self) -> &Verdict {
        while self.step().is_some() {}
        self.verdict.get_or_insert(Verdict::MaxIter)
    }

    fn iterate(&mut self) -> Result<EconomicReference> {
        let cfg = self.cfg;
        let l = self.records.len() + 1;
        let problem =
            build_modified_drto(&self.lifted, &self.modifiers, cfg.cost, cfg.bounds.clone())?
                .with_state_penalty(cfg.state_penalty)?;
        let sol = solve_drto(&problem, &self.warm, &cfg.solver)?;
        if !sol.solution.converged() {
            return Err(Error::Solver(format!(
                "DRTO solve ended with {:?}",
                sol.solution.status
            )));
        }
        let reference = extract_reference(&sol.trajectory, l)?;
        let theta = sol.theta.clone();
        let th = theta.as_vector();

        let nx = self.lifted.n_x;
        let fp = lift(self.plant, th)?;
        let fm = self.lifted.lift(&theta.x0(), &theta.inputs())?;
        let jp = plant_jacobian(self.plant, &theta, cfg.gradients)?;
        let jm = LiftedJacobian::model(&self.lifted);
        let updated =
            pma::update_modifiers(&theta, &self.modifiers, &jp, &jm, &fp, &fm, cfg.pma.update)?;
        let (kx, ku, keps) = cfg.pma.gains;
        let updated = if (kx, ku, keps) == (1.0, 1.0, 1.0) {
            updated
        } else {
            filter_modifiers(
                &updated,
                &self.modifiers,
                &FilterGains::scalar(kx, ku, keps, fp.len()),
            )?
        };

        let (plant_cost, plant_economic_cost) = true_objective(&self.plant_problem, th)?;
        let y = problem.initial_point(&sol.solution.theta)?;
        let plant_kkt_residual = kkt_residual(&self.plant_problem, &y, &sol.solution.multipliers)?;
        let (cost_gap, oracle_distance) = match self.oracle {
            Some(o) => {
                let dist = (0..=self.lifted.period)
                    .map(|i| vec_inf_norm(&(sol.trajectory.state(i) - o.trajectory.state(i))))
                    .fold(0.0, f64::max);
                (Some((plant_cost - o.cost) / o.cost.abs()), Some(dist))
            }
            None => (None, None),
        };
        let jp_jm = &jp.matrix - &jm.matrix;
        let theta_step = self.prev_theta.as_ref().map(|p| vec_inf_norm(&(th - p)));
        let eps_step = vec_inf_norm(&(&updated.eps - &self.modifiers.eps));
        let prediction_error = vec_inf_norm(&(&fp - problem.map.value(th)?));
        self.records.push(DrtoRecord {
            iteration: l,
            theta: th.clone(),
            predicted: sol.trajectory.clone(),
            plant_states: (0..self.lifted.period)
                .map(|i| fp.rows(i * nx, nx).into_owned())
                .collect(),
            model_cost: sol.solution.cost,
            plant_cost,
            plant_economic_cost,
            cost_gap,
            oracle_distance,
            eps_norm: self.modifiers.eps_norm(),
            lambda_norm: self.modifiers.lambda_norm(),
            kkt_residual: sol.solution.kkt_residual,
            plant_kkt_residual,
            sqp_iterations: sol.solution.iterations,
            status: sol.solution.status,
            prediction_error,
            lambda_mismatch: (jp_jm - self.modifiers.lambda()).amax(),
            theta_step,
            eps_step,
        });

        self.warm = sol.solution.theta.clone();
        self.prev_theta = Some(th.clone());
        self.modifiers = updated;
        self.last_solution = Some(sol);
        if theta_step.is_some_and(|s| s <= cfg.pma.tol) && eps_step <= cfg.pma.tol {
            self.verdict = Some(Verdict::Converged);
        } else if l >= cfg.pma.max_iter {
            self.verdict = Some(Verdict::MaxIter);
        }
        Ok(reference)
    }
}

/// Single-slot, last-writer-wins reference store.
#[derive(Debug, Clone, Default)]
pub struct Mailbox<T> {
    slot: Option<T>,
    version: u64,
}

impl<T> Mailbox<T> {
    pub fn new() -> Self {
        Self {
            slot: None,
            version: 0,
        }
    }

    pub fn publish(&mut self, value: T) {
        self.slot = Some(value);
        self.version += 1;
    }

    /// The latest value and the number of publications so far.
    pub fn latest(&self) -> Option<(&T, u64)> {
        self.slot.as_ref().map(|v| (v, self.version))
    }
}

#[derive(Debug, Clone)]
pub struct TickRecord {
    pub tick: usize,
    pub phase: usize,
    /// Measured `z_j`.
    pub state: DVector<f64>,
    /// Applied `v_j`.
    pub input: DVector<f64>,
    /// `d_j` used in the prediction.
    pub disturbance: DVector<f64>,
    pub innovation_norm: f64,
    /// `||z_j - z_ref,0||` against the STTO reference of this tick.
    pub tracking_error: f64,
    /// DRTO iteration that produced the reference in use.
    pub reference_iteration: usize,
    pub fallback: Option<String>,
}

/// The offset-free tracking loop, one tick per [`ControlLoop::tick`].
pub struct ControlLoop<'a, P: PeriodicPlant + ?Sized> {
    plant: &'a P,
    model: MpcModel,
    buf: DisturbanceBuffer,
    stto: TrackingWeights,
    mpc: TrackingWeights,
    horizon: usize,
    period: usize,
    local: Option<(LocalReference, u64, usize)>,
    state: DVector<f64>,
    last_input: Option<DVector<f64>>,
    pub records: Vec<TickRecord>,
}

impl<'a, P: PeriodicPlant + ?Sized> ControlLoop<'a, P> {
    pub fn new(cfg: &ExperimentConfig, plant: &'a P) -> Result<Self> {
        let model = cfg.mpc_model()?;
        let period = cfg.timing.local_period()?;
        Ok(Self {
            buf: DisturbanceBuffer::new(period, model.state_dim(), cfg.mpc.kd.clone())?,
            model,
            plant,
            stto: cfg.stto.clone(),
            mpc: cfg.mpc.weights.clone(),
            horizon: cfg.timing.horizon,
            period,
            local: None,
            state: cfg.x_init.clone(),
            last_input: None,
            records: Vec::new(),
        })
    }

    pub fn buffer(&self) -> &DisturbanceBuffer {
        &self.buf
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }

    /// Reads the latest reference, applies one input and advances the
    /// plant by `t_N`. Layer failures hold the previous input; plant
    /// failures are returned.
    pub fn tick(&mut self, mailbox: &Mailbox<EconomicReference>) -> Result<()> {
        let (published, version) = mailbox.latest().ok_or_else(|| {
            Error::Config("control loop started before any reference was published".into())
        })?;
        if self.local.as_ref().is_none_or(|(_, v, _)| *v != version) {
            let local = resample_reference(published, self.model.step_seconds)?;
            check_dim("local reference length", self.period, local.len())?;
            self.local = Some((local, version, published.iteration));
        }
        let (local, _, ref_iter) = self.local.as_ref().expect("reference set above");
        let j = self.records.len();
        let phase = j % self.period;
        let z = self.state.clone();

        let planned = (|| {
            let shifted = shift_reference(local, phase);
            let target = solve_stto(&shifted, phase, &self.buf, &self.model, &self.stto)?;
            let mref = trim_reference(&target.reference, self.horizon, phase)?;
            let sol = solve_mpc(&z, &mref, &self.buf, &self.model, &self.mpc)?;
            Ok::<_, Error>((sol.input, target.reference.states[0].clone()))
        })();
        let (input, z_ref, fallback) = match planned {
            Ok((v, zr)) => (v, Some(zr), None),
            Err(e) => {
                let held = self
                    .last_input
                    .clone()
                    .unwrap_or_else(|| local.inputs[phase].clone());
                (
                    held,
                    None,
                    Some(format!("tick {j}: {e}; holding the previous input")),
                )
            }
        };
        let input = input.zip_zip_map(&self.model.v_min, &self.model.v_max, |v, lo, hi| {
            v.clamp(lo, hi)
        });
        let t_start = (phase as f64) * self.model.step_seconds;
        let t_start = t_start % (self.plant.step_seconds() * self.plant.period() as f64);
        let next = self
            .plant
            .advance(&z, &input, t_start, self.model.step_seconds)?;
        let disturbance = self.buf.get(phase).clone();
        let innovation =
            estimate_disturbance(&mut self.buf, &self.model, phase, &z, &input, &next)?;
        let tracking_error = match &z_ref {
            Some(zr) => vec_inf_norm(&(&z - zr)),
            None => f64::NAN,
        };
        self.records.push(TickRecord {
            tick: j,
            phase,
            state: z,
            input: input.clone(),
            disturbance,
            innovation_norm: vec_inf_norm(&innovation),
            tracking_error,
            reference_iteration: *ref_iter,
            fallback,
        });
        self.state = next;
        self.last_input = Some(input);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    DrtoOnly,
    Full,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub drto: Vec<DrtoRecord>,
    pub ticks: Vec<TickRecord>,
    pub oracle: Option<Oracle>,
    pub verdict: Verdict,
    pub modifiers: Modifiers,
    /// `L`.
    pub local_period: usize,
}

impl RunReport {
    /// Largest amount by which an iterate beats the oracle on the true plant.
    pub fn oracle_dominance_violation(&self) -> Option<f64> {
        let o = self.oracle.as_ref()?;
        Some(
            self.drto
                .iter()
                .map(|r| o.cost - r.plant_cost)
                .fold(f64::NEG_INFINITY, f64::max),
        )
    }

    /// Per-period maxima of the innovation norm.
    pub fn period_innovations(&self) -> Vec<f64> {
        self.ticks
            .chunks(self.local_period.max(1))
            .map(|c| c.iter().map(|t| t.innovation_norm).fold(0.0, f64::max))
            .collect()
    }
}

/// Runs the DRTO loop alone or both loops under the deterministic scheduler.
pub fn run_experiment<P: PeriodicPlant + ?Sized>(
    cfg: &ExperimentConfig,
    plant: &P,
    oracle: Option<Oracle>,
    mode: Mode,
) -> Result<RunReport> {
    let local_period = cfg.timing.local_period()?;
    let (drto, ticks, verdict, modifiers) = {
        let mut drto = DrtoLoop::new(cfg, plant, oracle.as_ref())?;
        let mut ticks = Vec::new();
        match mode {
            Mode::DrtoOnly => {
                drto.run();
            }
            Mode::Full => {
                let mut control = ControlLoop::new(cfg, plant)?;
                let mut mailbox = Mailbox::new();
                for p in 0..cfg.timing.control_periods {
                    if p % cfg.timing.drto_every == 0 {
                        if let Some(r) = drto.step() {
                            mailbox.publish(r);
                        }
                    }
                    if mailbox.latest().is_none() {
                        break;
                    }
                    for _ in 0..local_period {
                        control.tick(&mailbox)?;
                    }
                }
                ticks = control.records;
            }
        }
        let verdict = drto.verdict.clone().unwrap_or(Verdict::MaxIter);
        (drto.records, ticks, verdict, drto.modifiers)
    };
    Ok(RunReport {
        drto,
        ticks,
        oracle,
        verdict,
        modifiers,
        local_period,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AffinePlant;
    use crate::plant::FourTankPlant;
    use nalgebra::Vector2;

    fn single_stage() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::benchmark();
        cfg.plant.gamma_cycle = alloc::vec![Vector2::from(benchmark::LINEARIZATION_SPLIT)];
        cfg.timing.period = 1;
        cfg.timing.horizon = 12;
        cfg.pma.update.eps_uses_new_lambda = true;
        cfg
    }

    fn affine_plant(cfg: &ExperimentConfig) -> AffinePlant {
        AffinePlant::new(
            cfg.model.clone(),
            StepBridge::Composed,
            cfg.timing.period,
            cfg.timing.t_t,
        )
        .unwrap()
    }

    #[test]
    fn timing_rules() {
        let cfg = ExperimentConfig::benchmark();
        cfg.validate().unwrap();
        assert_eq!(cfg.timing.local_period().unwrap(), 84);
        let mut t = cfg.timing.clone();
        t.t_n = 7.0;
        assert!(t.validate().is_err());
        let mut t = cfg.timing.clone();
        t.drto_every = 0;
        assert!(t.validate().is_err());
        let mut t = cfg.timing.clone();
        t.horizon = 85;
        assert!(t.validate().is_err());
        let mut c = cfg.clone();
        c.timing.period = 6;
        assert!(c.validate().is_err());
        let mut c = cfg;
        c.mpc.kd = DMatrix::identity(4, 4) * 2.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mailbox_keeps_the_latest() {
        let mut m = Mailbox::new();
        assert!(m.latest().is_none());
        m.publish(1);
        m.publish(2);
        assert_eq!(m.latest(), Some((&2, 2)));
    }

    #[test]
    fn each_reference_serves_d_periods() {
        let mut cfg = single_stage();
        cfg.timing.drto_every = 2;
        cfg.timing.control_periods = 5;
        let plant = FourTankPlant::new(cfg.plant.clone()).unwrap();
        let report = run_experiment(&cfg, &plant, None, Mode::Full).unwrap();
        assert_eq!(report.ticks.len(), 5 * 12);
        for (i, t) in report.ticks.iter().enumerate() {
            assert_eq!(t.tick, i);
            assert_eq!(t.phase, i % 12);
            assert_eq!(t.reference_iteration, i / 24 + 1);
        }
        assert_eq!(report.drto.len(), 3);
        assert!(report
            .drto
            .windows(2)
            .all(|w| w[1].iteration == w[0].iteration + 1));
    }

    #[test]
    fn oracle_of_the_model_is_the_unmodified_drto() {
        let cfg = ExperimentConfig::benchmark();
        let plant = affine_plant(&cfg);
        let oracle = compute_oracle(&cfg, &plant, &[cfg.initial_theta()]).unwrap();
        let mut drto = DrtoLoop::new(&cfg, &plant, Some(&oracle)).unwrap();
        drto.step().unwrap();
        let first = &drto.records[0];
        assert!((&first.theta - &oracle.theta).amax() <= 1e-8);
        assert!(first.cost_gap.unwrap().abs() <= 1e-8);
        assert!(oracle.trajectory.closure_violation() <= 1e-8);
        assert!(drto.modifiers.eps_norm() <= 1e-12);
    }

    #[test]
    fn oracle_starts_agree() {
        let cfg = ExperimentConfig::benchmark();
        let plant = FourTankPlant::new(cfg.plant.clone()).unwrap();
        let starts = oracle_starts(&cfg, &plant).unwrap();
        assert_eq!(starts.len(), 3);
        let oracle = compute_oracle(&cfg, &plant, &starts).unwrap();
        for s in &oracle.starts {
            assert_eq!(s.status, Some(SolveStatus::Converged));
            assert!((s.cost.unwrap() - oracle.cost).abs() <= 1e-6 * oracle.cost.abs());
        }
        for u in &oracle.trajectory.inputs {
            for k in 0..2 {
                assert!(u[k] >= cfg.bounds.u_min[k] && u[k] <= cfg.bounds.u_max[k]);
            }
        }
    }

    #[test]
    fn failure_keeps_the_partial_report() {
        // the literal eps update loses feasibility on its second solve
        let cfg = ExperimentConfig::benchmark();
        let plant = FourTankPlant::new(cfg.plant.clone()).unwrap();
        let report = run_experiment(&cfg, &plant, None, Mode::DrtoOnly).unwrap();
        assert_eq!(report.drto.len(), 1);
        assert!(matches!(report.verdict, Verdict::Failed(_)));
    }

    #[test]
    fn perfect_model_tracks_from_the_first_tick() {
        let mut cfg = ExperimentConfig::benchmark();
        let plant = affine_plant(&cfg);
        let reference = DrtoLoop::new(&cfg, &plant, None).unwrap().step().unwrap();
        cfg.x_init = reference.states[0].clone();
        let mut mailbox = Mailbox::new();
        mailbox.publish(reference);
        let mut control = ControlLoop::new(&cfg, &plant).unwrap();
        for _ in 0..30 {
            control.tick(&mailbox).unwrap();
        }
        for t in &control.records {
            assert!(t.tracking_error <= 1e-9, "{}", t.tracking_error);
            assert!(t.innovation_norm <= 1e-9);
            assert!(t.fallback.is_none());
        }
    }

    #[test]
    fn layer_failure_holds_the_input() {
        let cfg = ExperimentConfig::benchmark();
        let plant = affine_plant(&cfg);
        let mut mailbox = Mailbox::new();
        mailbox.publish(EconomicReference {
            states: alloc::vec![DVector::zeros(3); 7],
            inputs: alloc::vec![DVector::from_vec(alloc::vec![9.0, 1.0]); 7],
            step_seconds: 3600.0,
            iteration: 1,
        });
        let mut control = ControlLoop::new(&cfg, &plant).unwrap();
        control.tick(&mailbox).unwrap();
        control.tick(&mailbox).unwrap();
        for t in &control.records {
            assert!(t.fallback.is_some());
            assert_eq!(t.input.as_slice(), &[3.6, 1.0]);
        }
    }

    #[test]
    fn no_reference_is_an_error() {
        let cfg = ExperimentConfig::benchmark();
        let plant = affine_plant(&cfg);
        let mut control = ControlLoop::new(&cfg, &plant).unwrap();
        assert!(control.tick(&Mailbox::new()).is_err());
    }
}
