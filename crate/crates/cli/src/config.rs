//! Flat INI-style configuration: `key = value` lines with dotted keys,
//! comma-separated arrays, `#` or `;` comments and optional `[section]`
//! headers that prefix the keys below them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector, Vector2, Vector4};
use pma_core::experiment::ExperimentConfig;
use pma_core::gradients::GradientSource;
use pma_core::mpc::TrackingWeights;
use pma_core::StepBridge;

/// Parsed key/value pairs with the line each came from.
#[derive(Debug, Clone, Default)]
pub struct Ini {
    entries: BTreeMap<String, (String, usize)>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| anyhow!("line {line_no}: unterminated section header"))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {line_no}: expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() {
                bail!("line {line_no}: empty key");
            }
            let key = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            if let Some((_, first)) =
                entries.insert(key.clone(), (value.trim().to_string(), line_no))
            {
                bail!("line {line_no}: duplicate key `{key}` (first set on line {first})");
            }
        }
        Ok(Self { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.entries.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.raw(key)
            .map(|(v, l)| {
                v.parse()
                    .map_err(|_| anyhow!("line {l}: `{key}` expects a number, got `{v}`"))
            })
            .transpose()
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.raw(key)
            .map(|(v, l)| {
                v.parse().map_err(|_| {
                    anyhow!("line {l}: `{key}` expects a non-negative integer, got `{v}`")
                })
            })
            .transpose()
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.raw(key)
            .map(|(v, l)| match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(anyhow!(
                    "line {l}: `{key}` expects true or false, got `{v}`"
                )),
            })
            .transpose()
    }

    pub fn string(&self, key: &str) -> Option<&str> {
        self.raw(key).map(|(v, _)| v)
    }

    pub fn array(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.raw(key)
            .map(|(v, l)| {
                v.split(',')
                    .map(|s| {
                        let s = s.trim();
                        s.parse()
                            .map_err(|_| anyhow!("line {l}: `{key}` has a non-numeric entry `{s}`"))
                    })
                    .collect()
            })
            .transpose()
    }

    fn array_of(&self, key: &str, len: usize) -> Result<Option<Vec<f64>>> {
        match self.array(key)? {
            Some(v) if v.len() != len => {
                let (_, l) = self.raw(key).unwrap();
                bail!("line {l}: `{key}` needs {len} values, got {}", v.len())
            }
            other => Ok(other),
        }
    }

    /// A scalar (times identity), `n` diagonal entries or `n * n` row-major entries.
    pub fn square(&self, key: &str, n: usize) -> Result<Option<DMatrix<f64>>> {
        let Some(v) = self.array(key)? else {
            return Ok(None);
        };
        let m = match v.len() {
            1 => DMatrix::identity(n, n) * v[0],
            k if k == n => DMatrix::from_diagonal(&DVector::from_vec(v)),
            k if k == n * n => DMatrix::from_row_slice(n, n, &v),
            k => {
                let (_, l) = self.raw(key).unwrap();
                bail!(
                    "line {l}: `{key}` needs 1, {n} or {} values, got {k}",
                    n * n
                )
            }
        };
        Ok(Some(m))
    }
}

/// Every key the loader understands.
pub const KNOWN_KEYS: &[&str] = &[
    "timing.t_T",
    "timing.T",
    "timing.t_N",
    "timing.D",
    "timing.periods",
    "plant.area",
    "plant.discharge",
    "plant.h_min",
    "plant.h_max",
    "plant.q_min",
    "plant.q_max",
    "plant.gravity",
    "plant.gamma_a",
    "plant.gamma_b",
    "plant.substep",
    "plant.x0",
    "model.A",
    "model.B",
    "model.x_lin",
    "model.u_lin",
    "model.dt",
    "model.matrices_are_hourly",
    "cost.c",
    "cost.p",
    "gradients.source",
    "gradients.rel_step",
    "solver.kkt_tol",
    "solver.max_iter",
    "solver.ls_beta",
    "solver.reg_min",
    "pma.max_iter",
    "pma.tol",
    "pma.first_order",
    "pma.eps_uses_new_lambda",
    "pma.Kx",
    "pma.Ku",
    "pma.Keps",
    "drto.state_penalty",
    "drto.u_init",
    "stto.Qs",
    "stto.Rs",
    "mpc.N",
    "mpc.Q",
    "mpc.R",
    "mpc.Kd",
    "mpc.vL",
    "mpc.vU",
    "oracle.random_starts",
    "oracle.seed",
    "output.dir",
];

/// An experiment plus the settings that only the command line uses.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub experiment: ExperimentConfig,
    pub random_starts: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    from_str(&text).with_context(|| format!("in {}", path.display()))
}

/// Overlays the keys present in `text` on the benchmark defaults.
pub fn from_str(text: &str) -> Result<LoadedConfig> {
    let ini = Ini::parse(text)?;
    for key in ini.keys() {
        if !KNOWN_KEYS.contains(&key) {
            bail!("unknown key `{key}`");
        }
    }
    let mut c = ExperimentConfig::benchmark();

    // plant
    let p = &mut c.plant;
    if let Some(v) = ini.f64("plant.area")? {
        p.area = v;
    }
    if let Some(v) = ini.array_of("plant.discharge", 4)? {
        p.discharge = Vector4::from_column_slice(&v);
    }
    if let Some(v) = ini.array_of("plant.h_min", 4)? {
        p.h_min = Vector4::from_column_slice(&v);
    }
    if let Some(v) = ini.array_of("plant.h_max", 4)? {
        p.h_max = Vector4::from_column_slice(&v);
    }
    if let Some(v) = ini.array_of("plant.q_min", 2)? {
        p.q_min = Vector2::from_column_slice(&v);
    }
    if let Some(v) = ini.array_of("plant.q_max", 2)? {
        p.q_max = Vector2::from_column_slice(&v);
    }
    if let Some(v) = ini.f64("plant.gravity")? {
        p.gravity = v;
    }
    if let Some(v) = ini.f64("plant.substep")? {
        p.substep = v;
    }
    match (ini.array("plant.gamma_a")?, ini.array("plant.gamma_b")?) {
        (Some(a), Some(b)) => {
            if a.len() != b.len() {
                bail!("plant.gamma_a and plant.gamma_b differ in length");
            }
            p.gamma_cycle = a
                .iter()
                .zip(&b)
                .map(|(x, y)| Vector2::new(*x, *y))
                .collect();
        }
        (None, None) => {}
        _ => bail!("plant.gamma_a and plant.gamma_b must be given together"),
    }
    if let Some(v) = ini.f64("timing.t_T")? {
        p.step_seconds = v;
    }
    c.timing.t_t = p.step_seconds;
    c.timing.period = ini.usize("timing.T")?.unwrap_or(p.period());
    if let Some(v) = ini.f64("timing.t_N")? {
        c.timing.t_n = v;
    }
    if let Some(v) = ini.usize("timing.D")? {
        c.timing.drto_every = v;
    }
    if let Some(v) = ini.usize("timing.periods")? {
        c.timing.control_periods = v;
    }
    if let Some(v) = ini.usize("mpc.N")? {
        c.timing.horizon = v;
    }
    c.cost.area = p.area;
    c.bounds.x_min = DVector::from_column_slice(p.h_min.as_slice());
    c.bounds.x_max = DVector::from_column_slice(p.h_max.as_slice());
    c.bounds.u_min = DVector::from_column_slice(p.q_min.as_slice());
    c.bounds.u_max = DVector::from_column_slice(p.q_max.as_slice());
    c.mpc.v_min = c.bounds.u_min.clone();
    c.mpc.v_max = c.bounds.u_max.clone();

    // model
    let (nx, nu) = (c.model.state_dim(), c.model.input_dim());
    if let Some(v) = ini.array_of("model.A", nx * nx)? {
        c.model.a = DMatrix::from_row_slice(nx, nx, &v);
    }
    if let Some(v) = ini.array_of("model.B", nx * nu)? {
        c.model.b = DMatrix::from_row_slice(nx, nu, &v);
    }
    if let Some(v) = ini.array_of("model.x_lin", nx)? {
        c.model.x_lin = DVector::from_vec(v);
    }
    if let Some(v) = ini.array_of("model.u_lin", nu)? {
        c.model.u_lin = DVector::from_vec(v);
    }
    if let Some(v) = ini.f64("model.dt")? {
        c.model.dt = v;
    }
    if let Some(direct) = ini.bool("model.matrices_are_hourly")? {
        c.bridge = if direct {
            StepBridge::Direct
        } else {
            StepBridge::Composed
        };
    }
    c.x_init = c.model.x_lin.clone();
    c.u_init = c.model.u_lin.clone();
    if let Some(v) = ini.array_of("plant.x0", nx)? {
        c.x_init = DVector::from_vec(v);
    }
    if let Some(v) = ini.array_of("drto.u_init", nu)? {
        c.u_init = DVector::from_vec(v);
    }

    if let Some(v) = ini.f64("cost.c")? {
        c.cost.c = v;
    }
    if let Some(v) = ini.f64("cost.p")? {
        c.cost.p = v;
    }

    let rel_step = ini
        .f64("gradients.rel_step")?
        .unwrap_or(pma_core::gradients::DEFAULT_REL_STEP);
    c.gradients = match ini.string("gradients.source").unwrap_or("exact") {
        "exact" | "sensitivity" => GradientSource::Exact,
        "fd" | "finite_difference" => GradientSource::FiniteDifference { rel_step },
        other => bail!("gradients.source must be `exact` or `fd`, got `{other}`"),
    };

    if let Some(v) = ini.f64("solver.kkt_tol")? {
        c.solver.kkt_tol = v;
    }
    if let Some(v) = ini.usize("solver.max_iter")? {
        c.solver.max_iter = v;
    }
    if let Some(v) = ini.f64("solver.ls_beta")? {
        c.solver.ls_beta = v;
    }
    if let Some(v) = ini.f64("solver.reg_min")? {
        c.solver.reg_min = v;
    }

    if let Some(v) = ini.usize("pma.max_iter")? {
        c.pma.max_iter = v;
    }
    if let Some(v) = ini.f64("pma.tol")? {
        c.pma.tol = v;
    }
    if let Some(v) = ini.bool("pma.first_order")? {
        c.pma.update.first_order = v;
    }
    if let Some(v) = ini.bool("pma.eps_uses_new_lambda")? {
        c.pma.update.eps_uses_new_lambda = v;
    }
    let (kx, ku, keps) = c.pma.gains;
    c.pma.gains = (
        ini.f64("pma.Kx")?.unwrap_or(kx),
        ini.f64("pma.Ku")?.unwrap_or(ku),
        ini.f64("pma.Keps")?.unwrap_or(keps),
    );
    if let Some(rho) = ini.f64("drto.state_penalty")? {
        c.state_penalty = if rho == 0.0 { None } else { Some(rho) };
    }

    let q = ini.square("stto.Qs", nx)?.unwrap_or(c.stto.q.clone());
    let r = ini.square("stto.Rs", nu)?.unwrap_or(c.stto.r.clone());
    c.stto = TrackingWeights::new(q, r)?;
    let q = ini.square("mpc.Q", nx)?.unwrap_or(c.mpc.weights.q.clone());
    let r = ini.square("mpc.R", nu)?.unwrap_or(c.mpc.weights.r.clone());
    c.mpc.weights = TrackingWeights::new(q, r)?;
    if let Some(kd) = ini.square("mpc.Kd", nx)? {
        c.mpc.kd = kd;
    }
    if let Some(v) = ini.array_of("mpc.vL", nu)? {
        c.mpc.v_min = DVector::from_vec(v);
    }
    if let Some(v) = ini.array_of("mpc.vU", nu)? {
        c.mpc.v_max = DVector::from_vec(v);
    }

    c.validate()?;
    let seed = match ini.string("oracle.seed") {
        Some(s) => s
            .parse()
            .map_err(|_| anyhow!("oracle.seed must be a non-negative integer"))?,
        None => 0,
    };
    Ok(LoadedConfig {
        experiment: c,
        random_starts: ini.usize("oracle.random_starts")?.unwrap_or(0),
        seed,
        output: ini.string("output.dir").map(PathBuf::from),
    })
}
