//! Config loading, report emission and plotting for the `pma` binary.

pub mod config;
pub mod report;
pub mod svg;

use anyhow::Result;
use nalgebra::DVector;
use pma_core::experiment::{compute_oracle, oracle_starts, ExperimentConfig, Oracle};
use pma_core::PeriodicPlant;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The spread starts plus `extra` uniform draws inside the bounds.
pub fn starts<P: PeriodicPlant + ?Sized>(
    cfg: &ExperimentConfig,
    plant: &P,
    extra: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let mut out = oracle_starts(cfg, plant)?;
    let b = &cfg.bounds;
    let (nx, nu) = (b.x_min.len(), b.u_min.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..extra {
        let mut theta = DVector::zeros(nx + cfg.timing.period * nu);
        for i in 0..nx {
            theta[i] = rng.random_range(b.x_min[i]..=b.x_max[i]);
        }
        for k in 0..cfg.timing.period {
            for i in 0..nu {
                theta[nx + k * nu + i] = rng.random_range(b.u_min[i]..=b.u_max[i]);
            }
        }
        out.push(theta);
    }
    Ok(out)
}

pub fn oracle<P: PeriodicPlant + ?Sized>(
    cfg: &ExperimentConfig,
    plant: &P,
    extra: usize,
    seed: u64,
) -> Result<Oracle> {
    let s = starts(cfg, plant, extra, seed)?;
    Ok(compute_oracle(cfg, plant, &s)?)
}
