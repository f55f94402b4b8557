use std::time::{Duration, Instant};

use pma_core::experiment::{ControlLoop, DrtoLoop, ExperimentConfig, Mailbox};
use pma_core::FourTankPlant;

// Each tick must finish well inside t_N of simulated time.
#[test]
fn benchmark_tick_fits_the_wall_clock_budget() {
    let mut cfg = ExperimentConfig::benchmark();
    cfg.pma.update.eps_uses_new_lambda = true;
    let plant = FourTankPlant::new(cfg.plant.clone()).unwrap();
    let mut drto = DrtoLoop::new(&cfg, &plant, None).unwrap();
    let mut mailbox = Mailbox::new();
    mailbox.publish(drto.step().unwrap());

    let mut control = ControlLoop::new(&cfg, &plant).unwrap();
    let ticks = 2 * cfg.timing.local_period().unwrap();
    let mut worst = Duration::ZERO;
    for _ in 0..ticks {
        let t0 = Instant::now();
        control.tick(&mailbox).unwrap();
        worst = worst.max(t0.elapsed());
    }
    assert_eq!(control.records.len(), ticks);
    assert!(
        worst <= Duration::from_millis(100),
        "slowest tick took {worst:?}"
    );
}
