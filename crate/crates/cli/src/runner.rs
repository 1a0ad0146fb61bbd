//! Replication-level parallelism with a deterministic reduction.
//!
//! Each replication is a pure function of (config, index); workers pull
//! indices from a shared counter and write into per-index slots, so the
//! collected vector is identical for any worker count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use mfd_core::sim::{calibrate_rates, run_replication, RepOutcome, ScenarioConfig};

pub fn run_parallel(cfg: &ScenarioConfig<f64>, jobs: usize) -> Vec<Option<RepOutcome<f64>>> {
    let (kappa, phi) = calibrate_rates(cfg);
    let n = cfg.n_sim;
    if jobs <= 1 {
        return (0..n)
            .map(|rep| run_replication(cfg, kappa, phi, rep).ok())
            .collect();
    }

    let counter = AtomicUsize::new(0);
    let slots: Vec<OnceLock<Option<RepOutcome<f64>>>> = (0..n).map(|_| OnceLock::new()).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let rep = counter.fetch_add(1, Ordering::Relaxed);
                if rep >= n {
                    break;
                }
                let outcome = run_replication(cfg, kappa, phi, rep).ok();
                slots[rep].set(outcome).expect("each index claimed once");
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("all replications completed"))
        .collect()
}
