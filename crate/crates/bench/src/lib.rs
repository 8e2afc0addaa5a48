//! Fixed inputs shared by the benchmarks.

use edgealloc::sim::{builtin_sweep, channel_rng, sweep_point};
use edgealloc::Scenario;

/// A sweep point of a built-in sweep with the channels of run 0.
pub fn sweep_scenario(name: &str, index: usize) -> Scenario {
    let config = builtin_sweep(name).expect("built-in sweep");
    let full = config
        .template
        .resolve(&mut channel_rng(config.seed, 0))
        .expect("template resolves");
    sweep_point(&config, &full, index).expect("sweep point")
}
