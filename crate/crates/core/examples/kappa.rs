//! Checks kappa recovery on generated instances: `cargo run --release --example kappa -- [side] [noise]`.

use evplace::forecast::{tune_kappa, DEFAULT_KAPPA_GRID};
use evplace::grid::GridSpec;
use evplace::synth::{generate_instance, SynthConfig};

fn main() {
    let side: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let noise: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.002);
    let grid = DEFAULT_KAPPA_GRID.values();
    for (k, &truth) in [1.0, 3.0, 5.0, 8.0].iter().enumerate() {
        for rep in 0..5u64 {
            let mut cfg = SynthConfig::new(100 * k as u64 + rep, GridSpec::square(side).unwrap(), 20);
            cfg.base_kappa = truth;
            cfg.noise_sigma = noise;
            let inst = generate_instance(&cfg).unwrap();
            let s = tune_kappa(&inst.history, &grid).unwrap();
            println!("truth {truth} got {} mse {:.3e}", s.best.kappa(), s.best_mse);
        }
    }
}
