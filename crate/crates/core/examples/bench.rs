//! Times the solver on generated instances: `cargo run --release --example bench -- [seeds]`.

use std::time::Instant;

use evplace::grid::distance_matrix;
use evplace::optimizer::{solve_lp_relaxation, solve_mip, PlacementModel, SolveOptions};
use evplace::synth::{generate_instance, SynthConfig};

fn main() {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    for seed in 0..seeds {
        let mut cfg = SynthConfig::full_scale(seed);
        let env = |k: &str| std::env::var(k).ok().and_then(|v| v.parse::<f64>().ok());
        if let (Some(g), Some(m)) = (env("GRID"), env("SUPPLY")) {
            cfg.grid = evplace::grid::GridSpec::square(g as usize).unwrap();
            cfg.n_supply = m as usize;
        }
        if let Some(v) = env("PRE") {
            cfg.preexisting_fraction = v;
        }
        if let (Some(a), Some(b)) = (env("SLOT_LO"), env("SLOT_HI")) {
            cfg.slot_range = (a as u32, b as u32);
        }
        let inst = generate_instance(&cfg).expect("instance");
        let d = distance_matrix(cfg.grid, &inst.infrastructure);
        let demand = inst.ground_truth_column(0);
        let model = PlacementModel::new(d, demand, inst.infrastructure.clone(), cfg.params).expect("model");
        let t = Instant::now();
        let lp = solve_lp_relaxation(&model).expect("lp");
        let lp_time = t.elapsed();
        let opts = SolveOptions {
            deterministic: true,
            time_limit: std::time::Duration::from_secs(std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(600)),
            ..SolveOptions::default()
        };
        println!("lp {} in {:?}", lp.lower_bound, lp_time);
        let sol = solve_mip(&model, &opts).expect("mip");
        println!(
            "seed {seed}: lp {:.1} in {:.2}s | Z {:.1} LB {:.1} gap {:.2e} nodes {} in {:.1}s",
            lp.lower_bound,
            lp_time.as_secs_f64(),
            sol.objective,
            sol.lower_bound,
            sol.gap,
            sol.node_count,
            sol.wall_time.as_secs_f64()
        );
    }
}
