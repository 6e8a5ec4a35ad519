//! Penalized null control along a decreasing epsilon ladder: runs the
//! conjugate-gradient minimization per epsilon, prints the terminal
//! norms and the fitted decay exponent, and writes the sweep artifacts.

use stacknash::artifact::config_hash;
use stacknash::config::RunConfig;
use stacknash::experiment::{run_experiment, ExperimentName};

fn main() -> stacknash::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.grid.n = 60;
    cfg.grid.m = 80;
    cfg.run.out_dir = "out/examples".into();

    let t0 = std::time::Instant::now();
    let summary = run_experiment(
        ExperimentName::LeaderSweep,
        &cfg,
        std::path::Path::new(&cfg.run.out_dir),
        None,
    )?;
    println!("leader sweep finished in {:.1?}", t0.elapsed());
    println!("config hash: {}", config_hash(&cfg.to_toml(), cfg.run.seed));
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    println!("artifacts under {}/leader-sweep/", cfg.run.out_dir);
    Ok(())
}
