//! Empirical Hardy-Poincare constants against the closed-form bound
//! 4/(1 - alpha)^2, over random smooth profiles vanishing at the
//! degenerate endpoint.

use stacknash::carleman::probe_hardy;
use stacknash::grid::{DegeneracyCoefficient, SpaceGrid};

fn main() -> stacknash::Result<()> {
    let grid = SpaceGrid::uniform(400)?;
    println!("n = 400, 200 trials per exponent");
    for alpha in [0.25, 0.5, 0.75] {
        let a = DegeneracyCoefficient::new(alpha)?;
        let report = probe_hardy(&a, &grid, 200, 2024)?;
        println!(
            "alpha = {alpha}: worst ratio {:.4}, bound {:.4} (within 1.1x: {})",
            report.worst_ratio, report.bound, report.within_bound
        );
    }
    Ok(())
}
