//! The whole hierarchy in one run: frozen-coefficient outer loop around
//! the penalized leader solve, with the follower equilibrium embedded in
//! every optimality system. Prints the iteration log and the terminal
//! norms steered toward zero.

use stacknash::carleman::RhoStarWeights;
use stacknash::grid::{Geometry, SpaceTimeField, SubdomainMask};
use stacknash::nash::{norm_qt_masked, CostConfig};
use stacknash::outer::{run_stackelberg_nash, OuterConfig, OuterProblem};
use stacknash::pde::{CouplingMethod, Discretization, Nonlinearity, PicardOptions};

fn main() -> stacknash::Result<()> {
    let disc = Discretization::new(60, 1.0, 80, 1.0, 0.5)?;
    let g = &disc.grid;
    let geom = Geometry {
        omega: SubdomainMask::from_interval(g, 0.2, 0.45),
        omega1: SubdomainMask::from_interval(g, 0.6, 0.7),
        omega2: SubdomainMask::from_interval(g, 0.75, 0.85),
        omega_d: SubdomainMask::from_interval(g, 0.3, 0.6),
        o0: SubdomainMask::from_interval(g, 0.355, 0.375),
        o1: SubdomainMask::from_interval(g, 0.35, 0.39),
        o2: SubdomainMask::from_interval(g, 0.34, 0.41),
        o3: SubdomainMask::from_interval(g, 0.32, 0.43),
        o_prime: SubdomainMask::from_interval(g, 0.355, 0.375),
    };
    geom.validate()?;
    let tanh = Nonlinearity::Tanh { m: 0.1 };
    let dfield = SpaceTimeField::constant("d", disc.levels(), disc.n(), 1.0);
    let cost = CostConfig::zero_targets(
        &disc,
        [1.0, 1.0],
        [100.0, 100.0],
        RhoStarWeights::unit(disc.steps()),
    )?;
    let y10: Vec<f64> = g
        .nodes()
        .iter()
        .map(|&x| (std::f64::consts::PI * x).sin())
        .collect();
    let y20: Vec<f64> = g.nodes().iter().map(|&x| 2.0 * x * (1.0 - x)).collect();
    let eps = 1e-4;
    let prob = OuterProblem {
        disc: &disc,
        geom: &geom,
        f1: &tanh,
        f2: &tanh,
        d: &dfield,
        cost: &cost,
        init: (&y10, &y20),
        eps,
        method: CouplingMethod::Picard(PicardOptions::default()),
    };
    let outer = OuterConfig {
        max_iter: 15,
        tol: 1e-8,
        damping: 1.0,
    };
    let t0 = std::time::Instant::now();
    let report = run_stackelberg_nash(&prob, &outer, None)?;
    println!(
        "outer loop converged: {} ({} iterations, {:.1?})",
        report.converged,
        report.iterations,
        t0.elapsed()
    );
    for (i, c) in report.change_history.iter().enumerate() {
        println!("  iteration {:>2}: trajectory change {:.3e}", i + 1, c);
    }
    println!(
        "terminal norms: |y1(T)| = {:.4e}, |y2(T)| = {:.4e} (eps = {eps:.0e}, sqrt(eps) = {:.2e})",
        report.terminal_norms.0,
        report.terminal_norms.1,
        eps.sqrt()
    );
    println!(
        "leader norm |h| = {:.4e}, follower norms |v1| = {:.4e}, |v2| = {:.4e}",
        norm_qt_masked(&report.h, &geom.omega, &disc),
        norm_qt_masked(&report.v1, &geom.omega1, &disc),
        norm_qt_masked(&report.v2, &geom.omega2, &disc),
    );
    println!(
        "semilinear state residual: {:.3e}",
        report.nonlinear_residual
    );
    Ok(())
}
