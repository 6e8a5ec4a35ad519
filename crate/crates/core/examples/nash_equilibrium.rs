//! Follower game for a fixed leader control: solve the coupled
//! optimality system, verify the feedback characterization of the
//! equilibrium controls, and spot-check the Nash inequality by direct
//! cost evaluation under perturbations.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use stacknash::carleman::RhoStarWeights;
use stacknash::grid::{Geometry, SubdomainMask};
use stacknash::nash::{evaluate_j, random_direction, solve_nash, CostConfig};
use stacknash::pde::{
    CouplingMethod, Discretization, LinearizedCoefficients, Model, PicardOptions,
};

fn main() -> stacknash::Result<()> {
    let disc = Discretization::new(60, 1.0, 60, 1.0, 0.5)?;
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
    let lin = LinearizedCoefficients::constant(&disc, 0.0, 0.0, 0.0, 0.0, 1.0);
    let cost = CostConfig::zero_targets(
        &disc,
        [1.0, 1.0],
        [200.0, 200.0],
        RhoStarWeights::unit(disc.steps()),
    )?;
    let y10: Vec<f64> = g
        .nodes()
        .iter()
        .map(|&x| (std::f64::consts::PI * x).sin())
        .collect();
    let y20: Vec<f64> = g.nodes().iter().map(|&x| 2.0 * x * (1.0 - x)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = random_direction(&disc, &geom.omega, &mut rng);

    let sol = solve_nash(
        &disc,
        &geom,
        &lin,
        &cost,
        &h,
        (&y10, &y20),
        CouplingMethod::Picard(PicardOptions::default()),
    )?;
    println!("Picard iterations: {}", sol.iterations);
    println!(
        "characterization residuals (relative): {:.3e}, {:.3e}",
        sol.residuals[0], sol.residuals[1]
    );
    println!(
        "fitted constant of |(v1,v2)| <= C (1 + |h|): {:.3e}",
        sol.v_bound_constant
    );

    // Nash inequality by direct evaluation: perturbing either follower
    // away from the equilibrium cannot lower its own cost
    let model = Model::Linear(&lin);
    let j1 = evaluate_j(
        0,
        &disc,
        &geom,
        &model,
        &cost,
        &h,
        &sol.v1,
        &sol.v2,
        (&y10, &y20),
    )?;
    let j2 = evaluate_j(
        1,
        &disc,
        &geom,
        &model,
        &cost,
        &h,
        &sol.v1,
        &sol.v2,
        (&y10, &y20),
    )?;
    println!("J1 = {j1:.6e}, J2 = {j2:.6e} at the equilibrium");
    let mut worst = 0.0_f64;
    for _ in 0..5 {
        let mut w = random_direction(&disc, &geom.omega1, &mut rng);
        w.scale(1e-3);
        let mut v = sol.v1.clone();
        v.axpy(1.0, &w);
        let j = evaluate_j(
            0,
            &disc,
            &geom,
            &model,
            &cost,
            &h,
            &v,
            &sol.v2,
            (&y10, &y20),
        )?;
        worst = worst.min(j - j1);
        println!("  perturbed J1 = {j:.6e} (increase {:+.3e})", j - j1);
    }
    assert!(worst >= -1e-8);
    Ok(())
}
