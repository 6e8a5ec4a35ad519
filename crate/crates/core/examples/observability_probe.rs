//! Numerical probe of the observability inequality: for random terminal
//! data the coupled adjoint pair is solved and the weighted left-hand
//! side is compared with the observation of rho_1 on the leader region.

use stacknash::carleman::{
    build_sigma, build_weights, calibrate_s, choose_parameters, probe_caccioppoli,
    probe_observability,
};
use stacknash::grid::{Geometry, SubdomainMask};
use stacknash::nash::CostConfig;
use stacknash::pde::{Discretization, LinearizedCoefficients};

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

    let sigma = build_sigma(g, &geom.o0)?;
    let mut params = choose_parameters(&disc.a, &sigma)?;
    params.s = calibrate_s(&params, &disc, 1e12);
    let bundle = build_weights(&params, &disc, &sigma)?;
    let lin = LinearizedCoefficients::constant(&disc, 0.1, 0.1, 0.1, 0.1, 1.0);
    let cost =
        CostConfig::zero_targets(&disc, [1.0, 1.0], [100.0, 100.0], bundle.rho_star_weights())?;

    let rep = probe_observability(&disc, &geom, &lin, &cost, &bundle, 1.0, 20, 99)?;
    println!(
        "observability probe, 20 random terminal data, s = {:.3e}",
        params.s
    );
    println!("  seed              lhs          rhs        ratio");
    for row in rep.rows.iter().take(6) {
        println!(
            "  {:>16} {:.5e} {:.5e} {:.5e}",
            row.seed, row.lhs, row.rhs, row.ratio
        );
    }
    println!("  ... ({} trials total)", rep.rows.len());
    println!(
        "  worst ratio {:.5e}, median {:.5e}",
        rep.worst_ratio, rep.median_ratio
    );

    let cac = probe_caccioppoli(&disc, &geom, &lin, &cost, &bundle, 30, 99)?;
    println!(
        "Caccioppoli probe: worst {:.5e}, median {:.5e} over {} trials",
        cac.worst_ratio,
        cac.median_ratio,
        cac.rows.len()
    );
    Ok(())
}
