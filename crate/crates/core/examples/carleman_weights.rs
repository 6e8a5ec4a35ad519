//! Weight-family construction: the sigma profile, the admissible lambda
//! interval, the calibrated s, and the pointwise inequalities tying phi
//! to Phi.

use stacknash::carleman::{build_sigma, build_weights, calibrate_s, choose_parameters, theta_of};
use stacknash::grid::SubdomainMask;
use stacknash::pde::Discretization;

fn main() -> stacknash::Result<()> {
    let disc = Discretization::new(100, 1.0, 200, 1.0, 0.5)?;
    let o0 = SubdomainMask::from_interval(&disc.grid, 0.355, 0.375);
    let sigma = build_sigma(&disc.grid, &o0)?;
    println!(
        "sigma: critical point {:.4} (tilt k = {:.4}), sup = {:.6}",
        sigma.critical_point, sigma.shift, sigma.sup
    );

    let mut params = choose_parameters(&disc.a, &sigma)?;
    println!(
        "parameters: r = {:.6} (r*sup = 4 ln 2), d_bar = {:.6}",
        params.r, params.d_bar
    );
    println!(
        "admissible lambda interval [{:.6}, {:.6}], midpoint {:.6}",
        params.interval.0, params.interval.1, params.lambda
    );
    params.s = calibrate_s(&params, &disc, 1e12);
    println!("calibrated s = {:.6e}", params.s);

    let bundle = build_weights(&params, &disc, &sigma)?;
    println!(
        "Theta(T/2) = {} (closed form {})",
        bundle.theta[disc.steps() / 2],
        theta_of(0.5, 1.0)
    );
    println!(
        "delta range [{:.4}, {:.4}] (all negative)",
        bundle.delta.first().unwrap(),
        bundle.delta.last().unwrap()
    );
    let kmin = bundle.kappa.iter().cloned().fold(f64::INFINITY, f64::min);
    let kmax = bundle.kappa.iter().cloned().fold(0.0_f64, f64::max);
    println!("kappa in [{kmin:.6e}, {kmax:.6e}] (inside (0,1))");
    let rmax = bundle.rho_star_sq.iter().cloned().fold(0.0_f64, f64::max);
    println!("rho_*^2 peaks at {rmax:.4e} near the time endpoints");

    // spot check of the pointwise chain at a few samples
    for (k, j) in [
        (0, 0),
        (disc.steps() / 2, disc.n() / 2),
        (disc.steps() - 1, disc.n() - 1),
    ] {
        let phi = bundle.phi.get(k, j);
        let cap = bundle.cap_phi.get(k, j);
        println!(
            "t_mid {:.4}, x {:.4}: (4/3)Phi = {:.4e} <= phi = {:.4e} <= Phi = {:.4e}",
            disc.time.midpoint_time(k),
            disc.grid.node(j),
            4.0 / 3.0 * cap,
            phi,
            cap
        );
    }
    Ok(())
}
