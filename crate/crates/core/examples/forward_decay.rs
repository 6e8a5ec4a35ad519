//! Uncontrolled forward solves of the coupled degenerate system: pure
//! diffusion decay, the effect of the cascade coupling d y_1, and the
//! semi-implicit treatment of a bounded reaction term.

use stacknash::grid::SpaceTimeField;
use stacknash::pde::{
    solve_forward, solve_forward_semilinear, Discretization, LinearizedCoefficients, Nonlinearity,
    PairCoeffs, ReactionScheme,
};

fn main() -> stacknash::Result<()> {
    let disc = Discretization::new(80, 1.0, 120, 1.0, 0.5)?;
    let y10: Vec<f64> = disc
        .grid
        .nodes()
        .iter()
        .map(|&x| (std::f64::consts::PI * x).sin())
        .collect();
    let y20: Vec<f64> = disc
        .grid
        .nodes()
        .iter()
        .map(|&x| 2.0 * x * (1.0 - x))
        .collect();
    let zero_src = disc.zeros_field("zero");

    // linear, coupled through d = 1
    let lin = LinearizedCoefficients::constant(&disc, 0.0, 0.0, 0.0, 0.0, 1.0);
    let y = solve_forward(
        &disc,
        PairCoeffs {
            diag1: &lin.b1,
            diag2: &lin.b2,
            d: &lin.d,
        },
        (&zero_src, &zero_src),
        (&y10, &y20),
    )?;
    println!("linear coupled system, alpha = 0.5, d = 1:");
    for k in [0, disc.steps() / 4, disc.steps() / 2, disc.steps()] {
        println!(
            "  t = {:.3}  |y1| = {:.5e}  |y2| = {:.5e}",
            disc.time.level_time(k),
            disc.grid.norm_l2(y.first.level(k)),
            disc.grid.norm_l2(y.second.level(k)),
        );
    }

    // saturating reaction, semi-implicit stepping
    let tanh = Nonlinearity::Tanh { m: 0.5 };
    let dfield = SpaceTimeField::constant("d", disc.levels(), disc.n(), 1.0);
    let ynl = solve_forward_semilinear(
        &disc,
        &tanh,
        &tanh,
        &dfield,
        (&zero_src, &zero_src),
        (&y10, &y20),
        ReactionScheme::SemiImplicit,
    )?;
    println!("with F(r) = 0.5 tanh(r):");
    println!(
        "  t = {:.3}  |y1| = {:.5e}  |y2| = {:.5e}",
        disc.time.horizon(),
        disc.grid.norm_l2(ynl.first.level(disc.steps())),
        disc.grid.norm_l2(ynl.second.level(disc.steps())),
    );
    Ok(())
}
