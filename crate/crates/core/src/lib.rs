//! Solvers for hierarchical control of a coupled degenerate parabolic
//! system on (0,1) x (0,T): a leader steering the pair toward rest at
//! the final time while two followers play a tracking game on their own
//! regions.
//!
//! The pieces, bottom up:
//! * [`grid`] — graded interior grids, masks, trapezoid quadrature and
//!   the flux-form assembly of u -> -(x^alpha u_x)_x;
//! * [`pde`] — implicit Euler forward/backward steppers that are exact
//!   discrete transposes of each other, plus Picard and monolithic
//!   banded solves of the coupled forward-backward systems;
//! * [`nash`] — follower costs, exact adjoint gradients, the Nash
//!   equilibrium characterization and second variations;
//! * [`leader`] — penalized null control by conjugate gradient and the
//!   epsilon sweep measuring the sqrt(eps) terminal decay;
//! * [`carleman`] — the singular weight family, the weighted energy
//!   functionals and the empirical inequality probes;
//! * [`outer`] — frozen-coefficient fixed point closing the loop for
//!   bounded C^2 reaction terms;
//! * [`config`] / [`experiment`] / [`artifact`] — TOML-configured,
//!   seed-deterministic experiment pipelines with CSV/JSON/SVG output.
//!
//! The `examples/` directory has one runnable walk-through per
//! capability; `stacknash` is the thin CLI over [`experiment`].

// Indexed loops over multiple aligned buffers and wide solver signatures
// are the norm in this kind of stencil code; `!(x > 0.0)` deliberately
// rejects NaN parameters.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod carleman;
pub mod config;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod leader;
pub mod linalg;
pub mod nash;
pub mod outer;
pub mod pde;
pub mod util;

pub use error::{Error, Result};
