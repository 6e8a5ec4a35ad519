//! Follower game: the two tracking costs J_i, their exact discrete
//! adjoint gradients, the Nash (quasi-)equilibrium solve, second
//! variations and the empirical convexity threshold.
//!
//! Gradients follow the solver's level stagger: the control at level k
//! pairs with the adjoint at level k-1 and the penalty weight at time
//! midpoint k-1. With that pairing the returned gradient is the exact
//! gradient of the discrete cost, so central differences agree to
//! round-off for linear reaction terms.

use crate::carleman::RhoStarWeights;
use crate::error::{Error, Result};
use crate::grid::{Geometry, SpaceTimeField, SubdomainMask};
use crate::pde::{
    forward_with_controls, solve_backward, solve_coupled_optimality, solve_forward, CouplingMethod,
    Discretization, FieldPair, LinearizedCoefficients, Model, OptimalitySolution, PairCoeffs,
};
use crate::util::mix_seed;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Tracking targets of one follower.
#[derive(Debug, Clone)]
pub struct TargetPair {
    pub y1: SpaceTimeField,
    pub y2: SpaceTimeField,
}

impl TargetPair {
    pub fn zeros(disc: &Discretization) -> Self {
        Self {
            y1: disc.zeros_field("y1_d"),
            y2: disc.zeros_field("y2_d"),
        }
    }
}

/// Weights, targets and penalty profile of the two follower costs.
#[derive(Debug, Clone)]
pub struct CostConfig {
    pub alpha: [f64; 2],
    pub mu: [f64; 2],
    pub targets: [TargetPair; 2],
    pub rho: RhoStarWeights,
}

impl CostConfig {
    pub fn new(
        alpha: [f64; 2],
        mu: [f64; 2],
        targets: [TargetPair; 2],
        rho: RhoStarWeights,
    ) -> Result<Self> {
        if alpha.iter().any(|&a| !(a > 0.0)) || mu.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Config(format!(
                "cost weights must be positive: alpha={alpha:?}, mu={mu:?}"
            )));
        }
        Ok(Self {
            alpha,
            mu,
            targets,
            rho,
        })
    }

    pub fn zero_targets(
        disc: &Discretization,
        alpha: [f64; 2],
        mu: [f64; 2],
        rho: RhoStarWeights,
    ) -> Result<Self> {
        Self::new(
            alpha,
            mu,
            [TargetPair::zeros(disc), TargetPair::zeros(disc)],
            rho,
        )
    }

    /// Targets kappa(t) g(x) restricted to the observation region; the
    /// kappa factor makes the weighted integrability proxy finite by
    /// construction.
    pub fn kappa_targets(
        disc: &Discretization,
        omega_d: &SubdomainMask,
        kappa: &[f64],
        amplitude: f64,
        alpha: [f64; 2],
        mu: [f64; 2],
        rho: RhoStarWeights,
    ) -> Result<Self> {
        let shapes: [fn(f64) -> f64; 2] = [
            |x| (std::f64::consts::PI * x).sin(),
            |x| 4.0 * x * (1.0 - x),
        ];
        let mut targets = Vec::with_capacity(2);
        for shape in shapes {
            let mut t = TargetPair::zeros(disc);
            for k in 1..disc.levels() {
                let kap = kappa[k - 1];
                for &j in omega_d.indices() {
                    let g = amplitude * shape(disc.grid.node(j));
                    t.y1.set(k, j, kap * g);
                    t.y2.set(k, j, 0.5 * kap * g);
                }
            }
            targets.push(t);
        }
        let t2 = targets.pop().unwrap();
        let t1 = targets.pop().unwrap();
        Self::new(alpha, mu, [t1, t2], rho)
    }

    /// Quadrature proxy for the kappa^{-2}-weighted target integrability
    /// requirement; finite iff the targets are admissible.
    pub fn weighted_target_proxy(&self, disc: &Discretization, kappa: &[f64]) -> f64 {
        let dt = disc.dt();
        let w = disc.grid.weights();
        let mut acc = 0.0;
        for t in &self.targets {
            for k in 1..disc.levels() {
                let inv = 1.0 / (kappa[k - 1] * kappa[k - 1]);
                let (r1, r2) = (t.y1.level(k), t.y2.level(k));
                for j in 0..disc.n() {
                    acc += inv * (r1[j] * r1[j] + r2[j] * r2[j]) * w[j] * dt;
                }
            }
        }
        acc
    }
}

/// Space-time inner product restricted to a mask, levels 1..=m.
pub fn inner_qt_masked(
    u: &SpaceTimeField,
    v: &SpaceTimeField,
    mask: &SubdomainMask,
    disc: &Discretization,
) -> f64 {
    let dt = disc.dt();
    let w = disc.grid.weights();
    let mut acc = 0.0;
    for k in 1..u.levels() {
        let (a, b) = (u.level(k), v.level(k));
        for &j in mask.indices() {
            acc += a[j] * b[j] * w[j];
        }
    }
    acc * dt
}

pub fn norm_qt_masked(u: &SpaceTimeField, mask: &SubdomainMask, disc: &Discretization) -> f64 {
    inner_qt_masked(u, u, mask, disc).max(0.0).sqrt()
}

/// J_i = (alpha_i/2) int_{omega_d} |y - y_d^i|^2
///     + (mu_i/2) int_{omega_i} rho_*^2 |v^i|^2, state from the forward
/// solve with all three controls.
pub fn evaluate_j(
    player: usize,
    disc: &Discretization,
    geom: &Geometry,
    model: &Model,
    cost: &CostConfig,
    h: &SpaceTimeField,
    v1: &SpaceTimeField,
    v2: &SpaceTimeField,
    init: (&[f64], &[f64]),
) -> Result<f64> {
    let y = forward_with_controls(disc, geom, model, h, v1, v2, init)?;
    let dt = disc.dt();
    let w = disc.grid.weights();
    let t = &cost.targets[player];
    let mut tracking = 0.0;
    for k in 1..disc.levels() {
        let (y1, y2) = (y.first.level(k), y.second.level(k));
        let (t1, t2) = (t.y1.level(k), t.y2.level(k));
        for &j in geom.omega_d.indices() {
            let e1 = y1[j] - t1[j];
            let e2 = y2[j] - t2[j];
            tracking += (e1 * e1 + e2 * e2) * w[j];
        }
    }
    tracking *= dt;
    let v = if player == 0 { v1 } else { v2 };
    let mask = if player == 0 {
        &geom.omega1
    } else {
        &geom.omega2
    };
    let mut penalty = 0.0;
    for k in 1..disc.levels() {
        let row = v.level(k);
        let rho_sq = cost.rho.sq[k - 1];
        for &j in mask.indices() {
            penalty += rho_sq * row[j] * row[j] * w[j];
        }
    }
    penalty *= dt;
    Ok(0.5 * cost.alpha[player] * tracking + 0.5 * cost.mu[player] * penalty)
}

/// Riesz representative of D_i J_i on omega_{i,T}:
/// grad^k = mu_i rho_*^2(k-1/2) v^k + p_1^{i,k-1} restricted to omega_i,
/// with p^i the backward solve driven by the tracking misfit.
pub fn gradient_j(
    player: usize,
    disc: &Discretization,
    geom: &Geometry,
    lin: &LinearizedCoefficients,
    cost: &CostConfig,
    h: &SpaceTimeField,
    v1: &SpaceTimeField,
    v2: &SpaceTimeField,
    init: (&[f64], &[f64]),
) -> Result<SpaceTimeField> {
    let model = Model::Linear(lin);
    let y = forward_with_controls(disc, geom, &model, h, v1, v2, init)?;
    let p = tracking_adjoint(player, disc, geom, lin, cost, &y)?;
    let v = if player == 0 { v1 } else { v2 };
    let mask = if player == 0 {
        &geom.omega1
    } else {
        &geom.omega2
    };
    let mut grad = disc.zeros_field("grad_j");
    for k in 1..disc.levels() {
        let rho_sq = cost.rho.sq[k - 1];
        let vk = v.level(k);
        let p_prev = p.first.level(k - 1);
        let row = grad.level_mut(k);
        for &j in mask.indices() {
            row[j] = cost.mu[player] * rho_sq * vk[j] + p_prev[j];
        }
    }
    Ok(grad)
}

/// Backward solve of the follower adjoint driven by the tracking misfit
/// of the given state.
fn tracking_adjoint(
    player: usize,
    disc: &Discretization,
    geom: &Geometry,
    lin: &LinearizedCoefficients,
    cost: &CostConfig,
    y: &FieldPair,
) -> Result<FieldPair> {
    let mut g1 = disc.zeros_field("g1");
    let mut g2 = disc.zeros_field("g2");
    let alpha = cost.alpha[player];
    let t = &cost.targets[player];
    for k in 1..disc.levels() {
        let (y1, y2) = (y.first.level(k), y.second.level(k));
        let (t1, t2) = (t.y1.level(k), t.y2.level(k));
        let r1 = g1.level_mut(k);
        for &j in geom.omega_d.indices() {
            r1[j] = alpha * (y1[j] - t1[j]);
        }
        let r2 = g2.level_mut(k);
        for &j in geom.omega_d.indices() {
            r2[j] = alpha * (y2[j] - t2[j]);
        }
    }
    let zeros = vec![0.0; disc.n()];
    solve_backward(
        disc,
        PairCoeffs {
            diag1: &lin.c1,
            diag2: &lin.c2,
            d: &lin.d,
        },
        (&g1, &g2),
        (&zeros, &zeros),
    )
}

/// Computed equilibrium: controls, state, adjoints and diagnostics.
#[derive(Debug, Clone)]
pub struct NashSolution {
    pub v1: SpaceTimeField,
    pub v2: SpaceTimeField,
    pub y: FieldPair,
    pub p: [FieldPair; 2],
    /// Relative first-order residuals |mu_i rho^2 v_i + p_1^i| / |p_1^i|
    /// on omega_{i,T}, recomputed from scratch via [`gradient_j`].
    pub residuals: [f64; 2],
    /// Fitted constant of the bound |(v1, v2)| <= C (1 + |h|).
    pub v_bound_constant: f64,
    pub iterations: usize,
    /// Successive-change history of the coupled solve (empty for the
    /// monolithic path).
    pub change_history: Vec<f64>,
}

/// Extract the feedback controls v^i,k = -(1/mu_i) rho^{-2}(k-1/2)
/// p_1^{i,k-1} on omega_i from an optimality solution.
pub fn controls_from_adjoints(
    disc: &Discretization,
    geom: &Geometry,
    cost: &CostConfig,
    sol: &OptimalitySolution,
) -> (SpaceTimeField, SpaceTimeField) {
    let mut v1 = disc.zeros_field("v1");
    let mut v2 = disc.zeros_field("v2");
    for k in 1..disc.levels() {
        let rho_inv = cost.rho.inv_sq[k - 1];
        let p1 = sol.p[0].first.level(k - 1);
        let row = v1.level_mut(k);
        for &j in geom.omega1.indices() {
            row[j] = -rho_inv / cost.mu[0] * p1[j];
        }
        let p2 = sol.p[1].first.level(k - 1);
        let row = v2.level_mut(k);
        for &j in geom.omega2.indices() {
            row[j] = -rho_inv / cost.mu[1] * p2[j];
        }
    }
    (v1, v2)
}

/// Solve the follower equilibrium for a fixed leader control.
pub fn solve_nash(
    disc: &Discretization,
    geom: &Geometry,
    lin: &LinearizedCoefficients,
    cost: &CostConfig,
    h: &SpaceTimeField,
    init: (&[f64], &[f64]),
    method: CouplingMethod,
) -> Result<NashSolution> {
    let sol = solve_coupled_optimality(disc, geom, lin, cost, h, init, method)?;
    let (v1, v2) = controls_from_adjoints(disc, geom, cost, &sol);
    let mut residuals = [0.0; 2];
    for i in 0..2 {
        let grad = gradient_j(i, disc, geom, lin, cost, h, &v1, &v2, init)?;
        let mask = if i == 0 { &geom.omega1 } else { &geom.omega2 };
        let p_shift = shift_down(disc, &sol.p[i].first);
        let denom = norm_qt_masked(&p_shift, mask, disc).max(1e-300);
        residuals[i] = norm_qt_masked(&grad, mask, disc) / denom;
    }
    let v_norm = (norm_qt_masked(&v1, &geom.omega1, disc).powi(2)
        + norm_qt_masked(&v2, &geom.omega2, disc).powi(2))
    .sqrt();
    let h_norm = norm_qt_masked(h, &geom.omega, disc);
    let v_bound_constant = v_norm / (1.0 + h_norm);
    Ok(NashSolution {
        v1,
        v2,
        y: sol.y,
        iterations: sol.iterations,
        change_history: sol.change_history,
        p: sol.p,
        residuals,
        v_bound_constant,
    })
}

/// Realign an adjoint trajectory with the control levels: row k of the
/// result is level k-1 of the input.
fn shift_down(disc: &Discretization, p: &SpaceTimeField) -> SpaceTimeField {
    let mut out = disc.zeros_field("p_shift");
    for k in 1..disc.levels() {
        let src = p.level(k - 1).to_vec();
        out.level_mut(k).copy_from_slice(&src);
    }
    out
}

/// Second variation D_i^2 J_i (w, w) through the sensitivity pair
/// (forward from w) and the second-order adjoint pair (backward, with
/// the F'' correction terms evaluated at the equilibrium state).
pub fn second_variation(
    player: usize,
    disc: &Discretization,
    geom: &Geometry,
    lin: &LinearizedCoefficients,
    cost: &CostConfig,
    nash: &NashSolution,
    fpp: (&dyn Fn(f64) -> f64, &dyn Fn(f64) -> f64),
    w: &SpaceTimeField,
) -> Result<f64> {
    let mask = if player == 0 {
        &geom.omega1
    } else {
        &geom.omega2
    };
    let mut src1 = disc.zeros_field("w_src");
    let src2 = disc.zeros_field("zero");
    for k in 1..disc.levels() {
        let wk = w.level(k);
        let row = src1.level_mut(k);
        for &j in mask.indices() {
            row[j] = wk[j];
        }
    }
    let zeros = vec![0.0; disc.n()];
    let phi = solve_forward(
        disc,
        PairCoeffs {
            diag1: &lin.c1,
            diag2: &lin.c2,
            d: &lin.d,
        },
        (&src1, &src2),
        (&zeros, &zeros),
    )?;
    // eta sources: alpha_i phi chi_{omega_d} - F''(y) phi p^i
    let alpha = cost.alpha[player];
    let mut g1 = disc.zeros_field("g1");
    let mut g2 = disc.zeros_field("g2");
    for k in 1..disc.levels() {
        let (f1, f2) = (phi.first.level(k), phi.second.level(k));
        let (y1, y2) = (nash.y.first.level(k), nash.y.second.level(k));
        // p^i lives one level below the state it multiplies
        let p1 = nash.p[player].first.level(k - 1);
        let p2 = nash.p[player].second.level(k - 1);
        let r1 = g1.level_mut(k);
        for j in 0..disc.n() {
            let mut v = -fpp.0(y1[j]) * f1[j] * p1[j];
            if geom.omega_d.contains(j) {
                v += alpha * f1[j];
            }
            r1[j] = v;
        }
        let r2 = g2.level_mut(k);
        for j in 0..disc.n() {
            let mut v = -fpp.1(y2[j]) * f2[j] * p2[j];
            if geom.omega_d.contains(j) {
                v += alpha * f2[j];
            }
            r2[j] = v;
        }
    }
    let eta = solve_backward(
        disc,
        PairCoeffs {
            diag1: &lin.c1,
            diag2: &lin.c2,
            d: &lin.d,
        },
        (&g1, &g2),
        (&zeros, &zeros),
    )?;
    let eta_shift = shift_down(disc, &eta.first);
    let mut quad = inner_qt_masked(&eta_shift, w, mask, disc);
    // mu_i int rho^2 |w|^2 with the same midpoint weights as the cost
    let dt = disc.dt();
    let wq = disc.grid.weights();
    let mut pen = 0.0;
    for k in 1..disc.levels() {
        let rho_sq = cost.rho.sq[k - 1];
        let row = w.level(k);
        for &j in mask.indices() {
            pen += rho_sq * row[j] * row[j] * wq[j];
        }
    }
    quad += cost.mu[player] * pen * dt;
    Ok(quad)
}

#[derive(Debug, Clone)]
pub struct ConvexityEstimate {
    pub c_hat: f64,
    /// Per-sample normalized second variations D^2/|w|^2.
    pub samples: Vec<f64>,
}

/// Empirical convexity margin: over random unit directions w,
/// c_hat = max(mu_i - D^2 J_i(w,w)/|w|^2). All sampled second variations
/// then satisfy D^2 >= (mu_i - c_hat) |w|^2 by construction.
pub fn convexity_threshold(
    player: usize,
    disc: &Discretization,
    geom: &Geometry,
    lin: &LinearizedCoefficients,
    cost: &CostConfig,
    nash: &NashSolution,
    fpp: (&dyn Fn(f64) -> f64, &dyn Fn(f64) -> f64),
    trials: usize,
    base_seed: u64,
) -> Result<ConvexityEstimate> {
    let mask = if player == 0 {
        &geom.omega1
    } else {
        &geom.omega2
    };
    let mut c_hat = f64::NEG_INFINITY;
    let mut samples = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(base_seed, trial as u64));
        let w = random_direction(disc, mask, &mut rng);
        let norm_sq = inner_qt_masked(&w, &w, mask, disc);
        let d2 = second_variation(player, disc, geom, lin, cost, nash, fpp, &w)?;
        let normalized = d2 / norm_sq;
        samples.push(normalized);
        c_hat = c_hat.max(cost.mu[player] - normalized);
    }
    Ok(ConvexityEstimate { c_hat, samples })
}

/// Random direction supported on the mask, unit-normalized in the
/// masked space-time norm.
pub fn random_direction(
    disc: &Discretization,
    mask: &SubdomainMask,
    rng: &mut ChaCha8Rng,
) -> SpaceTimeField {
    let mut w = disc.zeros_field("w");
    for k in 1..disc.levels() {
        let row = w.level_mut(k);
        for &j in mask.indices() {
            row[j] = rng.gen_range(-1.0..1.0);
        }
    }
    let norm = norm_qt_masked(&w, mask, disc).max(1e-300);
    w.scale(1.0 / norm);
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SubdomainMask;
    use crate::pde::PicardOptions;

    pub(crate) fn small_setup(
        n: usize,
        m: usize,
        alpha: f64,
        mu: f64,
    ) -> (Discretization, Geometry, LinearizedCoefficients, CostConfig) {
        let disc = Discretization::new(n, 1.0, m, 1.0, alpha).unwrap();
        let geom = test_geometry(&disc);
        let lin = LinearizedCoefficients::constant(&disc, 0.0, 0.0, 0.0, 0.0, 1.0);
        let cost = CostConfig::zero_targets(
            &disc,
            [1.0, 1.0],
            [mu, mu],
            RhoStarWeights::unit(disc.steps()),
        )
        .unwrap();
        (disc, geom, lin, cost)
    }

    // The O-chain is irrelevant here and cannot nest on these coarse test
    // grids, so no full validation.
    pub(crate) fn test_geometry(disc: &Discretization) -> Geometry {
        let g = &disc.grid;
        Geometry {
            omega: SubdomainMask::from_interval(g, 0.2, 0.45),
            omega1: SubdomainMask::from_interval(g, 0.6, 0.7),
            omega2: SubdomainMask::from_interval(g, 0.75, 0.85),
            omega_d: SubdomainMask::from_interval(g, 0.3, 0.6),
            o0: SubdomainMask::from_interval(g, 0.355, 0.375),
            o1: SubdomainMask::from_interval(g, 0.35, 0.39),
            o2: SubdomainMask::from_interval(g, 0.34, 0.41),
            o3: SubdomainMask::from_interval(g, 0.32, 0.43),
            o_prime: SubdomainMask::from_interval(g, 0.355, 0.375),
        }
    }

    fn smooth_init(disc: &Discretization) -> (Vec<f64>, Vec<f64>) {
        let y10: Vec<f64> = disc
            .grid
            .nodes()
            .iter()
            .map(|&x| (std::f64::consts::PI * x).sin())
            .collect();
        let y20: Vec<f64> = disc.grid.nodes().iter().map(|&x| x * (1.0 - x)).collect();
        (y10, y20)
    }

    #[test]
    fn cost_zero_data_is_zero() {
        let (disc, geom, lin, cost) = small_setup(30, 20, 0.5, 100.0);
        let zeros = vec![0.0; disc.n()];
        let z = disc.zeros_field("z");
        let j = evaluate_j(
            0,
            &disc,
            &geom,
            &Model::Linear(&lin),
            &cost,
            &z,
            &z,
            &z,
            (&zeros, &zeros),
        )
        .unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn cost_tracking_nonnegative_and_penalty_quadratic() {
        let (disc, geom, lin, cost) = small_setup(30, 20, 0.5, 100.0);
        let (y10, y20) = smooth_init(&disc);
        let z = disc.zeros_field("z");
        let j = evaluate_j(
            0,
            &disc,
            &geom,
            &Model::Linear(&lin),
            &cost,
            &z,
            &z,
            &z,
            (&y10, &y20),
        )
        .unwrap();
        assert!(j >= 0.0);

        // zero initial data and targets: J is the pure penalty, exactly
        // quadratic in the control
        let zeros = vec![0.0; disc.n()];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_direction(&disc, &geom.omega1, &mut rng);
        let mut v2x = v.clone();
        v2x.scale(2.0);
        let j1 = evaluate_j(
            0,
            &disc,
            &geom,
            &Model::Linear(&lin),
            &cost,
            &z,
            &v,
            &z,
            (&zeros, &zeros),
        )
        .unwrap();
        let j2 = evaluate_j(
            0,
            &disc,
            &geom,
            &Model::Linear(&lin),
            &cost,
            &z,
            &v2x,
            &z,
            (&zeros, &zeros),
        )
        .unwrap();
        // the tracking part reacts to v too, so compare penalty-only runs
        // with the tracking weight turned off
        let mut cost0 = cost.clone();
        cost0.alpha = [1e-300, 1e-300];
        let p1 = evaluate_j(
            0,
            &disc,
            &geom,
            &Model::Linear(&lin),
            &cost0,
            &z,
            &v,
            &z,
            (&zeros, &zeros),
        )
        .unwrap();
        let p2 = evaluate_j(
            0,
            &disc,
            &geom,
            &Model::Linear(&lin),
            &cost0,
            &z,
            &v2x,
            &z,
            (&zeros, &zeros),
        )
        .unwrap();
        assert!((p2 - 4.0 * p1).abs() < 1e-12 * p2.abs());
        assert!(j2 > j1);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (disc, geom, lin, mut cost) = small_setup(28, 24, 0.5, 50.0);
        // nonzero targets make the test non-trivial
        let kappa = vec![1.0; disc.steps()];
        cost.targets = CostConfig::kappa_targets(
            &disc,
            &geom.omega_d,
            &kappa,
            0.8,
            cost.alpha,
            cost.mu,
            RhoStarWeights::unit(disc.steps()),
        )
        .unwrap()
        .targets;
        let (y10, y20) = smooth_init(&disc);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = random_direction(&disc, &geom.omega, &mut rng);
        for player in 0..2 {
            let mask = if player == 0 {
                &geom.omega1
            } else {
                &geom.omega2
            };
            let v1 = random_direction(&disc, &geom.omega1, &mut rng);
            let v2 = random_direction(&disc, &geom.omega2, &mut rng);
            let grad = gradient_j(
                player,
                &disc,
                &geom,
                &lin,
                &cost,
                &h,
                &v1,
                &v2,
                (&y10, &y20),
            )
            .unwrap();
            for _ in 0..10 {
                let w = random_direction(&disc, mask, &mut rng);
                let eps = 1e-5;
                let mut vp = if player == 0 { v1.clone() } else { v2.clone() };
                vp.axpy(eps, &w);
                let mut vm = if player == 0 { v1.clone() } else { v2.clone() };
                vm.axpy(-eps, &w);
                let (jp, jm) = if player == 0 {
                    (
                        evaluate_j(
                            0,
                            &disc,
                            &geom,
                            &Model::Linear(&lin),
                            &cost,
                            &h,
                            &vp,
                            &v2,
                            (&y10, &y20),
                        )
                        .unwrap(),
                        evaluate_j(
                            0,
                            &disc,
                            &geom,
                            &Model::Linear(&lin),
                            &cost,
                            &h,
                            &vm,
                            &v2,
                            (&y10, &y20),
                        )
                        .unwrap(),
                    )
                } else {
                    (
                        evaluate_j(
                            1,
                            &disc,
                            &geom,
                            &Model::Linear(&lin),
                            &cost,
                            &h,
                            &v1,
                            &vp,
                            (&y10, &y20),
                        )
                        .unwrap(),
                        evaluate_j(
                            1,
                            &disc,
                            &geom,
                            &Model::Linear(&lin),
                            &cost,
                            &h,
                            &v1,
                            &vm,
                            (&y10, &y20),
                        )
                        .unwrap(),
                    )
                };
                let fd = (jp - jm) / (2.0 * eps);
                let pairing = inner_qt_masked(&grad, &w, mask, &disc);
                assert!(
                    (fd - pairing).abs() <= 1e-5 * pairing.abs().max(1e-10),
                    "player {player}: fd {fd} vs pairing {pairing}"
                );
            }
        }
    }

    #[test]
    fn gradient_zero_everything() {
        let (disc, geom, lin, cost) = small_setup(24, 16, 0.5, 100.0);
        let zeros = vec![0.0; disc.n()];
        let z = disc.zeros_field("z");
        let g = gradient_j(0, &disc, &geom, &lin, &cost, &z, &z, &z, (&zeros, &zeros)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn nash_trivial_and_characterization() {
        let (disc, geom, lin, cost) = small_setup(30, 24, 0.5, 100.0);
        let zeros = vec![0.0; disc.n()];
        let z = disc.zeros_field("z");
        let sol = solve_nash(
            &disc,
            &geom,
            &lin,
            &cost,
            &z,
            (&zeros, &zeros),
            CouplingMethod::Picard(PicardOptions::default()),
        )
        .unwrap();
        assert_eq!(sol.v1.max_abs(), 0.0);
        assert_eq!(sol.v2.max_abs(), 0.0);

        // non-trivial data: residual of the characterization and the
        // gradient bound at the equilibrium
        let (y10, y20) = smooth_init(&disc);
        let sol = solve_nash(
            &disc,
            &geom,
            &lin,
            &cost,
            &z,
            (&y10, &y20),
            CouplingMethod::Picard(PicardOptions::default()),
        )
        .unwrap();
        assert!(
            sol.residuals[0] < 1e-6 && sol.residuals[1] < 1e-6,
            "{:?}",
            sol.residuals
        );
        for player in 0..2 {
            let grad = gradient_j(
                player,
                &disc,
                &geom,
                &lin,
                &cost,
                &z,
                &sol.v1,
                &sol.v2,
                (&y10, &y20),
            )
            .unwrap();
            let mask = if player == 0 {
                &geom.omega1
            } else {
                &geom.omega2
            };
            let v_norm = norm_qt_masked(if player == 0 { &sol.v1 } else { &sol.v2 }, mask, &disc);
            assert!(norm_qt_masked(&grad, mask, &disc) <= 1e-6 * (1.0 + v_norm));
        }
    }

    #[test]
    fn nash_property_spot_check() {
        let (disc, geom, lin, cost) = small_setup(26, 20, 0.5, 200.0);
        let (y10, y20) = smooth_init(&disc);
        let z = disc.zeros_field("z");
        let sol = solve_nash(
            &disc,
            &geom,
            &lin,
            &cost,
            &z,
            (&y10, &y20),
            CouplingMethod::Picard(PicardOptions::default()),
        )
        .unwrap();
        let j_star = evaluate_j(
            0,
            &disc,
            &geom,
            &Model::Linear(&lin),
            &cost,
            &z,
            &sol.v1,
            &sol.v2,
            (&y10, &y20),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let mut w = random_direction(&disc, &geom.omega1, &mut rng);
            w.scale(1e-3);
            let mut v_pert = sol.v1.clone();
            v_pert.axpy(1.0, &w);
            let j_pert = evaluate_j(
                0,
                &disc,
                &geom,
                &Model::Linear(&lin),
                &cost,
                &z,
                &v_pert,
                &sol.v2,
                (&y10, &y20),
            )
            .unwrap();
            assert!(
                j_pert >= j_star - 1e-8,
                "J perturbed {j_pert} < J* {j_star}"
            );
        }
    }

    #[test]
    fn nash_scales_linearly_with_data() {
        let (disc, geom, lin, cost) = small_setup(26, 20, 0.5, 100.0);
        let (y10, y20) = smooth_init(&disc);
        let z = disc.zeros_field("z");
        let opts = CouplingMethod::Picard(PicardOptions {
            tol: 1e-13,
            ..Default::default()
        });
        let sol1 = solve_nash(&disc, &geom, &lin, &cost, &z, (&y10, &y20), opts).unwrap();
        let c = 3.5;
        let y10c: Vec<f64> = y10.iter().map(|v| c * v).collect();
        let y20c: Vec<f64> = y20.iter().map(|v| c * v).collect();
        let sol2 = solve_nash(&disc, &geom, &lin, &cost, &z, (&y10c, &y20c), opts).unwrap();
        let mut diff = sol2.v1.clone();
        diff.axpy(-c, &sol1.v1);
        let rel = diff.max_abs() / sol2.v1.max_abs().max(1e-300);
        assert!(rel < 1e-8, "scaling defect {rel}");
    }

    #[test]
    fn second_variation_properties() {
        let (disc, geom, lin, cost) = small_setup(26, 20, 0.5, 80.0);
        let (y10, y20) = smooth_init(&disc);
        let z = disc.zeros_field("z");
        let sol = solve_nash(
            &disc,
            &geom,
            &lin,
            &cost,
            &z,
            (&y10, &y20),
            CouplingMethod::Picard(PicardOptions::default()),
        )
        .unwrap();
        let fpp: (&dyn Fn(f64) -> f64, &dyn Fn(f64) -> f64) = (&|_| 0.0, &|_| 0.0);
        let zero_w = disc.zeros_field("w");
        assert_eq!(
            second_variation(0, &disc, &geom, &lin, &cost, &sol, fpp, &zero_w).unwrap(),
            0.0
        );
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let w = random_direction(&disc, &geom.omega1, &mut rng);
        let u = random_direction(&disc, &geom.omega1, &mut rng);
        let d2 = |dir: &SpaceTimeField| {
            second_variation(0, &disc, &geom, &lin, &cost, &sol, fpp, dir).unwrap()
        };
        // homogeneity
        let mut w3 = w.clone();
        w3.scale(3.0);
        assert!((d2(&w3) - 9.0 * d2(&w)).abs() < 1e-10 * d2(&w3).abs().max(1.0));
        // parallelogram identity of the quadratic form
        let mut wu = w.clone();
        wu.axpy(1.0, &u);
        let mut wmu = w.clone();
        wmu.axpy(-1.0, &u);
        let lhs = d2(&wu) + d2(&wmu);
        let rhs = 2.0 * d2(&w) + 2.0 * d2(&u);
        assert!((lhs - rhs).abs() < 1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn second_variation_matches_gradient_differences() {
        let (disc, geom, lin, cost) = small_setup(26, 20, 0.5, 80.0);
        let (y10, y20) = smooth_init(&disc);
        let z = disc.zeros_field("z");
        let sol = solve_nash(
            &disc,
            &geom,
            &lin,
            &cost,
            &z,
            (&y10, &y20),
            CouplingMethod::Picard(PicardOptions::default()),
        )
        .unwrap();
        let fpp: (&dyn Fn(f64) -> f64, &dyn Fn(f64) -> f64) = (&|_| 0.0, &|_| 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let w = random_direction(&disc, &geom.omega1, &mut rng);
        let d2 = second_variation(0, &disc, &geom, &lin, &cost, &sol, fpp, &w).unwrap();
        let eps = 1e-5;
        let g0 = gradient_j(
            0,
            &disc,
            &geom,
            &lin,
            &cost,
            &z,
            &sol.v1,
            &sol.v2,
            (&y10, &y20),
        )
        .unwrap();
        let mut v_eps = sol.v1.clone();
        v_eps.axpy(eps, &w);
        let g1 = gradient_j(
            0,
            &disc,
            &geom,
            &lin,
            &cost,
            &z,
            &v_eps,
            &sol.v2,
            (&y10, &y20),
        )
        .unwrap();
        let mut dg = g1;
        dg.axpy(-1.0, &g0);
        dg.scale(1.0 / eps);
        let fd = inner_qt_masked(&dg, &w, &geom.omega1, &disc);
        assert!(
            (fd - d2).abs() < 1e-4 * d2.abs().max(1e-12),
            "fd {fd} vs d2 {d2}"
        );
    }

    #[test]
    fn convexity_linear_case_margin_zero() {
        let (disc, geom, lin, cost) = small_setup(24, 16, 0.5, 60.0);
        let zeros = vec![0.0; disc.n()];
        let z = disc.zeros_field("z");
        let sol = solve_nash(
            &disc,
            &geom,
            &lin,
            &cost,
            &z,
            (&zeros, &zeros),
            CouplingMethod::Picard(PicardOptions::default()),
        )
        .unwrap();
        let fpp: (&dyn Fn(f64) -> f64, &dyn Fn(f64) -> f64) = (&|_| 0.0, &|_| 0.0);
        let est = convexity_threshold(0, &disc, &geom, &lin, &cost, &sol, fpp, 10, 7).unwrap();
        assert!(est.c_hat <= 1e-8, "c_hat = {}", est.c_hat);
        // positivity: every sampled D^2 exceeds (mu - c_hat)|w|^2, and for
        // mu > 2 c_hat also mu/2 |w|^2
        for &s in &est.samples {
            assert!(s >= cost.mu[0] - est.c_hat - 1e-9);
            assert!(s > cost.mu[0] / 2.0);
        }
    }

    /// The equilibrium is unique: Picard routes with different damping
    /// and the monolithic factorization land on the same solution.
    #[test]
    fn nash_solution_unique_across_solver_paths() {
        let (disc, geom, lin, cost) = small_setup(26, 20, 0.5, 100.0);
        let (y10, y20) = smooth_init(&disc);
        let z = disc.zeros_field("z");
        let variants = [
            CouplingMethod::Picard(PicardOptions {
                damping: 0.3,
                ..Default::default()
            }),
            CouplingMethod::Picard(PicardOptions {
                damping: 0.7,
                ..Default::default()
            }),
            CouplingMethod::Monolithic,
        ];
        let sols: Vec<_> = variants
            .iter()
            .map(|m| solve_nash(&disc, &geom, &lin, &cost, &z, (&y10, &y20), *m).unwrap())
            .collect();
        let base = norm_qt_masked(&sols[0].v1, &geom.omega1, &disc).max(1e-300);
        for other in &sols[1..] {
            let mut diff = sols[0].v1.clone();
            diff.axpy(-1.0, &other.v1);
            let rel = norm_qt_masked(&diff, &geom.omega1, &disc) / base;
            assert!(rel < 1e-8, "solver paths disagree by {rel}");
        }
    }
}
