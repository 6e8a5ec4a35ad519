//! Nonlinear closure: freeze the reaction coefficients on the current
//! trajectory, run the linearized leader + follower solve, damp, repeat
//! until the trajectory is a fixed point (single-valued stand-in for the
//! set-valued fixed-point argument).

use crate::error::{Error, Result};
use crate::grid::{norm_l2_qt, Geometry, SpaceTimeField};
use crate::leader::{minimize_penalized, LeaderProblem, PenalizationConfig};
use crate::nash::{controls_from_adjoints, CostConfig};
use crate::pde::{
    solve_coupled_optimality, solve_forward_semilinear, CouplingMethod, Discretization, FieldPair,
    LinearizedCoefficients, Nonlinearity, ReactionScheme,
};

/// 16-point Gauss-Legendre rule on [0,1] (nodes of the [-1,1] rule
/// mapped affinely, weights halved).
const GL16_NODES: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_88,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_8,
    0.755_404_408_355_003,
    0.865_631_202_387_831_7,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];
const GL16_WEIGHTS: [f64; 8] = [
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_55,
    0.149_595_988_816_576_73,
    0.124_628_971_255_533_87,
    0.095_158_511_682_492_78,
    0.062_253_523_938_647_89,
    0.027_152_459_411_754_094,
];

/// Mean-value coefficient b(w) = int_0^1 F'(sigma w) d sigma by 16-point
/// Gauss-Legendre; satisfies b(w) w = F(w) for F(0) = 0.
pub fn mean_value_coefficient(nl: &Nonlinearity, w: f64) -> f64 {
    let mut acc = 0.0;
    for (x, q) in GL16_NODES.iter().zip(GL16_WEIGHTS) {
        let s_plus = 0.5 * (1.0 + x);
        let s_minus = 0.5 * (1.0 - x);
        acc += 0.5 * q * (nl.fp(s_plus * w) + nl.fp(s_minus * w));
    }
    acc
}

/// Freeze the linearization at the trajectory w:
/// b_i = int_0^1 F_i'(sigma w_i) d sigma (Gauss-Legendre), c_i = F_i'(w_i).
pub fn freeze_coefficients(
    disc: &Discretization,
    w: &FieldPair,
    f1: &Nonlinearity,
    f2: &Nonlinearity,
    d: &SpaceTimeField,
) -> Result<LinearizedCoefficients> {
    let (lv, n) = (disc.levels(), disc.n());
    let mut lin = LinearizedCoefficients {
        b1: SpaceTimeField::zeros("b1", lv, n),
        b2: SpaceTimeField::zeros("b2", lv, n),
        c1: SpaceTimeField::zeros("c1", lv, n),
        c2: SpaceTimeField::zeros("c2", lv, n),
        d: d.clone(),
    };
    for k in 0..lv {
        let (w1, w2) = (w.first.level(k), w.second.level(k));
        for j in 0..n {
            lin.b1.set(k, j, mean_value_coefficient(f1, w1[j]));
            lin.b2.set(k, j, mean_value_coefficient(f2, w2[j]));
            lin.c1.set(k, j, f1.fp(w1[j]));
            lin.c2.set(k, j, f2.fp(w2[j]));
        }
    }
    lin.check_finite()?;
    let m = f1.bound().max(f2.bound());
    for (name, field) in [
        ("b1", &lin.b1),
        ("b2", &lin.b2),
        ("c1", &lin.c1),
        ("c2", &lin.c2),
    ] {
        if field.max_abs() > m + 1e-12 {
            return Err(Error::Numeric(format!(
                "frozen coefficient {name} exceeds the Lipschitz bound {m}"
            )));
        }
    }
    Ok(lin)
}

#[derive(Debug, Clone, Copy)]
pub struct OuterConfig {
    pub max_iter: usize,
    /// Fixed-point tolerance on |w_{k+1} - w_k| in L^2(Q).
    pub tol: f64,
    pub damping: f64,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            max_iter: 30,
            tol: 1e-8,
            damping: 0.5,
        }
    }
}

pub struct OuterProblem<'a> {
    pub disc: &'a Discretization,
    pub geom: &'a Geometry,
    pub f1: &'a Nonlinearity,
    pub f2: &'a Nonlinearity,
    pub d: &'a SpaceTimeField,
    pub cost: &'a CostConfig,
    pub init: (&'a [f64], &'a [f64]),
    pub eps: f64,
    pub method: CouplingMethod,
}

#[derive(Debug, Clone)]
pub struct StackelbergReport {
    pub h: SpaceTimeField,
    pub v1: SpaceTimeField,
    pub v2: SpaceTimeField,
    pub trajectory: FieldPair,
    pub iterations: usize,
    pub converged: bool,
    pub change_history: Vec<f64>,
    pub terminal_norms: (f64, f64),
    /// Max-abs residual of the original semilinear state equations at the
    /// returned trajectory, controls included.
    pub nonlinear_residual: f64,
}

/// Outer Picard loop: w_0 is the uncontrolled semilinear trajectory;
/// each pass freezes coefficients at w, solves the penalized leader
/// problem, and damps the state update.
pub fn run_stackelberg_nash(
    prob: &OuterProblem,
    outer: &OuterConfig,
    start: Option<&FieldPair>,
) -> Result<StackelbergReport> {
    let disc = prob.disc;
    let zero_src = disc.zeros_field("zero");
    let mut w = match start {
        Some(w0) => w0.clone(),
        None => solve_forward_semilinear(
            disc,
            prob.f1,
            prob.f2,
            prob.d,
            (&zero_src, &zero_src),
            prob.init,
            ReactionScheme::SemiImplicit,
        )?,
    };
    let mut change_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut last: Option<(SpaceTimeField, [FieldPair; 2], FieldPair)> = None;

    for it in 0..outer.max_iter {
        let lin = freeze_coefficients(disc, &w, prob.f1, prob.f2, prob.d)?;
        let leader_prob = LeaderProblem {
            disc,
            geom: prob.geom,
            lin: &lin,
            cost: prob.cost,
            init: prob.init,
            method: prob.method,
        };
        let pen = PenalizationConfig::new(prob.eps)?;
        let res = minimize_penalized(&leader_prob, &pen)?;
        let sol = solve_coupled_optimality(
            disc,
            prob.geom,
            &lin,
            prob.cost,
            &res.h,
            prob.init,
            prob.method,
        )?;

        let mut w_next = w.clone();
        for (cur, new) in w_next.first.data_mut().iter_mut().zip(sol.y.first.data()) {
            *cur = (1.0 - outer.damping) * *cur + outer.damping * new;
        }
        for (cur, new) in w_next.second.data_mut().iter_mut().zip(sol.y.second.data()) {
            *cur = (1.0 - outer.damping) * *cur + outer.damping * new;
        }
        let mut diff1 = w_next.first.clone();
        diff1.axpy(-1.0, &w.first);
        let mut diff2 = w_next.second.clone();
        diff2.axpy(-1.0, &w.second);
        let change = (norm_l2_qt(&diff1, &disc.grid, &disc.time).powi(2)
            + norm_l2_qt(&diff2, &disc.grid, &disc.time).powi(2))
        .sqrt();
        change_history.push(change);
        last = Some((res.h, sol.p, sol.y));
        w = w_next;
        iterations = it + 1;
        if change < outer.tol {
            converged = true;
            break;
        }
    }

    let (h, p, y) = last.ok_or_else(|| Error::Iteration {
        message: "outer loop ran zero iterations".into(),
        history: change_history.clone(),
    })?;
    if !converged {
        return Err(Error::Iteration {
            message: format!(
                "outer fixed point did not reach tol {} in {} iterations",
                outer.tol, outer.max_iter
            ),
            history: change_history,
        });
    }
    let sol_for_controls = crate::pde::OptimalitySolution {
        y: y.clone(),
        p,
        iterations,
        change_history: vec![],
    };
    let (v1, v2) = controls_from_adjoints(disc, prob.geom, prob.cost, &sol_for_controls);
    let m = disc.steps();
    let terminal_norms = (
        disc.grid.norm_l2(y.first.level(m)),
        disc.grid.norm_l2(y.second.level(m)),
    );
    let nonlinear_residual = semilinear_state_residual(
        disc,
        prob.geom,
        prob.f1,
        prob.f2,
        prob.d,
        prob.cost,
        &h,
        &sol_for_controls,
        prob.init,
    );
    Ok(StackelbergReport {
        h,
        v1,
        v2,
        trajectory: y,
        iterations,
        converged,
        change_history,
        terminal_norms,
        nonlinear_residual,
    })
}

/// PDE-form residual (divided by dt) of the original semilinear state
/// system at a candidate solution, with the follower feedback sources.
pub fn semilinear_state_residual(
    disc: &Discretization,
    geom: &Geometry,
    f1: &Nonlinearity,
    f2: &Nonlinearity,
    d: &SpaceTimeField,
    cost: &CostConfig,
    h: &SpaceTimeField,
    sol: &crate::pde::OptimalitySolution,
    init: (&[f64], &[f64]),
) -> f64 {
    let (m, n, dt) = (disc.steps(), disc.n(), disc.dt());
    let mut worst = 0.0_f64;
    let mut lu = vec![0.0; n];
    for k in 0..m {
        let lvl = k + 1;
        let rho_inv = cost.rho.inv_sq[k];
        let dk = d.level(lvl);
        disc.op.apply(sol.y.first.level(lvl), &mut lu);
        for j in 0..n {
            let y_new = sol.y.first.get(lvl, j);
            let y_old = if k > 0 {
                sol.y.first.get(k, j)
            } else {
                init.0[j]
            };
            let mut r = (y_new - y_old) / dt + lu[j] + f1.f(y_new);
            if geom.omega.contains(j) {
                r -= h.get(lvl, j);
            }
            if geom.omega1.contains(j) {
                r += rho_inv / cost.mu[0] * sol.p[0].first.get(k, j);
            }
            if geom.omega2.contains(j) {
                r += rho_inv / cost.mu[1] * sol.p[1].first.get(k, j);
            }
            worst = worst.max(r.abs());
        }
        disc.op.apply(sol.y.second.level(lvl), &mut lu);
        for j in 0..n {
            let y_new = sol.y.second.get(lvl, j);
            let y_old = if k > 0 {
                sol.y.second.get(k, j)
            } else {
                init.1[j]
            };
            let r = (y_new - y_old) / dt + lu[j] + f2.f(y_new) + dk[j] * sol.y.first.get(lvl, j);
            worst = worst.max(r.abs());
        }
    }
    worst
}
