//! Implicit-Euler time stepping for the coupled degenerate system, its
//! backward adjoints, and the forward-backward optimality / adjoint
//! two-point boundary systems (Picard and monolithic banded solves).
//!
//! Level conventions (used by every solver and every gradient):
//! * trajectories are stored on the m+1 levels t_k = k dt;
//! * forward step k -> k+1 solves (I + dt(L + diag(q^{k+1}))) u^{k+1}
//!   = u^k + dt f^{k+1}, so sources live on levels 1..=m;
//! * the backward solver is the exact transpose: with terminal data in
//!   level m it fills levels m-1..0 via
//!   (I + dt(L + diag(q^{k+1}))) p^k = p^{k+1} + dt g^{k+1};
//! * the coupling d y_1 sits in the second forward equation, hence d p_2
//!   sits in the first backward equation (solve p_2 first, then p_1);
//! * the resulting discrete duality identity, exact to round-off:
//!   <y^0, p^0> + dt sum_k <f^k, p^{k-1}> = <y^m, p^T> + dt sum_k <y^k, g^k>.
//!
//! The one-level stagger (control/source level k pairs with adjoint level
//! k-1, weight midpoint k-1) is not cosmetic: it is what makes the Nash
//! and leader gradients exact discrete gradients of the discrete costs.

use crate::error::{Error, Result};
use crate::grid::{
    assemble_degenerate_operator, DegeneracyCoefficient, DegenerateOperator, Geometry, SpaceGrid,
    SpaceTimeField, TimeGrid,
};
use crate::linalg::{thomas_solve, BandedMatrix};
use crate::nash::CostConfig;

/// Space/time grids plus the assembled diffusion operator.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub grid: SpaceGrid,
    pub time: TimeGrid,
    pub a: DegeneracyCoefficient,
    pub op: DegenerateOperator,
    step_sub: Vec<f64>,
    step_sup: Vec<f64>,
}

impl Discretization {
    pub fn new(n: usize, grading: f64, steps: usize, horizon: f64, alpha: f64) -> Result<Self> {
        let grid = SpaceGrid::build(n, grading)?;
        let time = TimeGrid::new(horizon, steps)?;
        let a = DegeneracyCoefficient::new(alpha)?;
        let op = assemble_degenerate_operator(&a, &grid);
        let dt = time.dt();
        let step_sub = op.sub.iter().map(|v| dt * v).collect();
        let step_sup = op.sup.iter().map(|v| dt * v).collect();
        Ok(Self {
            grid,
            time,
            a,
            op,
            step_sub,
            step_sup,
        })
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn steps(&self) -> usize {
        self.time.steps()
    }

    pub fn levels(&self) -> usize {
        self.time.levels()
    }

    pub fn dt(&self) -> f64 {
        self.time.dt()
    }

    pub fn zeros_field(&self, name: &str) -> SpaceTimeField {
        SpaceTimeField::zeros(name, self.levels(), self.n())
    }

    /// One implicit step: solve (I + dt(L + diag(coeff))) out = rhs.
    fn implicit_step(&self, coeff: &[f64], rhs: &mut [f64]) -> Result<()> {
        let n = self.n();
        let dt = self.dt();
        let mut diag = vec![0.0; n];
        for j in 0..n {
            diag[j] = 1.0 + dt * (self.op.diag[j] + coeff[j]);
        }
        thomas_solve(&self.step_sub, &diag, &self.step_sup, rhs)
    }
}

/// Frozen potentials of one linearization: b_i for the state equations,
/// c_i for the adjoint equations, d the cascade coupling. All sampled on
/// the state levels (level 0 unused).
#[derive(Debug, Clone)]
pub struct LinearizedCoefficients {
    pub b1: SpaceTimeField,
    pub b2: SpaceTimeField,
    pub c1: SpaceTimeField,
    pub c2: SpaceTimeField,
    pub d: SpaceTimeField,
}

impl LinearizedCoefficients {
    pub fn constant(disc: &Discretization, b1: f64, b2: f64, c1: f64, c2: f64, d: f64) -> Self {
        let (lv, n) = (disc.levels(), disc.n());
        Self {
            b1: SpaceTimeField::constant("b1", lv, n, b1),
            b2: SpaceTimeField::constant("b2", lv, n, b2),
            c1: SpaceTimeField::constant("c1", lv, n, c1),
            c2: SpaceTimeField::constant("c2", lv, n, c2),
            d: SpaceTimeField::constant("d", lv, n, d),
        }
    }

    pub fn sup_norms(&self) -> [f64; 5] {
        [
            self.b1.max_abs(),
            self.b2.max_abs(),
            self.c1.max_abs(),
            self.c2.max_abs(),
            self.d.max_abs(),
        ]
    }

    pub fn check_finite(&self) -> Result<()> {
        self.b1.check_finite()?;
        self.b2.check_finite()?;
        self.c1.check_finite()?;
        self.c2.check_finite()?;
        self.d.check_finite()
    }

    /// Verify d >= d0 > 0 on the given mask (observability hypothesis).
    pub fn coupling_bounded_below(&self, mask: &crate::grid::SubdomainMask, d0: f64) -> bool {
        (1..self.d.levels()).all(|k| {
            let row = self.d.level(k);
            mask.indices().iter().all(|&j| row[j] >= d0)
        })
    }
}

/// C^2 reaction term with F(0) = 0 and bounded first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nonlinearity {
    Zero,
    Linear {
        slope: f64,
    },
    /// F(r) = m tanh(r); |F'| <= m, |F''| <= 0.77 m.
    Tanh {
        m: f64,
    },
}

impl Nonlinearity {
    pub fn f(&self, r: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Linear { slope } => slope * r,
            Nonlinearity::Tanh { m } => m * r.tanh(),
        }
    }

    pub fn fp(&self, r: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Linear { slope } => *slope,
            Nonlinearity::Tanh { m } => {
                let c = r.cosh();
                m / (c * c)
            }
        }
    }

    pub fn fpp(&self, r: f64) -> f64 {
        match self {
            Nonlinearity::Zero | Nonlinearity::Linear { .. } => 0.0,
            Nonlinearity::Tanh { m } => {
                let t = r.tanh();
                let c = r.cosh();
                -2.0 * m * t / (c * c)
            }
        }
    }

    /// Common bound M for |F'| and |F''|.
    pub fn bound(&self) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Linear { slope } => slope.abs(),
            Nonlinearity::Tanh { m } => m.abs(),
        }
    }
}

/// A two-component trajectory (state pair, adjoint pair, ...).
#[derive(Debug, Clone)]
pub struct FieldPair {
    pub first: SpaceTimeField,
    pub second: SpaceTimeField,
}

impl FieldPair {
    pub fn zeros(disc: &Discretization, n1: &str, n2: &str) -> Self {
        Self {
            first: disc.zeros_field(n1),
            second: disc.zeros_field(n2),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        self.first.check_finite()?;
        self.second.check_finite()
    }

    pub fn max_abs_diff(&self, other: &FieldPair) -> f64 {
        let mut m = 0.0_f64;
        for (a, b) in self.first.data().iter().zip(other.first.data()) {
            m = m.max((a - b).abs());
        }
        for (a, b) in self.second.data().iter().zip(other.second.data()) {
            m = m.max((a - b).abs());
        }
        m
    }
}

/// Diagonal coefficient pair and coupling for one linear pair solve.
pub struct PairCoeffs<'a> {
    pub diag1: &'a SpaceTimeField,
    pub diag2: &'a SpaceTimeField,
    pub d: &'a SpaceTimeField,
}

/// Forward coupled solve; coupling d u_1 acts on the second component
/// (block lower-triangular: first component solved first per step).
pub fn solve_forward(
    disc: &Discretization,
    coeffs: PairCoeffs,
    sources: (&SpaceTimeField, &SpaceTimeField),
    init: (&[f64], &[f64]),
) -> Result<FieldPair> {
    let (m, n, dt) = (disc.steps(), disc.n(), disc.dt());
    sources.0.assert_shape(m + 1, n)?;
    sources.1.assert_shape(m + 1, n)?;
    let mut out = FieldPair::zeros(disc, "y1", "y2");
    out.first.level_mut(0).copy_from_slice(init.0);
    out.second.level_mut(0).copy_from_slice(init.1);
    let mut rhs = vec![0.0; n];
    for k in 0..m {
        let f1 = sources.0.level(k + 1);
        {
            let prev = out.first.level(k).to_vec();
            for j in 0..n {
                rhs[j] = prev[j] + dt * f1[j];
            }
            disc.implicit_step(coeffs.diag1.level(k + 1), &mut rhs)?;
            out.first.level_mut(k + 1).copy_from_slice(&rhs);
        }
        let f2 = sources.1.level(k + 1);
        let dk = coeffs.d.level(k + 1);
        {
            let y1_new = out.first.level(k + 1).to_vec();
            let prev = out.second.level(k).to_vec();
            for j in 0..n {
                rhs[j] = prev[j] + dt * (f2[j] - dk[j] * y1_new[j]);
            }
            disc.implicit_step(coeffs.diag2.level(k + 1), &mut rhs)?;
            out.second.level_mut(k + 1).copy_from_slice(&rhs);
        }
    }
    out.check_finite()?;
    Ok(out)
}

/// Backward coupled solve, the exact transpose of [`solve_forward`]:
/// terminal data in level m, coupling d p_2 acts on the first component
/// (solve p_2 first, then p_1).
pub fn solve_backward(
    disc: &Discretization,
    coeffs: PairCoeffs,
    sources: (&SpaceTimeField, &SpaceTimeField),
    terminal: (&[f64], &[f64]),
) -> Result<FieldPair> {
    let (m, n, dt) = (disc.steps(), disc.n(), disc.dt());
    sources.0.assert_shape(m + 1, n)?;
    sources.1.assert_shape(m + 1, n)?;
    let mut out = FieldPair::zeros(disc, "p1", "p2");
    out.first.level_mut(m).copy_from_slice(terminal.0);
    out.second.level_mut(m).copy_from_slice(terminal.1);
    let mut rhs = vec![0.0; n];
    for k in (0..m).rev() {
        let g2 = sources.1.level(k + 1);
        {
            let next = out.second.level(k + 1).to_vec();
            for j in 0..n {
                rhs[j] = next[j] + dt * g2[j];
            }
            disc.implicit_step(coeffs.diag2.level(k + 1), &mut rhs)?;
            out.second.level_mut(k + 1 - 1).copy_from_slice(&rhs);
        }
        let g1 = sources.0.level(k + 1);
        let dk = coeffs.d.level(k + 1);
        {
            let p2_new = out.second.level(k).to_vec();
            let next = out.first.level(k + 1).to_vec();
            for j in 0..n {
                rhs[j] = next[j] + dt * (g1[j] - dk[j] * p2_new[j]);
            }
            disc.implicit_step(coeffs.diag1.level(k + 1), &mut rhs)?;
            out.first.level_mut(k).copy_from_slice(&rhs);
        }
    }
    out.check_finite()?;
    Ok(out)
}

/// Semi-implicit (frozen F at the previous level) or Newton treatment of
/// the reaction terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ReactionScheme {
    #[default]
    SemiImplicit,
    Newton {
        tol: f64,
        max_iter: usize,
    },
}

/// Forward solve of the semilinear system
///   y1_t - (a y1_x)_x + F1(y1) = f1,  y2_t - (a y2_x)_x + F2(y2) + d y1 = f2.
pub fn solve_forward_semilinear(
    disc: &Discretization,
    f1_nl: &Nonlinearity,
    f2_nl: &Nonlinearity,
    d: &SpaceTimeField,
    sources: (&SpaceTimeField, &SpaceTimeField),
    init: (&[f64], &[f64]),
    scheme: ReactionScheme,
) -> Result<FieldPair> {
    let (m, n, dt) = (disc.steps(), disc.n(), disc.dt());
    let mut out = FieldPair::zeros(disc, "y1", "y2");
    out.first.level_mut(0).copy_from_slice(init.0);
    out.second.level_mut(0).copy_from_slice(init.1);
    let zero_coeff = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for k in 0..m {
        let f1 = sources.0.level(k + 1);
        let prev1 = out.first.level(k).to_vec();
        match scheme {
            ReactionScheme::SemiImplicit => {
                for j in 0..n {
                    rhs[j] = prev1[j] + dt * (f1[j] - f1_nl.f(prev1[j]));
                }
                disc.implicit_step(&zero_coeff, &mut rhs)?;
            }
            ReactionScheme::Newton { tol, max_iter } => {
                newton_step(disc, f1_nl, &prev1, f1, &mut rhs, tol, max_iter)?;
            }
        }
        out.first.level_mut(k + 1).copy_from_slice(&rhs);

        let f2 = sources.1.level(k + 1);
        let dk = d.level(k + 1);
        let y1_new = out.first.level(k + 1).to_vec();
        let prev2 = out.second.level(k).to_vec();
        match scheme {
            ReactionScheme::SemiImplicit => {
                for j in 0..n {
                    rhs[j] = prev2[j] + dt * (f2[j] - f2_nl.f(prev2[j]) - dk[j] * y1_new[j]);
                }
                disc.implicit_step(&zero_coeff, &mut rhs)?;
            }
            ReactionScheme::Newton { tol, max_iter } => {
                let eff: Vec<f64> = (0..n).map(|j| f2[j] - dk[j] * y1_new[j]).collect();
                newton_step(disc, f2_nl, &prev2, &eff, &mut rhs, tol, max_iter)?;
            }
        }
        out.second.level_mut(k + 1).copy_from_slice(&rhs);
    }
    out.check_finite()?;
    Ok(out)
}

/// Solve u + dt(L u + F(u)) = prev + dt f by Newton with a tridiagonal
/// Jacobian; `out` receives the solution.
fn newton_step(
    disc: &Discretization,
    nl: &Nonlinearity,
    prev: &[f64],
    f: &[f64],
    out: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<()> {
    let (n, dt) = (disc.n(), disc.dt());
    let mut u = prev.to_vec();
    let mut lu = vec![0.0; n];
    for it in 0..max_iter {
        disc.op.apply(&u, &mut lu);
        let mut res_norm = 0.0_f64;
        let mut rhs = vec![0.0; n];
        for j in 0..n {
            let r = u[j] + dt * (lu[j] + nl.f(u[j])) - prev[j] - dt * f[j];
            rhs[j] = -r;
            res_norm = res_norm.max(r.abs());
        }
        if res_norm < tol {
            out.copy_from_slice(&u);
            return Ok(());
        }
        let coeff: Vec<f64> = u.iter().map(|&v| nl.fp(v)).collect();
        disc.implicit_step(&coeff, &mut rhs)?;
        for j in 0..n {
            u[j] += rhs[j];
        }
        if it == max_iter - 1 {
            return Err(Error::Iteration {
                message: format!("Newton step stalled at residual {res_norm}"),
                history: vec![res_norm],
            });
        }
    }
    unreachable!()
}

/// State dynamics selector for the convenience control-driven forward map.
pub enum Model<'a> {
    Linear(&'a LinearizedCoefficients),
    Semilinear {
        f1: &'a Nonlinearity,
        f2: &'a Nonlinearity,
        d: &'a SpaceTimeField,
        scheme: ReactionScheme,
    },
}

/// Forward solve driven by the three controls, each masked to its region:
/// f1 = h chi_omega + v1 chi_omega1 + v2 chi_omega2, f2 = 0.
pub fn forward_with_controls(
    disc: &Discretization,
    geom: &Geometry,
    model: &Model,
    h: &SpaceTimeField,
    v1: &SpaceTimeField,
    v2: &SpaceTimeField,
    init: (&[f64], &[f64]),
) -> Result<FieldPair> {
    let mut f1 = disc.zeros_field("f1");
    let f2 = disc.zeros_field("f2");
    for k in 1..disc.levels() {
        let row = f1.level_mut(k);
        let hk = h.level(k);
        let v1k = v1.level(k);
        let v2k = v2.level(k);
        for &j in geom.omega.indices() {
            row[j] += hk[j];
        }
        for &j in geom.omega1.indices() {
            row[j] += v1k[j];
        }
        for &j in geom.omega2.indices() {
            row[j] += v2k[j];
        }
    }
    match model {
        Model::Linear(lin) => solve_forward(
            disc,
            PairCoeffs {
                diag1: &lin.b1,
                diag2: &lin.b2,
                d: &lin.d,
            },
            (&f1, &f2),
            init,
        ),
        Model::Semilinear {
            f1: n1,
            f2: n2,
            d,
            scheme,
        } => solve_forward_semilinear(disc, n1, n2, d, (&f1, &f2), init, *scheme),
    }
}

/// Options for the alternating forward/backward fixed-point solve. The
/// successive-change tolerance is measured against max(1, field scale):
/// terminal data of size 1/eps would otherwise push the stopping test
/// below machine precision.
#[derive(Debug, Clone, Copy)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 500,
            damping: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum CouplingMethod {
    Monolithic,
    Picard(PicardOptions),
}

/// Solution of the follower optimality system.
#[derive(Debug, Clone)]
pub struct OptimalitySolution {
    pub y: FieldPair,
    /// p[i] solves the backward system of follower i+1.
    pub p: [FieldPair; 2],
    pub iterations: usize,
    pub change_history: Vec<f64>,
}

fn forward_sources_from_adjoints(
    disc: &Discretization,
    geom: &Geometry,
    cost: &CostConfig,
    h: &SpaceTimeField,
    p: &[FieldPair; 2],
) -> SpaceTimeField {
    let mut f1 = disc.zeros_field("f1");
    for k in 1..disc.levels() {
        let rho_inv = cost.rho.inv_sq[k - 1];
        let hk = h.level(k);
        let row = f1.level_mut(k);
        for &j in geom.omega.indices() {
            row[j] += hk[j];
        }
        for (i, pi) in p.iter().enumerate() {
            let mask = if i == 0 { &geom.omega1 } else { &geom.omega2 };
            let p1_prev = pi.first.level(k - 1);
            for &j in mask.indices() {
                row[j] -= rho_inv / cost.mu[i] * p1_prev[j];
            }
        }
    }
    f1
}

fn adjoint_sources_from_state(
    disc: &Discretization,
    geom: &Geometry,
    cost: &CostConfig,
    y: &FieldPair,
    player: usize,
) -> (SpaceTimeField, SpaceTimeField) {
    let mut g1 = disc.zeros_field("g1");
    let mut g2 = disc.zeros_field("g2");
    let alpha = cost.alpha[player];
    let t = &cost.targets[player];
    for k in 1..disc.levels() {
        let y1 = y.first.level(k);
        let y2 = y.second.level(k);
        let t1 = t.y1.level(k);
        let t2 = t.y2.level(k);
        let r1 = g1.level_mut(k);
        for &j in geom.omega_d.indices() {
            r1[j] = alpha * (y1[j] - t1[j]);
        }
        let r2 = g2.level_mut(k);
        for &j in geom.omega_d.indices() {
            r2[j] = alpha * (y2[j] - t2[j]);
        }
    }
    (g1, g2)
}

/// Solve the coupled forward-backward optimality system for a given
/// leader control h (levels 1..=m, masked to omega).
pub fn solve_coupled_optimality(
    disc: &Discretization,
    geom: &Geometry,
    lin: &LinearizedCoefficients,
    cost: &CostConfig,
    h: &SpaceTimeField,
    init: (&[f64], &[f64]),
    method: CouplingMethod,
) -> Result<OptimalitySolution> {
    match method {
        CouplingMethod::Picard(opts) => optimality_picard(disc, geom, lin, cost, h, init, opts),
        CouplingMethod::Monolithic => optimality_monolithic(disc, geom, lin, cost, h, init),
    }
}

fn optimality_picard(
    disc: &Discretization,
    geom: &Geometry,
    lin: &LinearizedCoefficients,
    cost: &CostConfig,
    h: &SpaceTimeField,
    init: (&[f64], &[f64]),
    opts: PicardOptions,
) -> Result<OptimalitySolution> {
    let mut p = [
        FieldPair::zeros(disc, "p1_1", "p2_1"),
        FieldPair::zeros(disc, "p1_2", "p2_2"),
    ];
    let mut history = Vec::new();
    let zero = disc.zeros_field("zero");
    for it in 0..opts.max_iter {
        let f1 = forward_sources_from_adjoints(disc, geom, cost, h, &p);
        let y = solve_forward(
            disc,
            PairCoeffs {
                diag1: &lin.b1,
                diag2: &lin.b2,
                d: &lin.d,
            },
            (&f1, &zero),
            init,
        )?;
        let mut p_hat = Vec::with_capacity(2);
        for i in 0..2 {
            let (g1, g2) = adjoint_sources_from_state(disc, geom, cost, &y, i);
            let zeros = vec![0.0; disc.n()];
            p_hat.push(solve_backward(
                disc,
                PairCoeffs {
                    diag1: &lin.c1,
                    diag2: &lin.c2,
                    d: &lin.d,
                },
                (&g1, &g2),
                (&zeros, &zeros),
            )?);
        }
        let change = p[0]
            .max_abs_diff(&p_hat[0])
            .max(p[1].max_abs_diff(&p_hat[1]));
        history.push(change);
        let scale = p_hat[0]
            .first
            .max_abs()
            .max(p_hat[1].first.max_abs())
            .max(p_hat[0].second.max_abs())
            .max(p_hat[1].second.max_abs())
            .max(1.0);
        if change < opts.tol * scale {
            let p_hat1 = p_hat.pop().unwrap();
            let p_hat0 = p_hat.pop().unwrap();
            return Ok(OptimalitySolution {
                y,
                p: [p_hat0, p_hat1],
                iterations: it + 1,
                change_history: history,
            });
        }
        for i in 0..2 {
            for (cur, new) in p[i].first.data_mut().iter_mut().zip(p_hat[i].first.data()) {
                *cur = (1.0 - opts.damping) * *cur + opts.damping * new;
            }
            for (cur, new) in p[i]
                .second
                .data_mut()
                .iter_mut()
                .zip(p_hat[i].second.data())
            {
                *cur = (1.0 - opts.damping) * *cur + opts.damping * new;
            }
        }
    }
    Err(Error::Iteration {
        message: format!(
            "optimality Picard did not reach tol {} in {} iterations",
            opts.tol, opts.max_iter
        ),
        history,
    })
}

/// Unknown packing for the monolithic systems: step k in 0..m, node j,
/// field f in 0..6 -> 6 (k n + j) + f.
#[inline]
fn pack(n: usize, k: usize, j: usize, f: usize) -> usize {
    6 * (k * n + j) + f
}

/// Add the tridiagonal implicit block I + dt(L + diag(coeff^{level})) at
/// block position (row field, col field) of step k.
fn add_implicit_block(
    mat: &mut BandedMatrix,
    disc: &Discretization,
    k: usize,
    field: usize,
    coeff: &[f64],
) {
    let n = disc.n();
    let dt = disc.dt();
    for j in 0..n {
        let r = pack(n, k, j, field);
        mat.add(r, r, 1.0 + dt * (disc.op.diag[j] + coeff[j]));
        if j > 0 {
            mat.add(r, pack(n, k, j - 1, field), dt * disc.op.sub[j - 1]);
        }
        if j + 1 < n {
            mat.add(r, pack(n, k, j + 1, field), dt * disc.op.sup[j]);
        }
    }
}

fn optimality_monolithic(
    disc: &Discretization,
    geom: &Geometry,
    lin: &LinearizedCoefficients,
    cost: &CostConfig,
    h: &SpaceTimeField,
    init: (&[f64], &[f64]),
) -> Result<OptimalitySolution> {
    let (m, n, dt) = (disc.steps(), disc.n(), disc.dt());
    let total = 6 * n * m;
    if total > 400_000 {
        return Err(Error::Solver(format!(
            "monolithic system has {total} unknowns, above the desk-scale cap; use Picard"
        )));
    }
    let band = 6 * n + 5;
    let mut mat = BandedMatrix::zeros(total, band, band);
    let mut rhs = vec![0.0; total];

    for k in 0..m {
        let lvl = k + 1;
        let rho_inv = cost.rho.inv_sq[k];
        let dk = lin.d.level(lvl);
        // y1 equation (field 0)
        add_implicit_block(&mut mat, disc, k, 0, lin.b1.level(lvl));
        for j in 0..n {
            let r = pack(n, k, j, 0);
            if geom.omega1.contains(j) {
                mat.add(r, pack(n, k, j, 2), dt * rho_inv / cost.mu[0]);
            }
            if geom.omega2.contains(j) {
                mat.add(r, pack(n, k, j, 4), dt * rho_inv / cost.mu[1]);
            }
            if k > 0 {
                mat.add(r, pack(n, k - 1, j, 0), -1.0);
            } else {
                rhs[r] += init.0[j];
            }
            if geom.omega.contains(j) {
                rhs[r] += dt * h.get(lvl, j);
            }
        }
        // y2 equation (field 1)
        add_implicit_block(&mut mat, disc, k, 1, lin.b2.level(lvl));
        for j in 0..n {
            let r = pack(n, k, j, 1);
            mat.add(r, pack(n, k, j, 0), dt * dk[j]);
            if k > 0 {
                mat.add(r, pack(n, k - 1, j, 1), -1.0);
            } else {
                rhs[r] += init.1[j];
            }
        }
        // adjoint equations per player: fields (2,3) and (4,5)
        for i in 0..2 {
            let (fp1, fp2) = (2 + 2 * i, 3 + 2 * i);
            let alpha = cost.alpha[i];
            let t = &cost.targets[i];
            add_implicit_block(&mut mat, disc, k, fp1, lin.c1.level(lvl));
            add_implicit_block(&mut mat, disc, k, fp2, lin.c2.level(lvl));
            for j in 0..n {
                let r1 = pack(n, k, j, fp1);
                mat.add(r1, pack(n, k, j, fp2), dt * dk[j]);
                if k + 1 < m {
                    mat.add(r1, pack(n, k + 1, j, fp1), -1.0);
                }
                let r2 = pack(n, k, j, fp2);
                if k + 1 < m {
                    mat.add(r2, pack(n, k + 1, j, fp2), -1.0);
                }
                if geom.omega_d.contains(j) {
                    mat.add(r1, pack(n, k, j, 0), -dt * alpha);
                    mat.add(r2, pack(n, k, j, 1), -dt * alpha);
                    rhs[r1] -= dt * alpha * t.y1.get(lvl, j);
                    rhs[r2] -= dt * alpha * t.y2.get(lvl, j);
                }
            }
        }
    }

    mat.factor()?;
    mat.solve(&mut rhs)?;

    let mut y = FieldPair::zeros(disc, "y1", "y2");
    y.first.level_mut(0).copy_from_slice(init.0);
    y.second.level_mut(0).copy_from_slice(init.1);
    let mut p = [
        FieldPair::zeros(disc, "p1_1", "p2_1"),
        FieldPair::zeros(disc, "p1_2", "p2_2"),
    ];
    for k in 0..m {
        for j in 0..n {
            y.first.set(k + 1, j, rhs[pack(n, k, j, 0)]);
            y.second.set(k + 1, j, rhs[pack(n, k, j, 1)]);
            p[0].first.set(k, j, rhs[pack(n, k, j, 2)]);
            p[0].second.set(k, j, rhs[pack(n, k, j, 3)]);
            p[1].first.set(k, j, rhs[pack(n, k, j, 4)]);
            p[1].second.set(k, j, rhs[pack(n, k, j, 5)]);
        }
    }
    y.check_finite()?;
    p[0].check_finite()?;
    p[1].check_finite()?;
    Ok(OptimalitySolution {
        y,
        p,
        iterations: 1,
        change_history: vec![],
    })
}

/// Max-abs residual of all six discrete equations of the optimality
/// system at a candidate solution. Independent of the assembly path.
pub fn optimality_residual(
    disc: &Discretization,
    geom: &Geometry,
    lin: &LinearizedCoefficients,
    cost: &CostConfig,
    h: &SpaceTimeField,
    init: (&[f64], &[f64]),
    sol: &OptimalitySolution,
) -> f64 {
    let (m, n, dt) = (disc.steps(), disc.n(), disc.dt());
    let mut worst = 0.0_f64;
    let mut lu = vec![0.0; n];
    for k in 0..m {
        let lvl = k + 1;
        let rho_inv = cost.rho.inv_sq[k];
        let dk = lin.d.level(lvl);
        // y1
        disc.op.apply(sol.y.first.level(lvl), &mut lu);
        for j in 0..n {
            let mut r = sol.y.first.get(lvl, j)
                - if k > 0 {
                    sol.y.first.get(k, j)
                } else {
                    init.0[j]
                }
                + dt * (lu[j] + lin.b1.get(lvl, j) * sol.y.first.get(lvl, j));
            if geom.omega.contains(j) {
                r -= dt * h.get(lvl, j);
            }
            if geom.omega1.contains(j) {
                r += dt * rho_inv / cost.mu[0] * sol.p[0].first.get(k, j);
            }
            if geom.omega2.contains(j) {
                r += dt * rho_inv / cost.mu[1] * sol.p[1].first.get(k, j);
            }
            worst = worst.max(r.abs());
        }
        // y2
        disc.op.apply(sol.y.second.level(lvl), &mut lu);
        for j in 0..n {
            let r = sol.y.second.get(lvl, j)
                - if k > 0 {
                    sol.y.second.get(k, j)
                } else {
                    init.1[j]
                }
                + dt * (lu[j]
                    + lin.b2.get(lvl, j) * sol.y.second.get(lvl, j)
                    + dk[j] * sol.y.first.get(lvl, j));
            worst = worst.max(r.abs());
        }
        for i in 0..2 {
            let alpha = cost.alpha[i];
            let t = &cost.targets[i];
            disc.op.apply(sol.p[i].first.level(k), &mut lu);
            for j in 0..n {
                let next = if k + 1 < m {
                    sol.p[i].first.get(k + 1, j)
                } else {
                    0.0
                };
                let mut r = sol.p[i].first.get(k, j) - next
                    + dt * (lu[j]
                        + lin.c1.get(lvl, j) * sol.p[i].first.get(k, j)
                        + dk[j] * sol.p[i].second.get(k, j));
                if geom.omega_d.contains(j) {
                    r -= dt * alpha * (sol.y.first.get(lvl, j) - t.y1.get(lvl, j));
                }
                worst = worst.max(r.abs());
            }
            disc.op.apply(sol.p[i].second.level(k), &mut lu);
            for j in 0..n {
                let next = if k + 1 < m {
                    sol.p[i].second.get(k + 1, j)
                } else {
                    0.0
                };
                let mut r = sol.p[i].second.get(k, j) - next
                    + dt * (lu[j] + lin.c2.get(lvl, j) * sol.p[i].second.get(k, j));
                if geom.omega_d.contains(j) {
                    r -= dt * alpha * (sol.y.second.get(lvl, j) - t.y2.get(lvl, j));
                }
                worst = worst.max(r.abs());
            }
        }
    }
    worst
}

/// Solution of the coupled adjoint (observability) system.
#[derive(Debug, Clone)]
pub struct CoupledAdjointSolution {
    pub rho: FieldPair,
    /// psi[i], the forward companion of follower i+1.
    pub psi: [FieldPair; 2],
    /// Aggregated fields varrho_j = alpha_1 psi_j^1 + alpha_2 psi_j^2.
    pub varrho: FieldPair,
}

fn rho_sources_from_psi(
    disc: &Discretization,
    geom: &Geometry,
    cost: &CostConfig,
    psi: &[FieldPair; 2],
) -> (SpaceTimeField, SpaceTimeField) {
    let mut g1 = disc.zeros_field("g1");
    let mut g2 = disc.zeros_field("g2");
    for k in 1..disc.levels() {
        let r1 = g1.level_mut(k);
        for (i, pi) in psi.iter().enumerate() {
            let a = cost.alpha[i];
            let s1 = pi.first.level(k);
            for &j in geom.omega_d.indices() {
                r1[j] += a * s1[j];
            }
        }
        let r2 = g2.level_mut(k);
        for (i, pi) in psi.iter().enumerate() {
            let a = cost.alpha[i];
            let s2 = pi.second.level(k);
            for &j in geom.omega_d.indices() {
                r2[j] += a * s2[j];
            }
        }
    }
    (g1, g2)
}

fn psi_sources_from_rho(
    disc: &Discretization,
    geom: &Geometry,
    cost: &CostConfig,
    rho: &FieldPair,
    player: usize,
) -> SpaceTimeField {
    let mut f1 = disc.zeros_field("f1");
    let mask = if player == 0 {
        &geom.omega1
    } else {
        &geom.omega2
    };
    for k in 1..disc.levels() {
        let rho_inv = cost.rho.inv_sq[k - 1];
        let rho1_prev = rho.first.level(k - 1);
        let row = f1.level_mut(k);
        for &j in mask.indices() {
            row[j] = -rho_inv / cost.mu[player] * rho1_prev[j];
        }
    }
    f1
}

fn aggregate_varrho(disc: &Discretization, cost: &CostConfig, psi: &[FieldPair; 2]) -> FieldPair {
    let mut varrho = FieldPair::zeros(disc, "varrho1", "varrho2");
    varrho.first.axpy(cost.alpha[0], &psi[0].first);
    varrho.first.axpy(cost.alpha[1], &psi[1].first);
    varrho.second.axpy(cost.alpha[0], &psi[0].second);
    varrho.second.axpy(cost.alpha[1], &psi[1].second);
    varrho
}

/// Solve the coupled adjoint pair from terminal data rho^T. This system
/// is the exact discrete transpose of the optimality system, which is
/// what the leader gradient relies on.
pub fn solve_coupled_adjoint(
    disc: &Discretization,
    geom: &Geometry,
    lin: &LinearizedCoefficients,
    cost: &CostConfig,
    terminal: (&[f64], &[f64]),
    method: CouplingMethod,
) -> Result<CoupledAdjointSolution> {
    match method {
        CouplingMethod::Picard(opts) => adjoint_picard(disc, geom, lin, cost, terminal, opts),
        CouplingMethod::Monolithic => adjoint_monolithic(disc, geom, lin, cost, terminal),
    }
}

fn adjoint_picard(
    disc: &Discretization,
    geom: &Geometry,
    lin: &LinearizedCoefficients,
    cost: &CostConfig,
    terminal: (&[f64], &[f64]),
    opts: PicardOptions,
) -> Result<CoupledAdjointSolution> {
    let mut psi = [
        FieldPair::zeros(disc, "psi1_1", "psi2_1"),
        FieldPair::zeros(disc, "psi1_2", "psi2_2"),
    ];
    let zero = disc.zeros_field("zero");
    let zeros = vec![0.0; disc.n()];
    let mut history = Vec::new();
    for _ in 0..opts.max_iter {
        let (g1, g2) = rho_sources_from_psi(disc, geom, cost, &psi);
        let rho = solve_backward(
            disc,
            PairCoeffs {
                diag1: &lin.b1,
                diag2: &lin.b2,
                d: &lin.d,
            },
            (&g1, &g2),
            terminal,
        )?;
        let mut psi_hat = Vec::with_capacity(2);
        for i in 0..2 {
            let f1 = psi_sources_from_rho(disc, geom, cost, &rho, i);
            psi_hat.push(solve_forward(
                disc,
                PairCoeffs {
                    diag1: &lin.c1,
                    diag2: &lin.c2,
                    d: &lin.d,
                },
                (&f1, &zero),
                (&zeros, &zeros),
            )?);
        }
        let change = psi[0]
            .max_abs_diff(&psi_hat[0])
            .max(psi[1].max_abs_diff(&psi_hat[1]));
        history.push(change);
        let scale = rho
            .first
            .max_abs()
            .max(rho.second.max_abs())
            .max(psi_hat[0].first.max_abs())
            .max(psi_hat[1].first.max_abs())
            .max(1.0);
        if change < opts.tol * scale {
            let p1 = psi_hat.pop().unwrap();
            let p0 = psi_hat.pop().unwrap();
            let psi = [p0, p1];
            let varrho = aggregate_varrho(disc, cost, &psi);
            return Ok(CoupledAdjointSolution { rho, psi, varrho });
        }
        for i in 0..2 {
            for (cur, new) in psi[i]
                .first
                .data_mut()
                .iter_mut()
                .zip(psi_hat[i].first.data())
            {
                *cur = (1.0 - opts.damping) * *cur + opts.damping * new;
            }
            for (cur, new) in psi[i]
                .second
                .data_mut()
                .iter_mut()
                .zip(psi_hat[i].second.data())
            {
                *cur = (1.0 - opts.damping) * *cur + opts.damping * new;
            }
        }
    }
    Err(Error::Iteration {
        message: format!(
            "adjoint Picard did not reach tol {} in {} iterations",
            opts.tol, opts.max_iter
        ),
        history,
    })
}

fn adjoint_monolithic(
    disc: &Discretization,
    geom: &Geometry,
    lin: &LinearizedCoefficients,
    cost: &CostConfig,
    terminal: (&[f64], &[f64]),
) -> Result<CoupledAdjointSolution> {
    let (m, n, dt) = (disc.steps(), disc.n(), disc.dt());
    let total = 6 * n * m;
    if total > 400_000 {
        return Err(Error::Solver(format!(
            "monolithic system has {total} unknowns, above the desk-scale cap; use Picard"
        )));
    }
    let band = 6 * n + 5;
    let mut mat = BandedMatrix::zeros(total, band, band);
    let mut rhs = vec![0.0; total];

    // fields per step k: [rho1^k, rho2^k, psi1^{1,k+1}, psi2^{1,k+1}, psi1^{2,k+1}, psi2^{2,k+1}]
    for k in 0..m {
        let lvl = k + 1;
        let rho_inv = cost.rho.inv_sq[k];
        let dk = lin.d.level(lvl);
        add_implicit_block(&mut mat, disc, k, 0, lin.b1.level(lvl));
        add_implicit_block(&mut mat, disc, k, 1, lin.b2.level(lvl));
        for j in 0..n {
            let r1 = pack(n, k, j, 0);
            mat.add(r1, pack(n, k, j, 1), dt * dk[j]);
            if k + 1 < m {
                mat.add(r1, pack(n, k + 1, j, 0), -1.0);
            } else {
                rhs[r1] += terminal.0[j];
            }
            if geom.omega_d.contains(j) {
                mat.add(r1, pack(n, k, j, 2), -dt * cost.alpha[0]);
                mat.add(r1, pack(n, k, j, 4), -dt * cost.alpha[1]);
            }
            let r2 = pack(n, k, j, 1);
            if k + 1 < m {
                mat.add(r2, pack(n, k + 1, j, 1), -1.0);
            } else {
                rhs[r2] += terminal.1[j];
            }
            if geom.omega_d.contains(j) {
                mat.add(r2, pack(n, k, j, 3), -dt * cost.alpha[0]);
                mat.add(r2, pack(n, k, j, 5), -dt * cost.alpha[1]);
            }
        }
        for i in 0..2 {
            let (fp1, fp2) = (2 + 2 * i, 3 + 2 * i);
            let mask = if i == 0 { &geom.omega1 } else { &geom.omega2 };
            add_implicit_block(&mut mat, disc, k, fp1, lin.c1.level(lvl));
            add_implicit_block(&mut mat, disc, k, fp2, lin.c2.level(lvl));
            for j in 0..n {
                let r1 = pack(n, k, j, fp1);
                if k > 0 {
                    mat.add(r1, pack(n, k - 1, j, fp1), -1.0);
                }
                if mask.contains(j) {
                    mat.add(r1, pack(n, k, j, 0), dt * rho_inv / cost.mu[i]);
                }
                let r2 = pack(n, k, j, fp2);
                mat.add(r2, pack(n, k, j, fp1), dt * dk[j]);
                if k > 0 {
                    mat.add(r2, pack(n, k - 1, j, fp2), -1.0);
                }
            }
        }
    }

    mat.factor()?;
    mat.solve(&mut rhs)?;

    let mut rho = FieldPair::zeros(disc, "rho1", "rho2");
    rho.first.level_mut(m).copy_from_slice(terminal.0);
    rho.second.level_mut(m).copy_from_slice(terminal.1);
    let mut psi = [
        FieldPair::zeros(disc, "psi1_1", "psi2_1"),
        FieldPair::zeros(disc, "psi1_2", "psi2_2"),
    ];
    for k in 0..m {
        for j in 0..n {
            rho.first.set(k, j, rhs[pack(n, k, j, 0)]);
            rho.second.set(k, j, rhs[pack(n, k, j, 1)]);
            psi[0].first.set(k + 1, j, rhs[pack(n, k, j, 2)]);
            psi[0].second.set(k + 1, j, rhs[pack(n, k, j, 3)]);
            psi[1].first.set(k + 1, j, rhs[pack(n, k, j, 4)]);
            psi[1].second.set(k + 1, j, rhs[pack(n, k, j, 5)]);
        }
    }
    rho.check_finite()?;
    psi[0].check_finite()?;
    psi[1].check_finite()?;
    let varrho = aggregate_varrho(disc, cost, &psi);
    Ok(CoupledAdjointSolution { rho, psi, varrho })
}

/// Max-abs residual of the aggregated (varrho) forward equations, whose
/// sources merge the follower regions with weights alpha_i / mu_i.
pub fn varrho_residual(
    disc: &Discretization,
    geom: &Geometry,
    lin: &LinearizedCoefficients,
    cost: &CostConfig,
    sol: &CoupledAdjointSolution,
) -> f64 {
    let (m, n, dt) = (disc.steps(), disc.n(), disc.dt());
    let mut worst = 0.0_f64;
    let mut lu = vec![0.0; n];
    for k in 0..m {
        let lvl = k + 1;
        let rho_inv = cost.rho.inv_sq[k];
        let dk = lin.d.level(lvl);
        disc.op.apply(sol.varrho.first.level(lvl), &mut lu);
        for j in 0..n {
            let mut src = 0.0;
            if geom.omega1.contains(j) {
                src -= cost.alpha[0] / cost.mu[0] * rho_inv * sol.rho.first.get(k, j);
            }
            if geom.omega2.contains(j) {
                src -= cost.alpha[1] / cost.mu[1] * rho_inv * sol.rho.first.get(k, j);
            }
            let r = sol.varrho.first.get(lvl, j) - sol.varrho.first.get(k, j)
                + dt * (lu[j] + lin.c1.get(lvl, j) * sol.varrho.first.get(lvl, j))
                - dt * src;
            worst = worst.max(r.abs());
        }
        disc.op.apply(sol.varrho.second.level(lvl), &mut lu);
        for j in 0..n {
            let r = sol.varrho.second.get(lvl, j) - sol.varrho.second.get(k, j)
                + dt * (lu[j]
                    + lin.c2.get(lvl, j) * sol.varrho.second.get(lvl, j)
                    + dk[j] * sol.varrho.first.get(lvl, j));
            worst = worst.max(r.abs());
        }
    }
    worst
}
