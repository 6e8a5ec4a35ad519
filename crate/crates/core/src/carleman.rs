//! Carleman machinery: the auxiliary profile sigma, the parameter
//! selection (r, d-bar, lambda, s), every weight function built from
//! them, the two weighted energy functionals, and the numerical probes
//! of the Hardy-Poincare, Caccioppoli and observability inequalities.
//!
//! Weights are sampled at the time midpoints t_{k+1/2}, never at the
//! poles t = 0, T of Theta.

use crate::error::{Error, Result};
use crate::grid::{DegeneracyCoefficient, Geometry, SpaceGrid, SpaceTimeField, SubdomainMask};
use crate::nash::CostConfig;
use crate::pde::{
    solve_coupled_adjoint, CoupledAdjointSolution, CouplingMethod, Discretization,
    LinearizedCoefficients, PicardOptions,
};
use crate::util::{median, mix_seed};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Auxiliary spatial profile: positive inside (0,1), vanishing at both
/// ends, with all critical points confined to the interior set o0.
///
/// Construction: sigma(x) = x(1-x) e^{k x} with k chosen so the unique
/// critical point in [0,1] is the midpoint of o0; the companion root of
/// sigma_x falls outside [0,1] for every midpoint in (0,1).
#[derive(Debug, Clone)]
pub struct SigmaProfile {
    pub values: Vec<f64>,
    pub derivative: Vec<f64>,
    /// Exact sup over [0,1] (attained at the critical point).
    pub sup: f64,
    /// Exponential tilt; zero when o0 is centered at 1/2.
    pub shift: f64,
    pub critical_point: f64,
}

impl SigmaProfile {
    pub fn sigma_at(&self, _grid: &SpaceGrid, x: f64) -> f64 {
        x * (1.0 - x) * (self.shift * x).exp()
    }
}

/// Build sigma for the given interior plateau set and verify on the grid
/// that sigma_x vanishes only inside o0.
pub fn build_sigma(grid: &SpaceGrid, o0: &SubdomainMask) -> Result<SigmaProfile> {
    if o0.is_empty() {
        return Err(Error::Parameter("o0 selects no grid node".into()));
    }
    let first = grid.node(*o0.indices().first().unwrap());
    let last = grid.node(*o0.indices().last().unwrap());
    let center = 0.5 * (first + last);
    let shift = if (center - 0.5).abs() < 1e-14 {
        0.0
    } else {
        (2.0 * center - 1.0) / (center * (1.0 - center))
    };
    let sigma = |x: f64| x * (1.0 - x) * (shift * x).exp();
    let sigma_x = |x: f64| (shift * x).exp() * (1.0 - 2.0 * x + shift * x * (1.0 - x));
    let values: Vec<f64> = grid.nodes().iter().map(|&x| sigma(x)).collect();
    let derivative: Vec<f64> = grid.nodes().iter().map(|&x| sigma_x(x)).collect();
    let profile = SigmaProfile {
        values,
        derivative,
        sup: sigma(center),
        shift,
        critical_point: center,
    };
    verify_sigma(grid, o0, &profile)?;
    Ok(profile)
}

/// Grid check of the critical-point confinement. Exposed so synthetic
/// profiles can be vetted too.
pub fn verify_sigma(grid: &SpaceGrid, o0: &SubdomainMask, profile: &SigmaProfile) -> Result<()> {
    let n = grid.n();
    let scale = profile
        .derivative
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    for j in 0..n {
        if profile.values[j] <= 0.0 {
            return Err(Error::Parameter(format!(
                "sigma is not positive at node {} (x={})",
                j,
                grid.node(j)
            )));
        }
        if !o0.contains(j) && profile.derivative[j].abs() < 1e-12 * scale {
            return Err(Error::Parameter(format!(
                "sigma_x vanishes outside o0 at node {} (x={})",
                j,
                grid.node(j)
            )));
        }
    }
    for j in 0..n - 1 {
        if !o0.contains(j) && !o0.contains(j + 1) {
            let s0 = profile.derivative[j].signum();
            let s1 = profile.derivative[j + 1].signum();
            if s0 != s1 {
                return Err(Error::Parameter(format!(
                    "sigma_x changes sign outside o0 between nodes {} and {} (x in [{}, {}])",
                    j,
                    j + 1,
                    grid.node(j),
                    grid.node(j + 1)
                )));
            }
        }
    }
    Ok(())
}

/// The scalar parameters of the weight family.
#[derive(Debug, Clone, Copy)]
pub struct CarlemanParams {
    pub r: f64,
    pub d_bar: f64,
    pub lambda: f64,
    pub s: f64,
    pub tau: f64,
    pub sigma_sup: f64,
    /// Admissible lambda interval.
    pub interval: (f64, f64),
}

/// Pick r = 4 ln 2 / |sigma|_inf, d-bar = 5/(a(1)(2 - tau)) and lambda
/// as the midpoint of the admissible interval. `s` is left at 1 and
/// finalized by [`calibrate_s`] or by an explicit configuration value.
pub fn choose_parameters(
    a: &DegeneracyCoefficient,
    sigma: &SigmaProfile,
) -> Result<CarlemanParams> {
    let tau = a.tau();
    let a1 = a.eval(1.0);
    let sup = sigma.sup;
    if !(sup > 0.0) {
        return Err(Error::Parameter("sigma has non-positive sup".into()));
    }
    let r = 4.0 * std::f64::consts::LN_2 / sup;
    let mut d_bar = 5.0 / (a1 * (2.0 - tau));
    while d_bar * a1 * (2.0 - tau) <= 1.0 {
        d_bar *= 2.0;
    }
    let e1 = (r * sup).exp(); // = 16 by construction of r
    let e2 = (2.0 * r * sup).exp();
    let lo = a1 * (2.0 - tau) * (e2 - 1.0) / (d_bar * a1 * (2.0 - tau) - 1.0);
    let hi = 4.0 * (e2 - e1) / (3.0 * d_bar);
    if lo > hi {
        return Err(Error::Parameter(format!(
            "admissible lambda interval is empty: [{lo}, {hi}]"
        )));
    }
    Ok(CarlemanParams {
        r,
        d_bar,
        lambda: 0.5 * (lo + hi),
        s: 1.0,
        tau,
        sigma_sup: sup,
        interval: (lo, hi),
    })
}

pub fn theta_of(t: f64, horizon: f64) -> f64 {
    1.0 / (t * (horizon - t)).powi(4)
}

pub fn delta_of(x: f64, a: &DegeneracyCoefficient, params: &CarlemanParams) -> f64 {
    params.lambda * (a.integral_y_over_a(x) - params.d_bar)
}

/// Largest power-of-two s for which the sampled weight dynamic range
/// e^{2 s (max phi - min phi)} stays below `cap`, so that e^{2 s phi}
/// and rho_*^2 = e^{-s phi_*} both remain far from under/overflow.
pub fn calibrate_s(params: &CarlemanParams, disc: &Discretization, cap: f64) -> f64 {
    let t = &disc.time;
    let mut phi_min = f64::INFINITY;
    let mut phi_max = f64::NEG_INFINITY;
    for k in 0..t.steps() {
        let th = theta_of(t.midpoint_time(k), t.horizon());
        for &x in disc.grid.nodes() {
            let phi = th * delta_of(x, &disc.a, params);
            phi_min = phi_min.min(phi);
            phi_max = phi_max.max(phi);
        }
    }
    let range = phi_max - phi_min;
    let fits = |s: f64| 2.0 * s * range < cap.ln() && (s * phi_min.abs()) < 700.0;
    let mut s = 1.0;
    if fits(s) {
        while fits(2.0 * s) {
            s *= 2.0;
        }
    } else {
        while !fits(s) {
            s *= 0.5;
            if s < 1e-300 {
                break;
            }
        }
    }
    s
}

/// Penalty weight rho_*(t) = e^{-s phi_*(t)/2} sampled at time midpoints,
/// exposed as the squares the solvers need.
#[derive(Debug, Clone)]
pub struct RhoStarWeights {
    pub sq: Vec<f64>,
    pub inv_sq: Vec<f64>,
}

impl RhoStarWeights {
    /// Unweighted penalty (rho_* = 1), used by purely linear experiments
    /// and by tests that do not involve the Carleman machinery.
    pub fn unit(steps: usize) -> Self {
        Self {
            sq: vec![1.0; steps],
            inv_sq: vec![1.0; steps],
        }
    }
}

/// Every weight of the Carleman section, sampled on midpoints x nodes.
#[derive(Debug, Clone)]
pub struct WeightBundle {
    pub params: CarlemanParams,
    pub theta: Vec<f64>,
    pub theta_tilde: Vec<f64>,
    pub delta: Vec<f64>,
    pub psi: Vec<f64>,
    /// phi(t,x) = Theta(t) delta(x); rows are time midpoints.
    pub phi: SpaceTimeField,
    /// Phi(t,x) = Theta(t) Psi(x).
    pub cap_phi: SpaceTimeField,
    pub eta: SpaceTimeField,
    pub phi_tilde: SpaceTimeField,
    pub phi_star: Vec<f64>,
    pub phi_hat: Vec<f64>,
    pub kappa: Vec<f64>,
    pub rho_star_sq: Vec<f64>,
    pub rho_star_inv_sq: Vec<f64>,
}

impl WeightBundle {
    pub fn rho_star_weights(&self) -> RhoStarWeights {
        RhoStarWeights {
            sq: self.rho_star_sq.clone(),
            inv_sq: self.rho_star_inv_sq.clone(),
        }
    }
}

pub fn build_weights(
    params: &CarlemanParams,
    disc: &Discretization,
    sigma: &SigmaProfile,
) -> Result<WeightBundle> {
    let m = disc.steps();
    let n = disc.n();
    let horizon = disc.time.horizon();
    let theta: Vec<f64> = (0..m)
        .map(|k| theta_of(disc.time.midpoint_time(k), horizon))
        .collect();
    let theta_half = theta_of(0.5 * horizon, horizon);
    let theta_tilde: Vec<f64> = (0..m)
        .map(|k| {
            if disc.time.midpoint_time(k) <= 0.5 * horizon {
                theta_half
            } else {
                theta[k]
            }
        })
        .collect();
    let delta: Vec<f64> = disc
        .grid
        .nodes()
        .iter()
        .map(|&x| delta_of(x, &disc.a, params))
        .collect();
    let e2 = (2.0 * params.r * params.sigma_sup).exp();
    let psi: Vec<f64> = sigma
        .values
        .iter()
        .map(|&s| (params.r * s).exp() - e2)
        .collect();

    let mut phi = SpaceTimeField::zeros("phi", m, n);
    let mut cap_phi = SpaceTimeField::zeros("Phi", m, n);
    let mut eta = SpaceTimeField::zeros("eta", m, n);
    let mut phi_tilde = SpaceTimeField::zeros("phi_tilde", m, n);
    for k in 0..m {
        for j in 0..n {
            phi.set(k, j, theta[k] * delta[j]);
            cap_phi.set(k, j, theta[k] * psi[j]);
            eta.set(k, j, theta[k] * (params.r * sigma.values[j]).exp());
            phi_tilde.set(k, j, theta_tilde[k] * delta[j]);
        }
    }
    let min_row =
        |f: &SpaceTimeField, k: usize| f.level(k).iter().cloned().fold(f64::INFINITY, f64::min);
    let phi_star: Vec<f64> = (0..m).map(|k| min_row(&phi, k)).collect();
    let phi_hat: Vec<f64> = (0..m).map(|k| min_row(&phi_tilde, k)).collect();
    let kappa: Vec<f64> = phi_hat.iter().map(|&p| (params.s * p).exp()).collect();
    let rho_star_sq: Vec<f64> = phi_star.iter().map(|&p| (-params.s * p).exp()).collect();
    let rho_star_inv_sq: Vec<f64> = phi_star.iter().map(|&p| (params.s * p).exp()).collect();

    let bundle = WeightBundle {
        params: *params,
        theta,
        theta_tilde,
        delta,
        psi,
        phi,
        cap_phi,
        eta,
        phi_tilde,
        phi_star,
        phi_hat,
        kappa,
        rho_star_sq,
        rho_star_inv_sq,
    };
    validate_weights(&bundle, disc)?;
    Ok(bundle)
}

/// Pointwise checks of the weight inequalities; the error names the
/// violated inequality and the worst sample point.
pub fn validate_weights(b: &WeightBundle, disc: &Discretization) -> Result<()> {
    let m = disc.steps();
    let n = disc.n();
    let fail = |name: &str, k: usize, j: usize, margin: f64| -> Error {
        Error::Parameter(format!(
            "weight inequality '{name}' violated at t={}, x={} (margin {margin:.3e})",
            disc.time.midpoint_time(k),
            disc.grid.node(j)
        ))
    };
    for j in 0..n {
        if b.delta[j] >= 0.0 {
            return Err(fail("delta < 0", 0, j, b.delta[j]));
        }
    }
    for k in 0..m {
        for j in 0..n {
            let phi = b.phi.get(k, j);
            let cap = b.cap_phi.get(k, j);
            if phi >= 0.0 {
                return Err(fail("phi < 0", k, j, phi));
            }
            if cap >= 0.0 {
                return Err(fail("Phi < 0", k, j, cap));
            }
            if 4.0 / 3.0 * cap > phi + 1e-12 * phi.abs() {
                return Err(fail("(4/3) Phi <= phi", k, j, 4.0 / 3.0 * cap - phi));
            }
            if phi > cap + 1e-12 * cap.abs() {
                return Err(fail("phi <= Phi", k, j, phi - cap));
            }
            if 2.0 * cap > phi + 1e-12 * phi.abs() {
                return Err(fail("2 Phi <= phi", k, j, 2.0 * cap - phi));
            }
            if 4.0 * cap - 3.0 * phi > 1e-12 * phi.abs() {
                return Err(fail("4 Phi - 3 phi <= 0", k, j, 4.0 * cap - 3.0 * phi));
            }
        }
    }
    for k in 0..m {
        if !(b.kappa[k] > 0.0 && b.kappa[k] < 1.0) {
            return Err(fail("kappa in (0,1)", k, 0, b.kappa[k]));
        }
        let floor = (-b.params.s * b.phi_star[k] / 2.0).exp();
        let rho = b.rho_star_sq[k].sqrt();
        if rho < floor * (1.0 - 1e-12) {
            return Err(fail("rho_* >= e^{-s phi_*/2}", k, 0, floor - rho));
        }
    }
    Ok(())
}

fn centered_dx(grid: &SpaceGrid, z: &[f64], j: usize) -> f64 {
    let n = grid.n();
    let left = if j == 0 { 0.0 } else { z[j - 1] };
    let right = if j + 1 == n { 0.0 } else { z[j + 1] };
    let xl = grid.node_padded(j);
    let xr = grid.node_padded(j + 2);
    (right - left) / (xr - xl)
}

fn functional_core(
    z: &SpaceTimeField,
    disc: &Discretization,
    mask: Option<&SubdomainMask>,
    pointwise: impl Fn(usize, usize) -> (f64, f64, f64),
) -> Result<f64> {
    let m = disc.steps();
    let n = disc.n();
    z.assert_shape(m + 1, n)?;
    let dt = disc.dt();
    let w = disc.grid.weights();
    let mut parts = [0.0_f64; 3]; // time-derivative+flux, zeroth order, gradient
    let mut lz = vec![0.0; n];
    let mut zmid = vec![0.0; n];
    for k in 0..m {
        let z0 = z.level(k);
        let z1 = z.level(k + 1);
        for j in 0..n {
            zmid[j] = 0.5 * (z0[j] + z1[j]);
        }
        disc.op.apply(&zmid, &mut lz);
        let indices: Box<dyn Iterator<Item = usize>> = match mask {
            Some(mk) => Box::new(mk.indices().iter().cloned()),
            None => Box::new(0..n),
        };
        for j in indices {
            let zt = (z1[j] - z0[j]) / dt;
            let zx = centered_dx(&disc.grid, &zmid, j);
            let (c_first, c_zero, c_grad) = pointwise(k, j);
            parts[0] += c_first * (zt * zt + lz[j] * lz[j]) * w[j];
            parts[1] += c_zero * zmid[j] * zmid[j] * w[j];
            parts[2] += c_grad * zx * zx * w[j];
        }
    }
    let names = [
        "time-derivative/flux term",
        "zeroth-order term",
        "gradient term",
    ];
    for (p, name) in parts.iter().zip(names) {
        if !p.is_finite() {
            return Err(Error::Numeric(format!("functional {name} is non-finite")));
        }
    }
    Ok((parts[0] + parts[1] + parts[2]) * dt)
}

/// The degenerate-weight functional
/// I(z) = int [ (1/(s Theta))(|z_t|^2 + |(a z_x)_x|^2)
///            + s^3 Theta^3 (x^2/a) z^2 + s Theta a z_x^2 ] e^{2 s phi}.
pub fn functional_i(z: &SpaceTimeField, b: &WeightBundle, disc: &Discretization) -> Result<f64> {
    let s = b.params.s;
    functional_core(z, disc, None, |k, j| {
        let x = disc.grid.node(j);
        let a = disc.a.eval(x);
        let th = b.theta[k];
        let e = (2.0 * s * b.phi.get(k, j)).exp();
        (
            e / (s * th),
            e * s.powi(3) * th.powi(3) * x * x / a,
            e * s * th * a,
        )
    })
}

/// The non-degenerate companion functional on an interval (b1, b2) away
/// from the degeneracy:
/// K(z) = int [ (1/(s eta))(|z_t|^2 + |(a z_x)_x|^2)
///            + s^3 eta^3 z^2 + s eta z_x^2 ] e^{2 s Phi}.
pub fn functional_k(
    z: &SpaceTimeField,
    b: &WeightBundle,
    disc: &Discretization,
    interval: (f64, f64),
) -> Result<f64> {
    if interval.0 <= 0.0 {
        return Err(Error::Parameter(format!(
            "K interval must avoid the degenerate point: b1 = {} <= 0",
            interval.0
        )));
    }
    let mask = SubdomainMask::from_interval(&disc.grid, interval.0, interval.1);
    let s = b.params.s;
    functional_core(z, disc, Some(&mask), |k, j| {
        let eta = b.eta.get(k, j);
        let e = (2.0 * s * b.cap_phi.get(k, j)).exp();
        (e / (s * eta), e * s.powi(3) * eta.powi(3), e * s * eta)
    })
}

/// One probe trial row, serialized to CSV by the experiment layer.
#[derive(Debug, Clone)]
pub struct TrialRow {
    pub seed: u64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub rows: Vec<TrialRow>,
    pub worst_ratio: f64,
    pub median_ratio: f64,
}

impl ProbeReport {
    fn from_rows(rows: Vec<TrialRow>) -> Self {
        let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
        let worst = ratios.iter().cloned().fold(0.0_f64, f64::max);
        Self {
            worst_ratio: worst,
            median_ratio: median(&ratios),
            rows,
        }
    }
}

/// Random smooth profile vanishing at x=0: half-integer sine series with
/// decaying coefficients.
fn smooth_series(coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| c * ((k as f64 + 0.5) * std::f64::consts::PI * x).sin() / (k + 1) as f64)
        .sum()
}

#[derive(Debug, Clone)]
pub struct HardyReport {
    pub bound: f64,
    pub worst_ratio: f64,
    pub within_bound: bool,
    pub ratios: Vec<f64>,
}

/// Empirical Hardy-Poincare constant: over random smooth z with z(0)=0,
/// the worst ratio of int (a/x^2) z^2 over int a |z'|^2, compared with
/// the closed-form constant 4/(1-theta)^2 plus 10% discretization slack.
pub fn probe_hardy(
    a: &DegeneracyCoefficient,
    grid: &SpaceGrid,
    trials: usize,
    base_seed: u64,
) -> Result<HardyReport> {
    if !(a.alpha() > 0.0 && a.alpha() < 1.0) {
        return Err(Error::Parameter(format!(
            "Hardy probe needs theta = alpha in (0,1), got {}",
            a.alpha()
        )));
    }
    let n = grid.n();
    let bound = 4.0 / (1.0 - a.alpha()).powi(2);
    let mut ratios = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(base_seed, trial as u64));
        let mut attempt = 0;
        loop {
            let coeffs: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0_f64..1.0)).collect();
            let z: Vec<f64> = grid
                .nodes()
                .iter()
                .map(|&x| smooth_series(&coeffs, x))
                .collect();
            let z1 = smooth_series(&coeffs, 1.0);
            let mut num = 0.0;
            for j in 0..n {
                let x = grid.node(j);
                num += a.eval(x) / (x * x) * z[j] * z[j] * grid.weights()[j];
            }
            let mut den = 0.0;
            for cell in 0..=n {
                let zl = if cell == 0 { 0.0 } else { z[cell - 1] };
                let zr = if cell == n { z1 } else { z[cell] };
                let h = grid.cell_width(cell);
                let slope = (zr - zl) / h;
                den += a.eval(grid.cell_midpoint(cell)) * slope * slope * h;
            }
            if den > 1e-12 {
                ratios.push(num / den);
                break;
            }
            attempt += 1;
            if attempt > 64 {
                return Err(Error::Numeric(
                    "Hardy probe could not draw a non-degenerate sample".into(),
                ));
            }
        }
    }
    let worst = ratios.iter().cloned().fold(0.0_f64, f64::max);
    Ok(HardyReport {
        bound,
        worst_ratio: worst,
        within_bound: worst <= bound * 1.1,
        ratios,
    })
}

fn random_terminal_pair(rng: &mut ChaCha8Rng, grid: &SpaceGrid) -> (Vec<f64>, Vec<f64>) {
    let c1: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0_f64..1.0)).collect();
    let c2: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0_f64..1.0)).collect();
    let series = |coeffs: &[f64], x: f64| -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * ((k + 1) as f64 * std::f64::consts::PI * x).sin() / (k + 1) as f64)
            .sum()
    };
    let t1 = grid.nodes().iter().map(|&x| series(&c1, x)).collect();
    let t2 = grid.nodes().iter().map(|&x| series(&c2, x)).collect();
    (t1, t2)
}

/// Shared driver: solve the coupled adjoint pair from random terminal
/// data and hand the solution to a ratio evaluator.
fn probe_adjoint_trials(
    disc: &Discretization,
    geom: &Geometry,
    lin: &LinearizedCoefficients,
    cost: &CostConfig,
    trials: usize,
    base_seed: u64,
    mut ratio_of: impl FnMut(&CoupledAdjointSolution) -> Option<(f64, f64)>,
) -> Result<Vec<TrialRow>> {
    let mut rows = Vec::with_capacity(trials);
    for trial in 0..trials {
        let seed = mix_seed(base_seed, trial as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t1, t2) = random_terminal_pair(&mut rng, &disc.grid);
        let sol = solve_coupled_adjoint(
            disc,
            geom,
            lin,
            cost,
            (&t1, &t2),
            CouplingMethod::Picard(PicardOptions::default()),
        )?;
        if let Some((lhs, rhs)) = ratio_of(&sol) {
            rows.push(TrialRow {
                seed,
                lhs,
                rhs,
                ratio: lhs / rhs,
            });
        }
    }
    Ok(rows)
}

/// Numerator/denominator of the Caccioppoli ratio for one solution.
pub fn caccioppoli_sides(
    sol: &CoupledAdjointSolution,
    bundle: &WeightBundle,
    disc: &Discretization,
    inner: &SubdomainMask,
    outer: &SubdomainMask,
) -> (f64, f64) {
    let m = disc.steps();
    let s = bundle.params.s;
    let dt = disc.dt();
    let w = disc.grid.weights();
    let fields = [
        &sol.rho.first,
        &sol.rho.second,
        &sol.varrho.first,
        &sol.varrho.second,
    ];
    let mut num = 0.0;
    let mut den = 0.0;
    let mut zmid = vec![0.0; disc.n()];
    for k in 0..m {
        let e2s = |j: usize| (2.0 * s * bundle.phi.get(k, j)).exp();
        for f in fields {
            let z0 = f.level(k);
            let z1 = f.level(k + 1);
            for j in 0..disc.n() {
                zmid[j] = 0.5 * (z0[j] + z1[j]);
            }
            for &j in inner.indices() {
                let zx = centered_dx(&disc.grid, &zmid, j);
                num += zx * zx * e2s(j) * w[j] * dt;
            }
            let th = bundle.theta[k];
            for &j in outer.indices() {
                den += s * s * th * th * zmid[j] * zmid[j] * e2s(j) * w[j] * dt;
            }
        }
    }
    (num, den)
}

/// Empirical constant of the localized gradient (Caccioppoli) estimate:
/// weighted gradients of (rho, varrho) on o_prime against weighted
/// values on o1, over random terminal data.
pub fn probe_caccioppoli(
    disc: &Discretization,
    geom: &Geometry,
    lin: &LinearizedCoefficients,
    cost: &CostConfig,
    bundle: &WeightBundle,
    trials: usize,
    base_seed: u64,
) -> Result<ProbeReport> {
    let rows = probe_adjoint_trials(disc, geom, lin, cost, trials, base_seed, |sol| {
        let (num, den) = caccioppoli_sides(sol, bundle, disc, &geom.o_prime, &geom.o1);
        if den <= 1e-300 {
            None // degenerate sample, skipped
        } else {
            Some((num, den))
        }
    })?;
    Ok(ProbeReport::from_rows(rows))
}

/// Observability ratio of one coupled-adjoint solution:
/// lhs = |rho(0)|^2 + sum_i int kappa^2 (|psi_1^i|^2 + |psi_2^i|^2),
/// rhs = int_omega |rho_1|^2.
pub fn observability_sides(
    sol: &CoupledAdjointSolution,
    bundle: &WeightBundle,
    disc: &Discretization,
    omega: &SubdomainMask,
) -> (f64, f64) {
    let m = disc.steps();
    let dt = disc.dt();
    let grid = &disc.grid;
    let w = grid.weights();
    let mut lhs = grid.inner(sol.rho.first.level(0), sol.rho.first.level(0))
        + grid.inner(sol.rho.second.level(0), sol.rho.second.level(0));
    for psi in &sol.psi {
        for k in 1..=m {
            let kap2 = bundle.kappa[k - 1] * bundle.kappa[k - 1];
            lhs += kap2
                * (grid.inner(psi.first.level(k), psi.first.level(k))
                    + grid.inner(psi.second.level(k), psi.second.level(k)))
                * dt;
        }
    }
    let mut rhs = 0.0;
    for k in 0..m {
        let row = sol.rho.first.level(k);
        for &j in omega.indices() {
            rhs += row[j] * row[j] * w[j] * dt;
        }
    }
    (lhs, rhs)
}

/// Empirical observability constant over random terminal data. The
/// coupling lower bound d >= d0 on o2 is a precondition.
pub fn probe_observability(
    disc: &Discretization,
    geom: &Geometry,
    lin: &LinearizedCoefficients,
    cost: &CostConfig,
    bundle: &WeightBundle,
    d0: f64,
    trials: usize,
    base_seed: u64,
) -> Result<ProbeReport> {
    if !lin.coupling_bounded_below(&geom.o2, d0) {
        return Err(Error::Parameter(format!(
            "coupling d is not bounded below by d0 = {d0} on o2"
        )));
    }
    let rows = probe_adjoint_trials(disc, geom, lin, cost, trials, base_seed, |sol| {
        let (lhs, rhs) = observability_sides(sol, bundle, disc, &geom.omega);
        if rhs <= 1e-300 {
            None
        } else {
            Some((lhs, rhs))
        }
    })?;
    Ok(ProbeReport::from_rows(rows))
}
