//! Experiment orchestration: build the solver objects from a
//! [`RunConfig`], run one of the named pipelines, and emit CSV / JSON /
//! SVG artifacts. Identical (config, seed) pairs produce byte-identical
//! artifacts.

use crate::artifact::{config_hash, loglog_plot_svg, ArtifactWriter};
use crate::carleman::{
    build_sigma, build_weights, calibrate_s, choose_parameters, probe_caccioppoli, probe_hardy,
    probe_observability, ProbeReport, WeightBundle,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::Geometry;
use crate::leader::{epsilon_sweep, LeaderProblem};
use crate::nash::{solve_nash, CostConfig};
use crate::outer::{freeze_coefficients, run_stackelberg_nash, OuterConfig, OuterProblem};
use crate::pde::{
    solve_forward_semilinear, CouplingMethod, Discretization, LinearizedCoefficients, Nonlinearity,
    PicardOptions, ReactionScheme,
};
use crate::util::fit_log_log_slope;
use serde_json::json;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentName {
    Forward,
    Nash,
    LeaderSweep,
    CarlemanProbe,
    Full,
}

impl ExperimentName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentName::Forward => "forward",
            ExperimentName::Nash => "nash",
            ExperimentName::LeaderSweep => "leader-sweep",
            ExperimentName::CarlemanProbe => "carleman-probe",
            ExperimentName::Full => "full",
        }
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(ExperimentName::Forward),
            "nash" => Ok(ExperimentName::Nash),
            "leader-sweep" => Ok(ExperimentName::LeaderSweep),
            "carleman-probe" => Ok(ExperimentName::CarlemanProbe),
            "full" => Ok(ExperimentName::Full),
            other => Err(Error::Usage(format!(
                "unknown experiment '{other}' (expected forward|nash|leader-sweep|carleman-probe|full)"
            ))),
        }
    }
}

/// Solver objects shared by every experiment.
pub struct Workbench {
    pub cfg: RunConfig,
    pub disc: Discretization,
    pub geom: Geometry,
    pub bundle: WeightBundle,
    pub cost: CostConfig,
    pub f1: Nonlinearity,
    pub f2: Nonlinearity,
    pub d: crate::grid::SpaceTimeField,
    pub init: (Vec<f64>, Vec<f64>),
    pub seed: u64,
}

impl Workbench {
    pub fn from_config(cfg: &RunConfig, seed_override: Option<u64>) -> Result<Self> {
        cfg.validate()?;
        let disc = cfg.build_discretization()?;
        let geom = cfg.build_geometry(&disc.grid)?;
        let sigma = build_sigma(&disc.grid, &geom.o0)?;
        let mut params = choose_parameters(&disc.a, &sigma)?;
        params.s = match cfg.carleman.s {
            Some(s) => s,
            None => calibrate_s(&params, &disc, cfg.carleman.dynamic_range_cap),
        };
        let bundle = build_weights(&params, &disc, &sigma)?;
        let rho = bundle.rho_star_weights();
        let alpha = [cfg.cost.alpha1, cfg.cost.alpha2];
        let mu = [cfg.cost.mu1, cfg.cost.mu2];
        let cost = match cfg.cost.targets.as_str() {
            "zero" => CostConfig::zero_targets(&disc, alpha, mu, rho)?,
            _ => CostConfig::kappa_targets(
                &disc,
                &geom.omega_d,
                &bundle.kappa,
                cfg.cost.target_amplitude,
                alpha,
                mu,
                rho,
            )?,
        };
        let f = cfg.nonlinearity();
        let d = crate::grid::SpaceTimeField::constant("d", disc.levels(), disc.n(), cfg.cost.d0);
        let init = cfg.initial_data(&disc.grid);
        Ok(Self {
            cfg: cfg.clone(),
            disc,
            geom,
            bundle,
            cost,
            f1: f,
            f2: f,
            d,
            init,
            seed: seed_override.unwrap_or(cfg.run.seed),
        })
    }

    fn method(&self) -> CouplingMethod {
        CouplingMethod::Picard(PicardOptions::default())
    }

    /// Linearization frozen on the uncontrolled trajectory (exact for
    /// zero/linear reactions; first outer iterate otherwise).
    fn frozen_lin(&self) -> Result<LinearizedCoefficients> {
        let zero = self.disc.zeros_field("zero");
        let w = solve_forward_semilinear(
            &self.disc,
            &self.f1,
            &self.f2,
            &self.d,
            (&zero, &zero),
            (&self.init.0, &self.init.1),
            ReactionScheme::SemiImplicit,
        )?;
        freeze_coefficients(&self.disc, &w, &self.f1, &self.f2, &self.d)
    }
}

/// Run one named experiment, writing artifacts under
/// `<out_dir>/<experiment>/`; returns the JSON summary.
pub fn run_experiment(
    name: ExperimentName,
    cfg: &RunConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<serde_json::Value> {
    let bench = Workbench::from_config(cfg, seed_override)?;
    let hash = config_hash(&cfg.to_toml(), bench.seed);
    let writer = ArtifactWriter::new(&out_dir.join(name.as_str()), &hash)?;
    match name {
        ExperimentName::Forward => experiment_forward(&bench, &writer),
        ExperimentName::Nash => experiment_nash(&bench, &writer),
        ExperimentName::LeaderSweep => experiment_leader_sweep(&bench, &writer),
        ExperimentName::CarlemanProbe => experiment_carleman_probe(&bench, &writer),
        ExperimentName::Full => experiment_full(&bench, &writer),
    }
}

fn experiment_forward(bench: &Workbench, w: &ArtifactWriter) -> Result<serde_json::Value> {
    let zero = bench.disc.zeros_field("zero");
    let y = solve_forward_semilinear(
        &bench.disc,
        &bench.f1,
        &bench.f2,
        &bench.d,
        (&zero, &zero),
        (&bench.init.0, &bench.init.1),
        ReactionScheme::SemiImplicit,
    )?;
    w.write_field_csv("y1.csv", &y.first)?;
    w.write_field_csv("y2.csv", &y.second)?;
    let m = bench.disc.steps();
    let summary = json!({
        "experiment": "forward",
        "seed": bench.seed,
        "y1_terminal_norm": bench.disc.grid.norm_l2(y.first.level(m)),
        "y2_terminal_norm": bench.disc.grid.norm_l2(y.second.level(m)),
        "y1_sup": y.first.max_abs(),
        "y2_sup": y.second.max_abs(),
    });
    w.write_json("summary.json", summary.clone())?;
    Ok(summary)
}

fn experiment_nash(bench: &Workbench, w: &ArtifactWriter) -> Result<serde_json::Value> {
    let lin = bench.frozen_lin()?;
    let h = bench.disc.zeros_field("h");
    let sol = solve_nash(
        &bench.disc,
        &bench.geom,
        &lin,
        &bench.cost,
        &h,
        (&bench.init.0, &bench.init.1),
        bench.method(),
    )?;
    w.write_field_csv("v1.csv", &sol.v1)?;
    w.write_field_csv("v2.csv", &sol.v2)?;
    w.write_field_csv("y1.csv", &sol.y.first)?;
    w.write_field_csv("y2.csv", &sol.y.second)?;
    w.write_csv(
        "residuals.csv",
        &["player", "relative_residual"],
        (0..2).map(|i| vec![format!("{}", i + 1), format!("{}", sol.residuals[i])]),
    )?;
    w.write_csv(
        "history.csv",
        &["iteration", "change"],
        sol.change_history
            .iter()
            .enumerate()
            .map(|(i, c)| vec![format!("{}", i + 1), format!("{c}")]),
    )?;
    let summary = json!({
        "experiment": "nash",
        "seed": bench.seed,
        "residual_player1": sol.residuals[0],
        "residual_player2": sol.residuals[1],
        "v_bound_constant": sol.v_bound_constant,
        "picard_iterations": sol.iterations,
        "target_proxy": bench.cost.weighted_target_proxy(&bench.disc, &bench.bundle.kappa),
    });
    w.write_json("summary.json", summary.clone())?;
    Ok(summary)
}

fn experiment_leader_sweep(bench: &Workbench, w: &ArtifactWriter) -> Result<serde_json::Value> {
    let lin = bench.frozen_lin()?;
    let prob = LeaderProblem {
        disc: &bench.disc,
        geom: &bench.geom,
        lin: &lin,
        cost: &bench.cost,
        init: (&bench.init.0, &bench.init.1),
        method: bench.method(),
    };
    let sweep = epsilon_sweep(&prob, &bench.cfg.leader.ladder)?;
    w.write_csv(
        "sweep.csv",
        &[
            "eps",
            "y1_terminal",
            "y2_terminal",
            "terminal",
            "h_norm",
            "cg_iterations",
            "in_fit_window",
            "slope",
        ],
        sweep.rows.iter().enumerate().map(|(i, r)| {
            vec![
                format!("{}", r.eps),
                format!("{}", r.y1_terminal),
                format!("{}", r.y2_terminal),
                format!("{}", r.terminal),
                format!("{}", r.h_norm),
                format!("{}", r.cg_iterations),
                format!("{}", i < sweep.window),
                format!("{}", sweep.slope),
            ]
        }),
    )?;
    let points: Vec<(f64, f64)> = sweep.rows.iter().map(|r| (r.eps, r.terminal)).collect();
    let svg = loglog_plot_svg(
        &points,
        sweep.slope,
        &w.hash,
        "terminal norm against penalty parameter",
        "eps (log)",
        "|y(T)| (log)",
    );
    w.write_svg("sweep.svg", &svg)?;
    let summary = json!({
        "experiment": "leader-sweep",
        "seed": bench.seed,
        "slope": sweep.slope,
        "fit_window": sweep.window,
        "h_norms": sweep.rows.iter().map(|r| r.h_norm).collect::<Vec<f64>>(),
    });
    w.write_json("summary.json", summary.clone())?;
    Ok(summary)
}

/// Per-trial rows followed by the max/median summary rows.
fn probe_rows(report: &ProbeReport) -> impl Iterator<Item = Vec<String>> + '_ {
    report
        .rows
        .iter()
        .map(|r| {
            vec![
                format!("{}", r.seed),
                format!("{}", r.lhs),
                format!("{}", r.rhs),
                format!("{}", r.ratio),
            ]
        })
        .chain([
            vec![
                "max".into(),
                String::new(),
                String::new(),
                format!("{}", report.worst_ratio),
            ],
            vec![
                "median".into(),
                String::new(),
                String::new(),
                format!("{}", report.median_ratio),
            ],
        ])
}

fn experiment_carleman_probe(bench: &Workbench, w: &ArtifactWriter) -> Result<serde_json::Value> {
    let disc = &bench.disc;
    let b = &bench.bundle;
    // weight exports
    w.write_field_csv("phi.csv", &b.phi)?;
    w.write_field_csv("cap_phi.csv", &b.cap_phi)?;
    w.write_csv(
        "weights_time.csv",
        &[
            "t",
            "theta",
            "theta_tilde",
            "phi_star",
            "phi_hat",
            "kappa",
            "rho_star_sq",
        ],
        (0..disc.steps()).map(|k| {
            vec![
                format!("{}", disc.time.midpoint_time(k)),
                format!("{}", b.theta[k]),
                format!("{}", b.theta_tilde[k]),
                format!("{}", b.phi_star[k]),
                format!("{}", b.phi_hat[k]),
                format!("{}", b.kappa[k]),
                format!("{}", b.rho_star_sq[k]),
            ]
        }),
    )?;
    w.write_csv(
        "weights_space.csv",
        &["x", "delta", "psi"],
        (0..disc.n()).map(|j| {
            vec![
                format!("{}", disc.grid.node(j)),
                format!("{}", b.delta[j]),
                format!("{}", b.psi[j]),
            ]
        }),
    )?;

    let hardy = probe_hardy(
        &disc.a,
        &disc.grid,
        bench.cfg.carleman.hardy_trials,
        bench.seed,
    )?;
    w.write_csv(
        "hardy.csv",
        &["trial", "ratio"],
        hardy
            .ratios
            .iter()
            .enumerate()
            .map(|(i, r)| vec![format!("{i}"), format!("{r}")]),
    )?;

    let lin = bench.frozen_lin()?;
    let cacc = probe_caccioppoli(
        disc,
        &bench.geom,
        &lin,
        &bench.cost,
        b,
        bench.cfg.carleman.caccioppoli_trials,
        bench.seed,
    )?;
    w.write_csv(
        "caccioppoli.csv",
        &["seed", "lhs", "rhs", "ratio"],
        probe_rows(&cacc),
    )?;

    let obs = probe_observability(
        disc,
        &bench.geom,
        &lin,
        &bench.cost,
        b,
        bench.cfg.cost.d0,
        bench.cfg.carleman.observability_trials,
        bench.seed,
    )?;
    w.write_csv(
        "observability.csv",
        &["seed", "lhs", "rhs", "ratio"],
        probe_rows(&obs),
    )?;

    // observed growth of the observability constant in s (reported, no
    // pass/fail: the theory's exponent is not explicit numerically)
    let mut s_values = Vec::new();
    let mut s_worst = Vec::new();
    for factor in [0.5, 1.0, 2.0] {
        let mut params = b.params;
        params.s *= factor;
        let sigma = build_sigma(&disc.grid, &bench.geom.o0)?;
        let scaled = build_weights(&params, disc, &sigma)?;
        let rep = probe_observability(
            disc,
            &bench.geom,
            &lin,
            &bench.cost,
            &scaled,
            bench.cfg.cost.d0,
            bench.cfg.carleman.observability_trials.min(8),
            bench.seed,
        )?;
        s_values.push(params.s);
        s_worst.push(rep.worst_ratio);
    }
    let s_exponent = fit_log_log_slope(&s_values, &s_worst);

    let summary = json!({
        "experiment": "carleman-probe",
        "seed": bench.seed,
        "s": b.params.s,
        "lambda": b.params.lambda,
        "lambda_interval": [b.params.interval.0, b.params.interval.1],
        "hardy_bound": hardy.bound,
        "hardy_worst_ratio": hardy.worst_ratio,
        "hardy_within_bound": hardy.within_bound,
        "caccioppoli_worst_ratio": cacc.worst_ratio,
        "caccioppoli_median_ratio": cacc.median_ratio,
        "observability_worst_ratio": obs.worst_ratio,
        "observability_median_ratio": obs.median_ratio,
        "observability_trials": obs.rows.len(),
        "observed_s_exponent": s_exponent,
    });
    w.write_json("summary.json", summary.clone())?;
    Ok(summary)
}

fn experiment_full(bench: &Workbench, w: &ArtifactWriter) -> Result<serde_json::Value> {
    let prob = OuterProblem {
        disc: &bench.disc,
        geom: &bench.geom,
        f1: &bench.f1,
        f2: &bench.f2,
        d: &bench.d,
        cost: &bench.cost,
        init: (&bench.init.0, &bench.init.1),
        eps: bench.cfg.leader.eps,
        method: bench.method(),
    };
    let outer = OuterConfig {
        max_iter: bench.cfg.outer.max_iter,
        tol: bench.cfg.outer.tol,
        damping: bench.cfg.outer.damping,
    };
    let report = run_stackelberg_nash(&prob, &outer, None)?;
    w.write_field_csv("y1.csv", &report.trajectory.first)?;
    w.write_field_csv("y2.csv", &report.trajectory.second)?;
    w.write_field_csv("h.csv", &report.h)?;
    w.write_field_csv("v1.csv", &report.v1)?;
    w.write_field_csv("v2.csv", &report.v2)?;
    w.write_csv(
        "outer_log.csv",
        &["iteration", "change"],
        report
            .change_history
            .iter()
            .enumerate()
            .map(|(i, c)| vec![format!("{}", i + 1), format!("{c}")]),
    )?;
    let summary = json!({
        "experiment": "full",
        "seed": bench.seed,
        "iterations": report.iterations,
        "converged": report.converged,
        "eps": bench.cfg.leader.eps,
        "y1_terminal_norm": report.terminal_norms.0,
        "y2_terminal_norm": report.terminal_norms.1,
        "nonlinear_residual": report.nonlinear_residual,
    });
    w.write_json("summary.json", summary.clone())?;
    Ok(summary)
}
