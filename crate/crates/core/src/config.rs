//! Run configuration: TOML `key = value` sections with sensible defaults,
//! validation that names the offending field, and builders for the
//! discretization, geometry and cost objects.

use crate::error::{Error, Result};
use crate::grid::{Geometry, SpaceGrid, SubdomainMask};
use crate::pde::{Discretization, Nonlinearity};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    pub m: usize,
    pub grading: f64,
    pub horizon: f64,
    pub alpha: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            n: 100,
            m: 200,
            grading: 1.0,
            horizon: 1.0,
            alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DomainsSection {
    pub omega: [f64; 2],
    pub omega1: [f64; 2],
    pub omega2: [f64; 2],
    pub omega_d: [f64; 2],
    pub o0: [f64; 2],
    pub o1: [f64; 2],
    pub o2: [f64; 2],
    pub o3: [f64; 2],
    pub o_prime: [f64; 2],
}

impl Default for DomainsSection {
    fn default() -> Self {
        Self {
            omega: [0.2, 0.45],
            omega1: [0.6, 0.7],
            omega2: [0.75, 0.85],
            omega_d: [0.3, 0.6],
            o0: [0.355, 0.375],
            o1: [0.35, 0.39],
            o2: [0.34, 0.41],
            o3: [0.32, 0.43],
            o_prime: [0.355, 0.375],
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub alpha1: f64,
    pub alpha2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub d0: f64,
    /// "kappa" tracks kappa(t) g(x) profiles; "zero" turns tracking off.
    pub targets: String,
    pub target_amplitude: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            mu1: 100.0,
            mu2: 100.0,
            d0: 1.0,
            targets: "kappa".into(),
            target_amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CarlemanSection {
    /// Fixed value of s; absent means the dynamic-range calibration.
    pub s: Option<f64>,
    pub dynamic_range_cap: f64,
    pub hardy_trials: usize,
    pub caccioppoli_trials: usize,
    pub observability_trials: usize,
}

impl Default for CarlemanSection {
    fn default() -> Self {
        Self {
            s: None,
            dynamic_range_cap: 1e12,
            hardy_trials: 200,
            caccioppoli_trials: 50,
            observability_trials: 20,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LeaderSection {
    pub eps: f64,
    pub ladder: Vec<f64>,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for LeaderSection {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            ladder: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            cg_tol: 1e-8,
            cg_max_iter: 400,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OuterSection {
    pub max_iter: usize,
    pub tol: f64,
    pub damping: f64,
}

impl Default for OuterSection {
    fn default() -> Self {
        Self {
            max_iter: 30,
            tol: 1e-8,
            damping: 0.5,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ReactionSection {
    /// "zero", "linear" or "tanh".
    pub kind: String,
    /// Lipschitz bound M.
    pub bound: f64,
}

impl Default for ReactionSection {
    fn default() -> Self {
        Self {
            kind: "tanh".into(),
            bound: 0.1,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    /// "sine" (default) or "zero".
    pub kind: String,
    pub amplitude: f64,
}

impl Default for InitSection {
    fn default() -> Self {
        Self {
            kind: "sine".into(),
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub domains: DomainsSection,
    pub cost: CostSection,
    pub carleman: CarlemanSection,
    pub leader: LeaderSection,
    pub outer: OuterSection,
    pub reaction: ReactionSection,
    pub init: InitSection,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse failed: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.n < 3 {
            return Err(Error::Config(format!("grid.n must be >= 3, got {}", g.n)));
        }
        if g.m < 2 {
            return Err(Error::Config(format!("grid.m must be >= 2, got {}", g.m)));
        }
        if !(g.grading >= 1.0) {
            return Err(Error::Config(format!(
                "grid.grading must be >= 1, got {}",
                g.grading
            )));
        }
        if !(g.horizon > 0.0) {
            return Err(Error::Config(format!(
                "grid.horizon must be positive, got {}",
                g.horizon
            )));
        }
        if !(0.0..1.0).contains(&g.alpha) {
            return Err(Error::Config(format!(
                "grid.alpha must lie in [0, 1), got {}",
                g.alpha
            )));
        }
        let intervals = [
            ("domains.omega", self.domains.omega),
            ("domains.omega1", self.domains.omega1),
            ("domains.omega2", self.domains.omega2),
            ("domains.omega_d", self.domains.omega_d),
            ("domains.o0", self.domains.o0),
            ("domains.o1", self.domains.o1),
            ("domains.o2", self.domains.o2),
            ("domains.o3", self.domains.o3),
            ("domains.o_prime", self.domains.o_prime),
        ];
        for (name, [a, b]) in intervals {
            if !(0.0 <= a && a < b && b <= 1.0) {
                return Err(Error::Config(format!(
                    "{name} must satisfy 0 <= a < b <= 1, got [{a}, {b}]"
                )));
            }
        }
        for (name, v) in [
            ("cost.alpha1", self.cost.alpha1),
            ("cost.alpha2", self.cost.alpha2),
            ("cost.mu1", self.cost.mu1),
            ("cost.mu2", self.cost.mu2),
            ("cost.d0", self.cost.d0),
            ("leader.eps", self.leader.eps),
            ("outer.tol", self.outer.tol),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.leader.cg_tol > 0.0 && self.leader.cg_tol < 1.0) {
            return Err(Error::Config(format!(
                "leader.cg_tol must lie in (0, 1), got {}",
                self.leader.cg_tol
            )));
        }
        if !(self.outer.damping > 0.0 && self.outer.damping <= 1.0) {
            return Err(Error::Config(format!(
                "outer.damping must lie in (0, 1], got {}",
                self.outer.damping
            )));
        }
        if self.leader.ladder.len() < 4 {
            return Err(Error::Config(format!(
                "leader.ladder needs at least 4 epsilon values, got {}",
                self.leader.ladder.len()
            )));
        }
        if self.leader.ladder.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(
                "leader.ladder must be strictly decreasing".into(),
            ));
        }
        match self.reaction.kind.as_str() {
            "zero" | "linear" | "tanh" => {}
            other => {
                return Err(Error::Config(format!(
                    "reaction.kind must be one of zero|linear|tanh, got '{other}'"
                )))
            }
        }
        match self.cost.targets.as_str() {
            "kappa" | "zero" => {}
            other => {
                return Err(Error::Config(format!(
                    "cost.targets must be kappa|zero, got '{other}'"
                )))
            }
        }
        match self.init.kind.as_str() {
            "sine" | "zero" => {}
            other => {
                return Err(Error::Config(format!(
                    "init.kind must be sine|zero, got '{other}'"
                )))
            }
        }
        if let Some(s) = self.carleman.s {
            if !(s > 0.0) {
                return Err(Error::Config(format!(
                    "carleman.s must be positive, got {s}"
                )));
            }
        }
        // mask geometry on the configured grid
        let grid = SpaceGrid::build(g.n, g.grading)?;
        self.build_geometry(&grid)?.validate()?;
        Ok(())
    }

    pub fn build_discretization(&self) -> Result<Discretization> {
        Discretization::new(
            self.grid.n,
            self.grid.grading,
            self.grid.m,
            self.grid.horizon,
            self.grid.alpha,
        )
    }

    pub fn build_geometry(&self, grid: &SpaceGrid) -> Result<Geometry> {
        let iv = |r: [f64; 2]| SubdomainMask::from_interval(grid, r[0], r[1]);
        Ok(Geometry {
            omega: iv(self.domains.omega),
            omega1: iv(self.domains.omega1),
            omega2: iv(self.domains.omega2),
            omega_d: iv(self.domains.omega_d),
            o0: iv(self.domains.o0),
            o1: iv(self.domains.o1),
            o2: iv(self.domains.o2),
            o3: iv(self.domains.o3),
            o_prime: iv(self.domains.o_prime),
        })
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        match self.reaction.kind.as_str() {
            "zero" => Nonlinearity::Zero,
            "linear" => Nonlinearity::Linear {
                slope: self.reaction.bound,
            },
            _ => Nonlinearity::Tanh {
                m: self.reaction.bound,
            },
        }
    }

    pub fn initial_data(&self, grid: &SpaceGrid) -> (Vec<f64>, Vec<f64>) {
        match self.init.kind.as_str() {
            "zero" => (vec![0.0; grid.n()], vec![0.0; grid.n()]),
            _ => {
                let a = self.init.amplitude;
                let y1 = grid
                    .nodes()
                    .iter()
                    .map(|&x| a * (std::f64::consts::PI * x).sin())
                    .collect();
                let y2 = grid
                    .nodes()
                    .iter()
                    .map(|&x| a * 2.0 * x * (1.0 - x))
                    .collect();
                (y1, y2)
            }
        }
    }
}
