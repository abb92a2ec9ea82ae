//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fpk_core::{Grid2D, Potential, PotentialSpec, Rect};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Scenario {
    RandomInit,
    PointMass,
    /// Initial density read from `simulation.initial`.
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Controller {
    None,
    Riccati,
    Lyapunov,
    RiccatiRotatedAlpha,
}

impl Controller {
    pub fn name(self) -> &'static str {
        match self {
            Controller::None => "none",
            Controller::Riccati => "riccati",
            Controller::Lyapunov => "lyapunov",
            Controller::RiccatiRotatedAlpha => "riccati_rotated_alpha",
        }
    }

    pub fn is_riccati(self) -> bool {
        matches!(self, Controller::Riccati | Controller::RiccatiRotatedAlpha)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PotentialKind {
    DoubleWell,
    Quadratic,
    Flat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub nx1: usize,
    pub nx2: usize,
    /// `[a1, b1, a2, b2]`
    pub bounds: [f64; 4],
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { nx1: 48, nx2: 32, bounds: [-1.5, 1.5, -1.0, 1.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub potential: PotentialKind,
    /// Double well: `a`, `b`. Quadratic: `c1 = a`, `c2 = b`.
    pub a: f64,
    pub b: f64,
    pub nu: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { potential: PotentialKind::DoubleWell, a: 3.0, b: 6.0, nu: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub controller: Controller,
    /// Number of leading eigenvalues that set the shift.
    pub d: usize,
    pub delta: Option<f64>,
    pub mu_margin: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        ControlSection { controller: Controller::Riccati, d: 4, delta: None, mu_margin: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub scenario: Scenario,
    pub t_end: f64,
    pub samples: usize,
    pub tol: f64,
    pub seed: u64,
    /// CSV with one density value per node, for `custom`.
    pub initial: Option<PathBuf>,
    /// Times at which the full density is dumped.
    pub snapshots: Vec<f64>,
    /// Stop early once the deviation drops below this fraction of its
    /// initial value.
    pub stop_below: Option<f64>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            scenario: Scenario::PointMass,
            t_end: 10.0,
            samples: 1001,
            tol: 1e-8,
            seed: 0,
            initial: None,
            snapshots: Vec::new(),
            stop_below: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Content-addressed solution cache; disabled when unset.
    pub cache: Option<PathBuf>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), cache: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub model: ModelSection,
    pub control: ControlSection,
    pub simulation: SimulationSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: ExperimentConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.nx1 < 2 || g.nx2 < 2 {
            bail!("grid needs at least 2 nodes per direction, got {}x{}", g.nx1, g.nx2);
        }
        let [a1, b1, a2, b2] = g.bounds;
        if !(a1 < b1 && a2 < b2) || g.bounds.iter().any(|v| !v.is_finite()) {
            bail!("invalid bounds {:?}", g.bounds);
        }
        if !(self.model.nu > 0.0 && self.model.nu.is_finite()) {
            bail!("nu must be positive, got {}", self.model.nu);
        }
        if !(self.model.a.is_finite() && self.model.b.is_finite()) {
            bail!("potential parameters must be finite");
        }
        let c = &self.control;
        if c.d < 2 || c.d > fpk_core::spectral::MAX_PAIRS {
            bail!("d must lie in 2..={}, got {}", fpk_core::spectral::MAX_PAIRS, c.d);
        }
        if let Some(delta) = c.delta {
            if !(delta >= 0.0 && delta.is_finite()) {
                bail!("delta override must be nonnegative, got {delta}");
            }
        }
        if !(c.mu_margin >= 0.0 && c.mu_margin.is_finite()) {
            bail!("mu_margin must be nonnegative, got {}", c.mu_margin);
        }
        let s = &self.simulation;
        if !(s.t_end > 0.0 && s.t_end.is_finite()) {
            bail!("t_end must be positive, got {}", s.t_end);
        }
        if s.samples < 2 {
            bail!("need at least 2 samples");
        }
        if !(1e-10..=1e-3).contains(&s.tol) {
            bail!("tol must lie in [1e-10, 1e-3], got {}", s.tol);
        }
        if s.scenario == Scenario::Custom && s.initial.is_none() {
            bail!("scenario custom needs simulation.initial");
        }
        if s.snapshots.iter().any(|&t| !(0.0..=s.t_end).contains(&t)) {
            bail!("snapshot times must lie in [0, t_end]");
        }
        if let Some(f) = s.stop_below {
            if !(f > 0.0 && f < 1.0) {
                bail!("stop_below must lie in (0, 1), got {f}");
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid2D> {
        let [a1, b1, a2, b2] = self.grid.bounds;
        Ok(Grid2D::new(self.grid.nx1, self.grid.nx2, Rect::new(a1, b1, a2, b2))?)
    }

    pub fn potential(&self) -> Result<PotentialSpec> {
        let m = &self.model;
        let p = match m.potential {
            PotentialKind::DoubleWell => Potential::DoubleWell { a: m.a, b: m.b },
            PotentialKind::Quadratic => Potential::Quadratic { c1: m.a, c2: m.b },
            PotentialKind::Flat => Potential::Flat,
        };
        Ok(PotentialSpec::new(p, m.nu)?)
    }
}
