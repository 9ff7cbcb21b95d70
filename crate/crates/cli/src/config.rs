//! Run configuration files and the bundled experiment catalog.

use std::path::{Path, PathBuf};

use ndnn::fv::FvConfig;
use ndnn::problem::ProblemSpec;
use ndnn::riemann::{CurveKind, DecomposeConfig};
use ndnn::train::TrainRun;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Ndnn,
    Ddm,
    DirectPinn,
    Godunov,
    RiemannDecompose,
    Compare,
}

/// Hidden-layer widths per network role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Networks {
    pub field_hidden: Vec<usize>,
    pub line_hidden: Vec<usize>,
}

impl Default for Networks {
    fn default() -> Self {
        Networks {
            field_hidden: vec![5],
            line_hidden: vec![5],
        }
    }
}

/// Event handling after an NDNN segment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventPlan {
    /// Look for shock birth on artificial lines.
    pub generation: bool,
    /// Look for crossings of neighboring lines.
    pub interaction: bool,
    /// After the earliest interaction, rebuild the layout at `t*` and
    /// train the remaining time window.
    pub redecompose: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateSource {
    /// Curve networks and their intersections.
    #[default]
    Neural,
    /// The exact Riemann solver.
    Exact,
}

/// Initial wave decomposition of one or more breakpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeSpec {
    /// Breakpoints to decompose (0-based).
    pub breakpoints: Vec<usize>,
    /// Curve kind per family, 1-family first.
    pub kinds: Vec<CurveKind>,
    #[serde(default)]
    pub config: DecomposeConfig,
    /// Decomposition handed to the NDNN stage.
    #[serde(default)]
    pub source: StateSource,
    /// Hand the intermediate states to an NDNN run.
    #[serde(default)]
    pub then_train: bool,
}

/// Space-time grid of the exported solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputGrid {
    pub nx: usize,
    pub nt: usize,
}

impl Default for OutputGrid {
    fn default() -> Self {
        OutputGrid { nx: 201, nt: 51 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub mode: Mode,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub networks: Networks,
    #[serde(default)]
    pub train: TrainRun,
    /// Seeds network initialization and learning points.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub godunov: FvConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decompose: Option<DecomposeSpec>,
    #[serde(default)]
    pub events: EventPlan,
    #[serde(default)]
    pub grid: OutputGrid,
}

fn invalid(field: &str, why: impl std::fmt::Display) -> CliError {
    CliError::config(format!("{field}: {why}"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("configs serialize");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Checks everything the selected mode needs before any compute.
    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.problem;
        p.validate().map_err(|e| invalid("problem", e))?;
        self.train.validate().map_err(|e| invalid("train", e))?;
        let n = &self.networks;
        if n.field_hidden.is_empty() || n.field_hidden.contains(&0) {
            return Err(invalid(
                "networks.field_hidden",
                "needs at least one nonzero width",
            ));
        }
        if n.line_hidden.is_empty() || n.line_hidden.contains(&0) {
            return Err(invalid(
                "networks.line_hidden",
                "needs at least one nonzero width",
            ));
        }
        if self.grid.nx < 2 || self.grid.nt < 2 {
            return Err(invalid("grid", "nx and nt must be at least 2"));
        }
        let d = p.initial.breakpoints().len();
        let m = p.flux.components();
        match self.mode {
            Mode::Godunov | Mode::Compare if !p.flux.is_scalar() => {
                return Err(invalid(
                    "problem.flux",
                    "the Godunov reference handles scalar fluxes only",
                ));
            }
            Mode::Ddm if d == 0 => {
                return Err(invalid(
                    "problem.initial.edges",
                    "ddm needs at least two subdomains",
                ));
            }
            Mode::RiemannDecompose => {
                let spec = self
                    .decompose
                    .as_ref()
                    .ok_or_else(|| invalid("decompose", "required for mode riemann-decompose"))?;
                if !(2..=3).contains(&m) {
                    return Err(invalid(
                        "problem.flux",
                        "wave decomposition needs a 2- or 3-component system",
                    ));
                }
                if spec.kinds.len() != m {
                    return Err(invalid("decompose.kinds", format!("needs {m} entries")));
                }
                if spec.breakpoints.is_empty() {
                    return Err(invalid("decompose.breakpoints", "must not be empty"));
                }
                if let Some(b) = spec.breakpoints.iter().find(|&&b| b >= d) {
                    return Err(invalid(
                        "decompose.breakpoints",
                        format!("breakpoint {b} does not exist"),
                    ));
                }
                if !p.wave_counts.is_empty() && p.wave_counts.iter().any(|&w| w != 1) {
                    return Err(invalid(
                        "problem.wave_counts",
                        "set by the decomposition, leave empty",
                    ));
                }
            }
            _ => {}
        }
        if self.events.redecompose && !self.events.interaction {
            return Err(invalid("events.redecompose", "requires events.interaction"));
        }
        if self.mode == Mode::Godunov || self.mode == Mode::Compare {
            let g = &self.godunov;
            if !(g.cfl > 0.0 && g.cfl <= 1.0) {
                return Err(invalid("godunov.cfl", format!("{} outside (0, 1]", g.cfl)));
            }
        }
        Ok(())
    }

    /// Applies command-line overrides.
    pub fn with_overrides(
        mut self,
        mode: Option<Mode>,
        seed: Option<u64>,
        out_dir: Option<PathBuf>,
    ) -> Self {
        if let Some(m) = mode {
            self.mode = m;
        }
        if let Some(s) = seed {
            self.seed = s;
        }
        if out_dir.is_some() {
            self.out_dir = out_dir;
        }
        self.train.seed = self.seed;
        self
    }
}

const BUNDLED: &[(&str, &str)] = &[
    ("exp1", include_str!("../configs/exp1.json")),
    ("exp2", include_str!("../configs/exp2.json")),
    ("exp3", include_str!("../configs/exp3.json")),
    ("exp4", include_str!("../configs/exp4.json")),
    ("exp5", include_str!("../configs/exp5.json")),
    ("exp6-shock", include_str!("../configs/exp6-shock.json")),
    (
        "exp6-rarefaction",
        include_str!("../configs/exp6-rarefaction.json"),
    ),
    ("exp7", include_str!("../configs/exp7.json")),
    ("exp8a-shocks", include_str!("../configs/exp8a-shocks.json")),
    (
        "exp8a-shock-rarefaction",
        include_str!("../configs/exp8a-shock-rarefaction.json"),
    ),
    ("exp8b", include_str!("../configs/exp8b.json")),
    ("exp9", include_str!("../configs/exp9.json")),
];

/// Ready-to-run configurations, one per experiment variant.
pub fn bundled_experiments() -> Vec<(&'static str, RunConfig)> {
    BUNDLED
        .iter()
        .map(|(name, text)| {
            (
                *name,
                RunConfig::from_json(text).unwrap_or_else(|e| panic!("bundled {name}: {e}")),
            )
        })
        .collect()
}

pub fn bundled(name: &str) -> Option<RunConfig> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, text)| RunConfig::from_json(text).unwrap_or_else(|e| panic!("bundled {n}: {e}")))
}
