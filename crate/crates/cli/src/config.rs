//! JSON scenario configuration and default resolution.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use drkf::experiment::Variant;
use drkf::scenario::NetworkRule;
use serde::{Deserialize, Serialize};

pub const DEFAULT_NODES: usize = 20;
pub const DEFAULT_SEED: u64 = 1;

/// Experiment description as read from disk. Every field has a default, so
/// `{}` is a valid configuration for the projectile scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub model: ModelSource,
    /// Number of sensors. Taken from the sensor list for custom models.
    #[serde(default)]
    pub nodes: Option<usize>,
    #[serde(default)]
    pub network: NetworkSpec,
    /// Relative entropy budget `c` per step.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Consensus weight on each neighbor.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Variant labels such as `rkf_diff`; all eight when omitted.
    #[serde(default = "default_variants")]
    pub variants: Vec<String>,
    #[serde(default)]
    pub horizon: HorizonSpec,
    /// Steady-state window as fractions `(α, β)` of the horizon.
    #[serde(default = "default_window")]
    pub window: (f64, f64),
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    /// Seeds the Monte Carlo streams, and the network when it has no seed of its own.
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    #[default]
    Projectile,
    Custom(CustomModel),
}

/// Matrices are given row by row.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomModel {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub sensors: Vec<SensorSpec>,
    /// Prior mean, zero when omitted.
    #[serde(default)]
    pub x0_hat: Option<Vec<f64>>,
    /// Prior covariance, identity when omitted.
    #[serde(default)]
    pub v0: Option<Vec<Vec<f64>>>,
    /// Constant known input added to the state each step.
    #[serde(default)]
    pub input: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub c: Vec<Vec<f64>>,
    /// Noise shaping matrix, `R = D D^T`.
    pub d: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub rule: NetworkRule,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSpec {
    #[serde(default = "default_horizon")]
    pub initial: usize,
    /// Double the horizon until the filter and model sequences settle.
    #[serde(default = "default_true")]
    pub auto_extend: bool,
    #[serde(default = "default_max_horizon")]
    pub max: usize,
}

impl Default for HorizonSpec {
    fn default() -> Self {
        HorizonSpec {
            initial: default_horizon(),
            auto_extend: true,
            max: default_max_horizon(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    /// Zero disables the simulation pass.
    #[serde(default)]
    pub runs: usize,
    #[serde(default = "default_chunk")]
    pub chunk: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            runs: 0,
            chunk: default_chunk(),
        }
    }
}

fn default_tolerance() -> f64 {
    0.02
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_variants() -> Vec<String> {
    Variant::ALL.iter().map(|v| v.label()).collect()
}

fn default_horizon() -> usize {
    300
}

fn default_max_horizon() -> usize {
    4800
}

fn default_window() -> (f64, f64) {
    (0.5, 0.9)
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_chunk() -> usize {
    32
}

fn default_true() -> bool {
    true
}

/// Command line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mc_runs: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Applies overrides, fills every optional field and checks ranges. The
    /// result is what the manifest records.
    pub fn resolve(mut self, overrides: &Overrides) -> Result<Self> {
        if let Some(seed) = overrides.seed {
            self.master_seed = seed;
        }
        if let Some(runs) = overrides.mc_runs {
            self.monte_carlo.runs = runs;
        }
        if let Some(dir) = &overrides.output_dir {
            self.output_dir = Some(dir.clone());
        }
        self.output_dir.get_or_insert_with(|| PathBuf::from("drkf-out"));
        self.network.seed.get_or_insert(self.master_seed);
        let nodes = match &self.model {
            ModelSource::Projectile => self.nodes.unwrap_or(DEFAULT_NODES),
            ModelSource::Custom(custom) => {
                let n = custom.sensors.len();
                if let Some(declared) = self.nodes {
                    ensure!(declared == n, "`nodes` is {declared} but the custom model lists {n} sensors");
                }
                n
            }
        };
        self.nodes = Some(nodes);

        ensure!(nodes >= 1, "at least one node is required");
        ensure!(
            self.tolerance.is_finite() && self.tolerance >= 0.0,
            "tolerance must be a finite nonnegative number, got {}",
            self.tolerance
        );
        ensure!(self.epsilon.is_finite(), "epsilon must be finite");
        let (alpha, beta) = self.window;
        ensure!(
            0.0 < alpha && alpha < beta && beta < 1.0,
            "window must satisfy 0 < alpha < beta < 1, got ({alpha}, {beta})"
        );
        ensure!(self.horizon.initial >= 1, "horizon must be at least 1");
        ensure!(
            self.horizon.max >= self.horizon.initial,
            "maximum horizon {} is below the initial horizon {}",
            self.horizon.max,
            self.horizon.initial
        );
        ensure!(self.monte_carlo.chunk >= 1, "Monte Carlo chunk size must be positive");
        ensure!(!self.variants.is_empty(), "no variants selected");
        self.parsed_variants()?;
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.unwrap_or(DEFAULT_NODES)
    }

    pub fn network_seed(&self) -> u64 {
        self.network.seed.unwrap_or(self.master_seed)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("drkf-out"))
    }

    pub fn parsed_variants(&self) -> Result<Vec<Variant>> {
        let mut out: Vec<Variant> = vec![];
        for label in &self.variants {
            let Some(v) = Variant::ALL.iter().find(|v| v.label() == *label) else {
                let known: Vec<String> = default_variants();
                bail!("unknown variant `{label}`; expected one of {}", known.join(", "));
            };
            ensure!(!out.contains(v), "variant `{label}` listed twice");
            out.push(*v);
        }
        Ok(out)
    }
}
