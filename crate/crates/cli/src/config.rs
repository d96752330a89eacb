//! Versioned JSON scenario configuration.

use std::path::{Path, PathBuf};

use aqm2d_core::equilibrium::EquilibriumOverride;
use aqm2d_core::lmi::G1Form;
use aqm2d_core::model::{Ecn, NetworkParams, Scenario};
use aqm2d_core::sim2d::GridSpec;
use aqm2d_core::{published, StateSpace2D, TauSensitivity};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub network: Option<NetworkConfig>,
    #[serde(default)]
    pub operating_point: Option<EquilibriumOverride>,
    #[serde(default)]
    pub linearization: TauSensitivity,
    #[serde(default)]
    pub system: SystemSource,
    /// Published case used by `diff-report`.
    #[serde(default)]
    pub reference: Option<PublishedCase>,
    /// Drop the inputs before synthesis.
    #[serde(default)]
    pub zero_inputs: bool,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub boundary: Option<Vec<f64>>,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub lmi: LmiConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PublishedCase {
    A,
    B,
}

impl PublishedCase {
    pub fn load(self) -> published::PublishedCase {
        match self {
            PublishedCase::A => published::scenario_a(),
            PublishedCase::B => published::scenario_b(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemSource {
    /// Linearize the configured network at its operating point.
    #[default]
    Linearized,
    /// Published matrices of one scenario.
    Published(PublishedCase),
    Custom(StateSpace2D),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_flows: f64,
    pub lambda: f64,
    /// Packets/s; exclusive with `bandwidth_bps`.
    #[serde(default)]
    pub capacity: Option<f64>,
    #[serde(default)]
    pub bandwidth_bps: Option<f64>,
    #[serde(default = "default_packet_bits")]
    pub packet_bits: f64,
    pub t_prop: f64,
    pub q_ref: f64,
    pub scenario: Scenario,
    pub ecn: Ecn,
    #[serde(default)]
    pub w_max: Option<f64>,
    #[serde(default)]
    pub q_max: Option<f64>,
}

fn default_packet_bits() -> f64 {
    1000.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub h1: f64,
    pub h2: f64,
    pub m1: usize,
    pub m2: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimModel {
    #[default]
    Linear,
    Nonlinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default)]
    pub model: SimModel,
    /// Write every n-th grid node on each axis.
    #[serde(default = "default_stride")]
    pub csv_stride: usize,
}

fn default_stride() -> usize {
    1
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            model: SimModel::Linear,
            csv_stride: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmiConfig {
    #[serde(default = "yes")]
    pub balance: bool,
    #[serde(default)]
    pub g1: G1Form,
    #[serde(default = "default_floor")]
    pub margin_floor: f64,
}

fn yes() -> bool {
    true
}

fn default_floor() -> f64 {
    aqm2d_core::lmi::DEFAULT_MARGIN_FLOOR
}

impl Default for LmiConfig {
    fn default() -> Self {
        Self {
            balance: true,
            g1: G1Form::HScaled,
            margin_floor: default_floor(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "d_diff_rel")]
    pub diff_rel: f64,
    #[serde(default = "d_diff_abs")]
    pub diff_abs: f64,
    #[serde(default = "d_fd_step")]
    pub fd_step: f64,
    #[serde(default = "d_tail")]
    pub tail_fraction: f64,
    #[serde(default = "d_decay")]
    pub decay_threshold: f64,
    #[serde(default = "d_samples")]
    pub lemma_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_diff_rel() -> f64 {
    0.01
}
fn d_diff_abs() -> f64 {
    0.02
}
fn d_fd_step() -> f64 {
    1e-5
}
fn d_tail() -> f64 {
    0.8
}
fn d_decay() -> f64 {
    1e-3
}
fn d_samples() -> usize {
    1000
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            diff_rel: d_diff_rel(),
            diff_abs: d_diff_abs(),
            fd_step: d_fd_step(),
            tail_fraction: d_tail(),
            decay_threshold: d_decay(),
            lemma_samples: d_samples(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| format!("invalid config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if let Some(net) = &self.network {
            net.to_params()?;
        }
        if let Some(b) = &self.boundary {
            if b.iter().any(|v| !v.is_finite()) {
                return Err("boundary entries must be finite".into());
            }
        }
        if let Some(g) = &self.grid {
            if !(g.h1 > 0.0 && g.h2 > 0.0) || g.m1 == 0 || g.m2 == 0 {
                return Err("grid steps must be positive and counts nonzero".into());
            }
        }
        let t = &self.tolerances;
        if !(t.diff_rel >= 0.0 && t.diff_abs >= 0.0) {
            return Err("diff tolerances must be nonnegative".into());
        }
        if !(1e-8..=1e-3).contains(&t.fd_step) {
            return Err("fd_step must lie in [1e-8, 1e-3]".into());
        }
        if !(0.0..=1.0).contains(&t.tail_fraction) || !(t.decay_threshold > 0.0) {
            return Err("tail_fraction must lie in [0, 1] and decay_threshold be positive".into());
        }
        if !(self.lmi.margin_floor > 0.0) {
            return Err("margin_floor must be positive".into());
        }
        if self.simulation.csv_stride == 0 {
            return Err("csv_stride must be at least 1".into());
        }
        Ok(())
    }

    pub fn params(&self) -> Result<NetworkParams, String> {
        self.network
            .as_ref()
            .ok_or_else(|| "config has no network section".to_string())?
            .to_params()
    }

    pub fn grid_spec(&self, tau1: f64, tau2: f64) -> Result<GridSpec, String> {
        let g = self
            .grid
            .ok_or_else(|| "config has no grid section".to_string())?;
        GridSpec::new(g.h1, g.h2, g.m1, g.m2, tau1, tau2).map_err(|e| e.to_string())
    }

    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        cli.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out").join(&self.name))
    }
}

impl NetworkConfig {
    pub fn to_params(&self) -> Result<NetworkParams, String> {
        let capacity = match (self.capacity, self.bandwidth_bps) {
            (Some(c), None) => c,
            (None, Some(bw)) => NetworkParams::capacity_from_bandwidth(bw, self.packet_bits),
            _ => return Err("network needs exactly one of capacity and bandwidth_bps".into()),
        };
        let p = NetworkParams {
            n_flows: self.n_flows,
            lambda: self.lambda,
            capacity,
            t_prop: self.t_prop,
            q_ref: self.q_ref,
            scenario: self.scenario,
            ecn: self.ecn,
            packet_bits: self.packet_bits,
            w_max: self.w_max,
            q_max: self.q_max,
        };
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }
}
