//! JSON run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use gp3::dynamics::{IntegratorConfig, SmibParams};
use gp3::recipes::KernelSetting;
use gp3::verify::Exclusion;
use gp3::{Hyperrectangle, KernelFamily, KernelSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclusions: Vec<Exclusion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Training data CSV (`x1..xd,y`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<LipschitzSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roa: Option<RoaSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub sigma_f2: f64,
    pub lengthscales: Vec<f64>,
    pub sigma_n2: f64,
}

impl KernelConfig {
    pub fn setting(&self) -> Result<KernelSetting, CliError> {
        let spec = KernelSpec::new(self.family, self.sigma_f2, self.lengthscales.clone())
            .map_err(|e| CliError::Config(format!("kernel: {e}")))?;
        if !(self.sigma_n2 >= 0.0) {
            return Err(CliError::Config("kernel: sigma_n2 must be non-negative".into()));
        }
        Ok(KernelSetting {
            spec,
            noise_variance: self.sigma_n2,
        })
    }

    pub fn from_setting(s: &KernelSetting) -> Self {
        Self {
            family: s.spec.family(),
            sigma_f2: s.spec.signal_variance(),
            lengthscales: s.spec.length_scales().to_vec(),
            sigma_n2: s.noise_variance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainConfig {
    pub fn rect(&self) -> Result<Hyperrectangle, CliError> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(CliError::Config("domain: lower and upper must have equal, non-zero length".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l < u)) {
            return Err(CliError::Config("domain: every lower bound must be below its upper bound".into()));
        }
        Hyperrectangle::from_bounds(&self.lower, &self.upper).map_err(|e| CliError::Config(format!("domain: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GChoice {
    /// The posterior mean itself.
    #[default]
    Mean,
    /// Multilinear interpolation of a gridded table (`g_table`).
    Table,
    /// The built-in test function `1 - sin(x₁) + 1/(1+e^{-x₂})`.
    LipschitzTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FChoice {
    #[default]
    Identity,
    NearestGrid,
    /// Time-`dt` flow of the `dynamics` system.
    FlowMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default)]
    pub g: GChoice,
    #[serde(default)]
    pub f: FChoice,
    #[serde(rename = "L_f", default, skip_serializing_if = "Option::is_none")]
    pub l_f: Option<f64>,
    #[serde(rename = "L_g", default, skip_serializing_if = "Option::is_none")]
    pub l_g: Option<f64>,
    /// `null` or absent means unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps1_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps2_bar: Option<f64>,
    pub b_min: f64,
    #[serde(default = "one")]
    pub initial_cells: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_evaluations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_table: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_origin: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_spacing: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    #[serde(default = "default_m1")]
    pub m1: f64,
    #[serde(default = "default_d1")]
    pub d1: f64,
    #[serde(default = "default_a12")]
    pub a12: f64,
    #[serde(default = "default_theta1")]
    pub theta1: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(rename = "K", default = "default_k")]
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorConfig>,
}

fn default_m1() -> f64 {
    SmibParams::default().m1
}
fn default_d1() -> f64 {
    SmibParams::default().d1
}
fn default_a12() -> f64 {
    SmibParams::default().a12
}
fn default_theta1() -> f64 {
    SmibParams::default().theta1
}
fn default_dt() -> f64 {
    0.01
}
fn default_k() -> usize {
    1000
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            m1: default_m1(),
            d1: default_d1(),
            a12: default_a12(),
            theta1: default_theta1(),
            dt: default_dt(),
            k: default_k(),
            integrator: None,
        }
    }
}

impl DynamicsConfig {
    pub fn smib(&self) -> SmibParams {
        SmibParams {
            m1: self.m1,
            d1: self.d1,
            a12: self.a12,
            theta1: self.theta1,
        }
    }

    pub fn integrator(&self) -> IntegratorConfig {
        self.integrator.unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct LipschitzSection {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kernels: Vec<KernelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub optimize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RoaSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default)]
    pub optimize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_radius: Option<f64>,
}

/// A parsed configuration together with the directory relative paths are
/// resolved against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: Config,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config = parse(&text)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        match (flag, &self.config.output_dir) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => self.resolve(p),
            (None, None) => self.base_dir.join("gp3_out"),
        }
    }
}

pub fn parse(text: &str) -> Result<Config, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
}

pub fn echo(config: &Config) -> String {
    serde_json::to_string_pretty(config).expect("config serializes")
}
