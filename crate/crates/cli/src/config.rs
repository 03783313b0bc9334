//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use causal_repair_core::behavior::ScriptedController;
use causal_repair_core::discretize::DiscretizationConfig;
use causal_repair_core::search::{InterpolationMode, NodeOrder, SamplerConfig};
use causal_repair_core::sim::{MountainCar, Plant, StlFormula};
use causal_repair_core::space::BoxSpace;
use serde::{Deserialize, Serialize};

pub const SCHEMA: &str = "causal-repair/config/v1";
pub const SEED_ENV: &str = "CAUSAL_REPAIR_SEED";
pub const DEFAULT_PROPERTY: &str = "(F 0 110 (>= pos 0.45))";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", deny_unknown_fields)]
pub enum PlantConfig {
    MountainCar,
    /// A toy whose simulator returns `verdict` for every behavior.
    #[serde(rename_all = "camelCase")]
    Constant {
        verdict: bool,
        input_space: BoxSpace,
        output_space: BoxSpace,
    },
}

impl PlantConfig {
    pub fn name(&self) -> &'static str {
        match self {
            PlantConfig::MountainCar => "mountain_car",
            PlantConfig::Constant { .. } => "constant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub enum ControllerSource {
    Scripted(ScriptedController),
    /// Path to a weights file, relative to the config file.
    Weights(PathBuf),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct InterpolationConfig {
    #[serde(default)]
    pub mode: InterpolationMode,
    #[serde(default)]
    pub order: NodeOrder,
}

fn default_seed_attempts() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema: String,
    pub plant: PlantConfig,
    #[serde(default)]
    pub s0: Option<Vec<f64>>,
    #[serde(default)]
    pub property: Option<String>,
    pub controller: ControllerSource,
    pub discretization: DiscretizationConfig,
    pub sampler: SamplerConfig,
    /// Sampler runs over consecutive seeds before giving up.
    #[serde(default = "default_seed_attempts")]
    pub max_seed_attempts: u64,
    #[serde(default)]
    pub interpolation: InterpolationConfig,
    pub output_dir: PathBuf,
    /// Directory the config was read from; relative paths resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    /// Reads and validates a config. Parse errors name the offending field
    /// and position.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if cfg.output_dir.is_relative() {
            cfg.output_dir = cfg.base_dir.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| match e.path().to_string() {
            p if p == "?" || p == "." => anyhow::anyhow!("{}", e.inner()),
            p => anyhow::anyhow!("field `{p}`: {}", e.inner()),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `CAUSAL_REPAIR_SEED` replaces the sampler seed when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(s) = std::env::var(SEED_ENV) {
            self.sampler.seed = s
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}=`{s}` is not an unsigned integer"))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            bail!("field `schema`: expected `{SCHEMA}`, found `{}`", self.schema);
        }
        let (input, output) = self.spaces();
        self.discretization
            .validate(&input, &output)
            .map_err(|e| anyhow::anyhow!("field `discretization`: {e}"))?;
        self.sampler
            .validate()
            .map_err(|e| anyhow::anyhow!("field `sampler`: {e}"))?;
        if self.max_seed_attempts == 0 {
            bail!("field `maxSeedAttempts`: must be at least 1");
        }
        if let PlantConfig::MountainCar = self.plant {
            let mc = MountainCar::new();
            let s0 = self.initial_state();
            if s0.len() != 2 || !mc.bounds().contains(&s0) {
                bail!("field `s0`: {s0:?} is not a mountain-car state");
            }
            StlFormula::parse(self.property_text(), mc.state_names())
                .map_err(|e| anyhow::anyhow!("field `property`: {e}"))?;
        }
        if let ControllerSource::Weights(p) = &self.controller {
            if p.as_os_str().is_empty() {
                bail!("field `controller.weights`: empty path");
            }
        }
        Ok(())
    }

    pub fn spaces(&self) -> (BoxSpace, BoxSpace) {
        match &self.plant {
            PlantConfig::MountainCar => {
                let mc = MountainCar::new();
                (mc.controller_input_space().clone(), mc.controller_output_space().clone())
            }
            PlantConfig::Constant {
                input_space,
                output_space,
                ..
            } => (input_space.clone(), output_space.clone()),
        }
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.s0.clone().unwrap_or_else(|| MountainCar::INITIAL_STATE.to_vec())
    }

    pub fn property_text(&self) -> &str {
        self.property.as_deref().unwrap_or(DEFAULT_PROPERTY)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }
}
