use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::{ScheduleParams, TimestepRange};
use crate::engine::{LossWeights, PretrainConfig, UnlearnStepConfig};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::world::{default_universe, ConceptUniverse, LayoutParams, MappingStrategy};

/// Where the concept universe comes from: a universe file, or else the
/// built-in layout.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniverseSource {
    /// Universe file, relative to the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub layout: LayoutParams,
}

/// Per-step exceptions to the shared unlearning config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepOverride {
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<MappingStrategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timesteps: Option<TimestepRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<LossWeights>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationToggles {
    /// Run the six loss/mapping variants.
    pub variants: bool,
    /// Run the four timestep-range variants.
    pub timestep_sweep: bool,
    /// Also run the full method at each regularisation strength of the sweep.
    pub reg_sweep: bool,
}

impl Default for AblationToggles {
    fn default() -> Self {
        Self { variants: true, timestep_sweep: true, reg_sweep: false }
    }
}

/// Everything an experiment needs. Section seeds are ignored: the master
/// `seed` is written into every section on resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Number of sequential unlearning steps.
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub universe: UniverseSource,
    pub schedule: ScheduleParams,
    pub pretrain: PretrainConfig,
    pub unlearn: UnlearnStepConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub step_overrides: Vec<StepOverride>,
    pub ablation: AblationToggles,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 5,
            out_dir: None,
            universe: UniverseSource::default(),
            schedule: ScheduleParams::default(),
            pretrain: PretrainConfig::default(),
            unlearn: UnlearnStepConfig::default(),
            step_overrides: Vec::new(),
            ablation: AblationToggles::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Annotated default configuration, printed by `--print-schema`. Parses to
/// [`ExperimentConfig::default`].
pub const SCHEMA: &str = include_str!("schema.toml");

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serialises")
    }

    /// Reads a config file; a relative universe file is resolved against
    /// the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|m| Error::parse(path, m))?;
        if let Some(file) = cfg.universe.file.as_mut() {
            if file.is_relative() {
                *file = path.parent().unwrap_or(Path::new("")).join(&*file);
            }
        }
        Ok(cfg)
    }

    /// Builds the universe with a forget schedule of length `k`.
    pub fn build_universe(&self) -> Result<ConceptUniverse> {
        match &self.universe.file {
            None => default_universe(LayoutParams { forget_steps: self.k, ..self.universe.layout }, self.seed),
            Some(path) => {
                let u = ConceptUniverse::load(path)?;
                let mut spec = u.spec().clone();
                if self.k > spec.forget_schedule.len() {
                    return Err(Error::Config(format!(
                        "k = {} exceeds the {} scheduled concepts of {}",
                        self.k,
                        spec.forget_schedule.len(),
                        path.display()
                    )));
                }
                spec.forget_schedule.truncate(self.k);
                ConceptUniverse::new(spec)
            }
        }
    }

    /// Copy with the master seed written into every section.
    pub fn seeded(&self) -> Self {
        let mut c = self.clone();
        c.pretrain.seed = self.seed;
        c.unlearn.seed = self.seed;
        c.eval.seed = self.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        crate::engine::config::check_seed(self.seed)?;
        let t = self.schedule.build()?.timesteps();
        self.pretrain.validate(t)?;
        self.eval.validate(t)?;
        for c in self.step_configs()? {
            c.validate(t)?;
        }
        Ok(())
    }

    /// Per-step unlearning configs (index `i - 1` for step `i`) with the
    /// master seed and overrides applied.
    pub fn step_configs(&self) -> Result<Vec<UnlearnStepConfig>> {
        let base = UnlearnStepConfig { seed: self.seed, ..self.unlearn.clone() };
        let mut out = vec![base; self.k];
        for o in &self.step_overrides {
            if o.step == 0 || o.step > self.k {
                return Err(Error::Config(format!("override for step {} outside [1, {}]", o.step, self.k)));
            }
            let c = &mut out[o.step - 1];
            if let Some(v) = o.lr {
                c.lr = v;
            }
            if let Some(v) = o.iterations {
                c.iterations = v;
            }
            if let Some(v) = o.mapping {
                c.mapping = v;
            }
            if let Some(v) = o.timesteps {
                c.timesteps = v;
            }
            if let Some(v) = o.weights {
                c.weights = v;
            }
        }
        Ok(out)
    }
}
