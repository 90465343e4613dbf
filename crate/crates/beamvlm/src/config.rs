//! The single JSON run configuration shared by every subcommand.

use std::path::Path;

use beamvlm_core::baseline::{BaselineConfig, CellType};
use beamvlm_core::phy::CodebookConfig;
use beamvlm_core::rng::derive_seed;
use beamvlm_core::scene::{ScenarioConfig, WorldConfig};
use beamvlm_core::text::PromptTemplate;
use beamvlm_core::train::TrainConfig;
use beamvlm_core::vlm::{LoraSpec, VlmConfig};
use serde::{Deserialize, Serialize};

use crate::{read_to_string, Error, Result};

/// Stream indices for seeds derived from the top-level seed.
pub mod streams {
    pub const TRAJECTORIES: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const MODEL_INIT: u64 = 3;
    pub const TRAIN_SHUFFLE: u64 = 4;
    pub const BASELINE_INIT: u64 = 5;
    pub const BASELINE_SHUFFLE: u64 = 6;
    pub const LORA_INIT: u64 = 7;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub cell: CellType,
    pub hidden_size: usize,
    /// Learning rate override; the epoch count and batch size always match
    /// the VLM's training section.
    pub learning_rate: Option<f64>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self { cell: CellType::Lstm, hidden_size: 128, learning_rate: None }
    }
}

/// Prompt blocks; `{SCENARIO}`, `{M}`, `{N_FRAMES}` and `{HORIZON}` are
/// substituted at render time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptSection {
    pub dataset_def: String,
    pub task_instruction: String,
    pub context_hint: String,
}

impl Default for PromptSection {
    fn default() -> Self {
        let t = PromptTemplate::standard("");
        Self { dataset_def: t.dataset_def, task_instruction: t.task_instruction, context_hint: t.context_hint }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Every random stream (trajectories, split, initialization, shuffles)
    /// is derived from this seed.
    pub seed: u64,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub codebook: CodebookConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: VlmConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub lora: LoraSpec,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub prompt: PromptSection,
}

impl RunConfig {
    /// Strict parse: unknown keys anywhere are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg.resolved())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path).map_err(|e| match e {
            Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
                Error::Config(format!("config file {} not found", path.display()))
            }
            other => other,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Replaces the top-level seed and re-derives every stream.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.resolved()
    }

    fn resolved(mut self) -> Self {
        self.train.seed = derive_seed(self.seed, streams::TRAIN_SHUFFLE);
        self
    }

    pub fn seed_for(&self, stream: u64) -> u64 {
        derive_seed(self.seed, stream)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.world.validate(Some(self.model.patch_size)).map_err(|e| Error::Config(e.to_string()))?;
        if self.world.image_width != self.world.image_height {
            return Err(Error::Config("frames must be square".into()));
        }
        if self.codebook.num_beams != self.model.num_beams {
            return Err(Error::Config("codebook.num_beams and model.num_beams differ".into()));
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::Config("split.train_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn prompt_template(&self) -> PromptTemplate {
        PromptTemplate {
            scenario_tag: self.scenario.scenario_tag.clone(),
            dataset_def: self.prompt.dataset_def.clone(),
            task_instruction: self.prompt.task_instruction.clone(),
            context_hint: self.prompt.context_hint.clone(),
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            cell: self.baseline.cell,
            hidden_size: self.baseline.hidden_size,
            d_model: self.model.d_model,
            image_size: self.model.image_size,
            patch_size: self.model.patch_size,
            n_frames: self.model.n_frames,
            horizon: self.model.horizon,
            num_beams: self.model.num_beams,
            init_std: 0.05,
        }
    }

    pub fn baseline_train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.baseline.learning_rate.unwrap_or(self.train.learning_rate),
            seed: self.seed_for(streams::BASELINE_SHUFFLE),
            eval_every: None,
            ..self.train.clone()
        }
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }
}
