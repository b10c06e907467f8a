//! Config-driven experiment lifecycle: generate, train, evaluate, ablate,
//! report. Every artifact carries a format version and the hashes needed to
//! check it against its inputs.

mod ablation;
mod pipeline;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::GeneratorConfig;
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelConfig, Switches};

pub use ablation::{ablate, AblationRow, AblationTable};
pub use pipeline::{
    evaluate_checkpoint, generate_dataset, load_dataset, report_from_predictions, train_model, Dataset, EvalOutcome,
    FileEntry, Manifest, TrainOutcome, MANIFEST_FILE, MANIFEST_VERSION, TEST_FILE, TRAIN_FILE,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub batch_size: usize,
    /// Seed of the `(user_id, item_id)` partition hash.
    pub partition_seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            batch_size: 1024,
            partition_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: "data".into(),
            run_dir: "runs".into(),
        }
    }
}

/// One row of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// DIN; always trained as the baseline.
    Base,
    NoSplit,
    NoMeta,
    NoAux,
    Full,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Base => "Base (DIN)",
            Variant::NoSplit => "W/o seq-split",
            Variant::NoMeta => "W/o seq-meta",
            Variant::NoAux => "W/o auxiliary loss",
            Variant::Full => "MSNet",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::NoSplit => "no_split",
            Variant::NoMeta => "no_meta",
            Variant::NoAux => "no_aux",
            Variant::Full => "full",
        }
    }

    /// `base` with this variant's architecture and switches.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        c.architecture = Architecture::Msnet;
        c.switches = Switches::default();
        match self {
            Variant::Base => c.architecture = Architecture::Din,
            Variant::NoSplit => c.switches.seq_split = false,
            Variant::NoMeta => c.switches.seq_meta = false,
            Variant::NoAux => c.switches.aux_loss = false,
            Variant::Full => {}
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub variants: Vec<Variant>,
    /// Extra full-MSNet rows, one per auxiliary-loss weight.
    pub alpha_sweep: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            variants: vec![Variant::NoSplit, Variant::NoMeta, Variant::NoAux, Variant::Full],
            alpha_sweep: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds the market simulation and model initialization.
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub evaluation: EvaluationConfig,
    pub paths: PathsConfig,
    pub ablation: AblationConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        if self.evaluation.batch_size == 0 {
            return Err(Error::Config("evaluation.batch_size must be positive".into()));
        }
        if let Some(a) = self.ablation.alpha_sweep.iter().find(|a| !(**a >= 0.0)) {
            return Err(Error::Config(format!("alpha_sweep entries must be non-negative, got {a}")));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(v) = self.ablation.variants.iter().find(|v| !seen.insert(**v)) {
            return Err(Error::Config(format!("ablation variant `{}` listed twice", v.slug())));
        }
        Ok(())
    }

    /// Overrides every seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.model.seed = seed;
        self
    }
}
