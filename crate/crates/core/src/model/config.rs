use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::json_hash;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Din,
    Msnet,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Din => "din",
            Architecture::Msnet => "msnet",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "din" => Ok(Architecture::Din),
            "msnet" => Ok(Architecture::Msnet),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Which sequence positions the auxiliary similarity loss covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxScope {
    LimitedOnly,
    Both,
}

/// Component switches for ablations. Only meaningful for MSNet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Switches {
    pub seq_split: bool,
    pub seq_meta: bool,
    pub aux_loss: bool,
}

impl Default for Switches {
    fn default() -> Self {
        Switches {
            seq_split: true,
            seq_meta: true,
            aux_loss: true,
        }
    }
}

/// Model and optimization hyperparameters.
///
/// Defaults are desk-scale. The production reference values are MLP
/// `[512, 256, 128]`, 128 hidden units elsewhere, learning rate `1e-4`,
/// batch size 4096 and history length 50.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub d_id: usize,
    pub d_side: usize,
    /// History length `H`.
    pub max_len: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub mlp_hidden: Vec<usize>,
    pub meta_hidden: usize,
    /// Weight of the auxiliary loss.
    pub alpha: f64,
    pub learning_rate: f64,
    /// Accumulator decay applied before each Adagrad accumulation; 1 is
    /// plain Adagrad.
    pub adagrad_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub aux_scope: AuxScope,
    pub switches: Switches,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::Msnet,
            d_id: 8,
            d_side: 8,
            max_len: 20,
            n_heads: 2,
            d_head: 8,
            mlp_hidden: vec![64, 32, 16],
            meta_hidden: 16,
            alpha: 0.1,
            learning_rate: 1e-2,
            adagrad_decay: 1.0,
            batch_size: 256,
            epochs: 2,
            seed: 0,
            aux_scope: AuxScope::LimitedOnly,
            switches: Switches::default(),
        }
    }
}

impl ModelConfig {
    pub fn din() -> Self {
        ModelConfig {
            architecture: Architecture::Din,
            ..ModelConfig::default()
        }
    }

    pub fn msnet() -> Self {
        ModelConfig::default()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_id", self.d_id),
            ("d_side", self.d_side),
            ("max_len", self.max_len),
            ("n_heads", self.n_heads),
            ("d_head", self.d_head),
            ("meta_hidden", self.meta_hidden),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.mlp_hidden.contains(&0) {
            return Err(Error::Config("mlp_hidden sizes must be positive".into()));
        }
        if !(self.alpha >= 0.0) || !(self.learning_rate >= 0.0) {
            return Err(Error::Config("alpha and learning_rate must be non-negative".into()));
        }
        if !(self.adagrad_decay > 0.0 && self.adagrad_decay <= 1.0) {
            return Err(Error::Config("adagrad_decay must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Width of `Concat[id, side]`.
    pub fn d_item(&self) -> usize {
        self.d_id + self.d_side
    }

    pub fn is_msnet(&self) -> bool {
        self.architecture == Architecture::Msnet
    }

    /// Two attention branches (multi-stock / limited-stock) instead of one.
    pub fn uses_split(&self) -> bool {
        self.is_msnet() && self.switches.seq_split
    }

    pub fn uses_meta(&self) -> bool {
        self.is_msnet() && self.switches.seq_meta
    }

    pub fn uses_aux(&self) -> bool {
        self.is_msnet() && self.switches.aux_loss
    }

    /// Weight actually applied to the auxiliary loss.
    pub fn effective_alpha(&self) -> f64 {
        if self.uses_aux() {
            self.alpha
        } else {
            0.0
        }
    }

    /// Fingerprint of every field.
    pub fn config_hash(&self) -> String {
        json_hash(self)
    }
}
