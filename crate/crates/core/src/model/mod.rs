//! DIN and MSNet end to end: parameters, forward pass, losses, optimizer,
//! training loop and checkpoints.

mod checkpoint;
mod config;
mod loss;
mod optim;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{decode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Architecture, AuxScope, ModelConfig, Switches};
pub use loss::{loss_aux, loss_ce, total_loss, LossParts};
pub use optim::{Adagrad, ADAGRAD_EPS};
pub use train::{fit, predict, EpochLog, TrainingLog};

use crate::autodiff::{ParamKind, ParamStore, Tape, Var};
use crate::error::Result;
use crate::features::{embed, init_table, Embedded, SampleBatch, Vocabularies, CATEGORY_TABLE, ITEM_TABLE};
use crate::layers::Mlp;
use crate::seqmodel::{
    compose_kv, meta_scale, meta_shift, split_sequence, target_attention, AttentionOutput, AttentionParams,
    MetaNetParams,
};

/// Logits are clamped to `±LOGIT_CLAMP` before the sigmoid.
pub const LOGIT_CLAMP: f64 = 15.0;

/// Which part of the behaviour sequence an attention branch reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchKind {
    /// Every valid position (DIN, or MSNet without the split).
    Full,
    Multi,
    Limited,
}

/// Static description of one attention branch.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchSpec {
    pub kind: BranchKind,
    pub attention: AttentionParams,
    /// Keys and values come from the meta networks.
    pub meta: bool,
}

/// Parameter layout implied by a configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub branches: Vec<BranchSpec>,
    pub meta: Option<MetaNetParams>,
    pub mlp: Mlp,
}

impl Network {
    pub fn new(config: &ModelConfig) -> Self {
        let d_item = config.d_item();
        let attn = |prefix: &str| AttentionParams::new(prefix, d_item, config.n_heads, config.d_head);
        let branches = if config.uses_split() {
            vec![
                BranchSpec {
                    kind: BranchKind::Multi,
                    attention: attn("attn.multi"),
                    meta: false,
                },
                BranchSpec {
                    kind: BranchKind::Limited,
                    attention: attn("attn.limited"),
                    meta: config.uses_meta(),
                },
            ]
        } else {
            vec![BranchSpec {
                kind: BranchKind::Full,
                attention: attn("attn"),
                meta: config.uses_meta(),
            }]
        };
        let meta = config
            .uses_meta()
            .then(|| MetaNetParams::new("meta", config.d_id, config.d_side, config.meta_hidden));
        let mlp_in = branches.len() * config.n_heads * config.d_head + d_item;
        Network {
            branches,
            meta,
            mlp: Mlp::new("mlp", mlp_in, &config.mlp_hidden, 1),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        for b in &self.branches {
            b.attention.init(store, rng)?;
        }
        if let Some(meta) = &self.meta {
            meta.init(store, rng)?;
        }
        self.mlp.init(store, rng)
    }
}

/// One branch's attention output and the positions it covered.
pub struct BranchOutput {
    pub kind: BranchKind,
    pub attention: AttentionOutput,
    pub mask: Vec<bool>,
}

pub struct ForwardOutput {
    /// Clamped logits, `B×1`.
    pub logits: Var,
    /// Click probabilities, `B×1`.
    pub probs: Var,
    pub embedded: Embedded,
    pub branches: Vec<BranchOutput>,
}

/// Records the forward pass of the network described by `config` on `tape`.
pub fn forward(config: &ModelConfig, tape: &mut Tape<'_>, batch: &SampleBatch) -> Result<ForwardOutput> {
    let net = Network::new(config);
    let e = embed(tape, batch)?;
    let target = tape.concat_cols(&[e.target_id, e.target_side])?;
    let masks = config.uses_split().then(|| split_sequence(batch));

    let mut plain_kv = None;
    let mut meta_qkv = None;
    let mut branches = Vec::with_capacity(net.branches.len());
    for spec in &net.branches {
        let (query, keys, values) = if spec.meta {
            if meta_qkv.is_none() {
                let meta = net.meta.as_ref().expect("meta branch implies meta params");
                let scaled_side = meta_scale(tape, e.seq_id, e.seq_side, meta)?;
                let shifted_id = meta_shift(tape, e.seq_side, e.seq_id, meta)?;
                let (k, v) = compose_kv(tape, e.seq_id, e.seq_side, scaled_side, shifted_id)?;
                let q_side = meta_scale(tape, e.target_id, e.target_side, meta)?;
                let q = tape.concat_cols(&[e.target_id, q_side])?;
                meta_qkv = Some((q, k, v));
            }
            meta_qkv.unwrap()
        } else {
            let kv = match plain_kv {
                Some(kv) => kv,
                None => {
                    let kv = tape.concat_cols(&[e.seq_id, e.seq_side])?;
                    plain_kv = Some(kv);
                    kv
                }
            };
            (target, kv, kv)
        };
        let mask = match (spec.kind, &masks) {
            (BranchKind::Multi, Some(m)) => m.multi.clone(),
            (BranchKind::Limited, Some(m)) => m.limited.clone(),
            _ => batch.mask.clone(),
        };
        let attention = target_attention(tape, query, keys, values, &mask, batch.max_len, &spec.attention)?;
        branches.push(BranchOutput {
            kind: spec.kind,
            attention,
            mask,
        });
    }

    let mut mlp_in: Vec<Var> = branches.iter().map(|b| b.attention.interest).collect();
    mlp_in.push(target);
    let x = tape.concat_cols(&mlp_in)?;
    let raw = net.mlp.forward(tape, x)?;
    let logits = tape.clamp(raw, -LOGIT_CLAMP, LOGIT_CLAMP);
    let probs = tape.sigmoid(logits);
    Ok(ForwardOutput {
        logits,
        probs,
        embedded: e,
        branches,
    })
}

/// Trainable model: configuration, vocabularies and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocabs: Vocabularies,
    pub params: ParamStore,
}

impl Model {
    /// Deterministic initialization from `config.seed`: embedding tables
    /// first, then attention, meta networks and MLP.
    pub fn new(config: ModelConfig, vocabs: Vocabularies) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        params.insert(
            ITEM_TABLE,
            ParamKind::Embedding,
            init_table(vocabs.items.rows(), config.d_id, &mut rng),
        )?;
        params.insert(
            CATEGORY_TABLE,
            ParamKind::Embedding,
            init_table(vocabs.categories.rows(), config.d_side, &mut rng),
        )?;
        Network::new(&config).init(&mut params, &mut rng)?;
        Ok(Model { config, vocabs, params })
    }

    pub fn network(&self) -> Network {
        Network::new(&self.config)
    }

    /// Copies every parameter `other` shares by name and shape.
    pub fn copy_shared_from(&mut self, other: &Model) -> usize {
        let mut copied = 0;
        for p in self.params.iter_mut() {
            if let Some(q) = other.params.get(&p.name) {
                if q.value.shape() == p.value.shape() {
                    p.value = q.value.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    pub fn predict_batch(&self, batch: &SampleBatch) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new(&self.params);
        let out = forward(&self.config, &mut tape, batch)?;
        Ok(tape.value(out.probs).values().to_vec())
    }

    /// Loss terms on `batch` recorded on `tape`.
    pub fn loss(&self, tape: &mut Tape<'_>, batch: &SampleBatch) -> Result<LossParts> {
        model_loss(&self.config, tape, batch)
    }

    /// Pre-softmax attention scores of every branch, averaged over heads,
    /// with the positions each branch covers.
    pub fn branch_scores(&self, batch: &SampleBatch) -> Result<Vec<(Vec<f64>, Vec<bool>)>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new(&self.params);
        let out = forward(&self.config, &mut tape, batch)?;
        Ok(out
            .branches
            .iter()
            .map(|b| {
                let heads = &b.attention.scores;
                let mut mean = vec![0.0; tape.value(heads[0]).len()];
                for &h in heads {
                    for (m, v) in mean.iter_mut().zip(tape.value(h).values()) {
                        *m += v;
                    }
                }
                let n = heads.len() as f64;
                mean.iter_mut().for_each(|m| *m /= n);
                (mean, b.mask.clone())
            })
            .collect())
    }
}

/// Forward pass plus cross-entropy, auxiliary and total loss.
pub fn model_loss(config: &ModelConfig, tape: &mut Tape<'_>, batch: &SampleBatch) -> Result<LossParts> {
    let out = forward(config, tape, batch)?;
    let ce = loss_ce(tape, out.probs, &batch.labels)?;
    let aux = if config.uses_aux() {
        Some(loss_aux(tape, batch, &out.embedded, config.aux_scope)?)
    } else {
        None
    };
    let total = total_loss(tape, ce, aux, config.effective_alpha())?;
    Ok(LossParts { ce, aux, total })
}

#[cfg(test)]
mod tests;
