//! Vocabularies, batch encoding and embedding lookup.
//!
//! Index 0 of every vocabulary is reserved for ids never seen during
//! training. Its embedding row is trainable and is what cold items fall
//! back to at evaluation time.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::datagen::ImpressionRecord;
use crate::error::Result;
use crate::tensor::Tensor;

pub const ITEM_TABLE: &str = "emb.item";
pub const CATEGORY_TABLE: &str = "emb.category";

/// Dense ids in first-seen order, starting at 1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<u64>", into = "Vec<u64>")]
pub struct Vocab {
    order: Vec<u64>,
    map: HashMap<u64, usize>,
}

impl From<Vec<u64>> for Vocab {
    fn from(order: Vec<u64>) -> Self {
        let map = order.iter().enumerate().map(|(i, &id)| (id, i + 1)).collect();
        Vocab { order, map }
    }
}

impl From<Vocab> for Vec<u64> {
    fn from(v: Vocab) -> Self {
        v.order
    }
}

impl Vocab {
    pub fn insert(&mut self, id: u64) -> usize {
        if let Some(&i) = self.map.get(&id) {
            return i;
        }
        self.order.push(id);
        let i = self.order.len();
        self.map.insert(id, i);
        i
    }

    /// Dense index, or 0 when `id` was never seen.
    pub fn index(&self, id: u64) -> usize {
        self.map.get(&id).copied().unwrap_or(0)
    }

    pub fn contains(&self, id: u64) -> bool {
        self.map.contains_key(&id)
    }

    /// Number of assigned ids (excluding the reserved row).
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Embedding rows needed: one per id plus the reserved row 0.
    pub fn rows(&self) -> usize {
        self.order.len() + 1
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub items: Vocab,
    pub categories: Vocab,
}

/// Builds item and category vocabularies from training records. Each record
/// contributes its target first, then its history from most recent.
pub fn build_vocab(records: &[ImpressionRecord]) -> Vocabularies {
    let mut v = Vocabularies::default();
    for r in records {
        v.items.insert(r.item_id);
        v.categories.insert(r.item_category as u64);
        for h in &r.user_history {
            v.items.insert(h.item_id);
            v.categories.insert(h.category_id as u64);
        }
    }
    v
}

/// Encoded features for `B` impressions with histories padded to `H`.
/// Sequence fields are row-major `B×H`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub batch_size: usize,
    pub max_len: usize,
    pub target_item: Vec<usize>,
    pub target_category: Vec<usize>,
    pub seq_item: Vec<usize>,
    pub seq_category: Vec<usize>,
    pub mask: Vec<bool>,
    pub seq_limited: Vec<bool>,
    pub labels: Vec<f64>,
    pub is_new: Vec<bool>,
    pub is_limited: Vec<bool>,
    pub user_id: Vec<u64>,
    pub item_id: Vec<u64>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.batch_size
    }

    pub fn is_empty(&self) -> bool {
        self.batch_size == 0
    }

    /// Sequence indices of batch row `b`.
    pub fn positions(&self, b: usize) -> std::ops::Range<usize> {
        b * self.max_len..(b + 1) * self.max_len
    }
}

/// Encodes records against `vocabs`, keeping at most the `max_len` most
/// recent history entries and right-padding with index 0.
pub fn encode_batch<'a, I>(records: I, vocabs: &Vocabularies, max_len: usize) -> SampleBatch
where
    I: IntoIterator<Item = &'a ImpressionRecord>,
{
    assert!(max_len >= 1, "history length must be at least 1");
    let mut b = SampleBatch {
        batch_size: 0,
        max_len,
        target_item: Vec::new(),
        target_category: Vec::new(),
        seq_item: Vec::new(),
        seq_category: Vec::new(),
        mask: Vec::new(),
        seq_limited: Vec::new(),
        labels: Vec::new(),
        is_new: Vec::new(),
        is_limited: Vec::new(),
        user_id: Vec::new(),
        item_id: Vec::new(),
    };
    for r in records {
        b.batch_size += 1;
        b.target_item.push(vocabs.items.index(r.item_id));
        b.target_category.push(vocabs.categories.index(r.item_category as u64));
        b.labels.push(f64::from(r.label));
        b.is_new.push(r.item_is_new);
        b.is_limited.push(r.item_is_limited);
        b.user_id.push(r.user_id);
        b.item_id.push(r.item_id);
        let kept = r.user_history.len().min(max_len);
        for h in &r.user_history[..kept] {
            b.seq_item.push(vocabs.items.index(h.item_id));
            b.seq_category.push(vocabs.categories.index(h.category_id as u64));
            b.mask.push(true);
            b.seq_limited.push(h.is_limited);
        }
        for _ in kept..max_len {
            b.seq_item.push(0);
            b.seq_category.push(0);
            b.mask.push(false);
            b.seq_limited.push(false);
        }
    }
    b
}

/// Uniform(-r, r) initialization with `r = 1/sqrt(dim)`.
pub fn init_table<R: Rng>(rows: usize, dim: usize, rng: &mut R) -> Tensor {
    let r = 1.0 / (dim as f64).sqrt();
    let values = (0..rows * dim).map(|_| rng.random_range(-r..r)).collect();
    Tensor::new(vec![rows, dim], values).expect("consistent shape")
}

/// Embeddings of one batch. Sequence tensors are `(B·H)×D`.
#[derive(Clone, Copy, Debug)]
pub struct Embedded {
    pub target_id: Var,
    pub target_side: Var,
    pub seq_id: Var,
    pub seq_side: Var,
}

/// Gathers id and side embeddings for targets and sequences from the shared
/// item and category tables.
pub fn embed(tape: &mut Tape<'_>, batch: &SampleBatch) -> Result<Embedded> {
    let items = tape.param(ITEM_TABLE)?;
    let cats = tape.param(CATEGORY_TABLE)?;
    Ok(Embedded {
        target_id: tape.gather_rows(items, &batch.target_item)?,
        target_side: tape.gather_rows(cats, &batch.target_category)?,
        seq_id: tape.gather_rows(items, &batch.seq_item)?,
        seq_side: tape.gather_rows(cats, &batch.seq_category)?,
    })
}

/// `Concat[id, side]` per row.
pub fn item_embedding(tape: &mut Tape<'_>, id: Var, side: Var) -> Result<Var> {
    tape.concat_cols(&[id, side])
}
