//! Stock-aware sequence modelling: split, target attention, meta networks.

mod attention;
mod diagnostic;
mod meta;
mod split;

pub use attention::{target_attention, AttentionOutput, AttentionParams};
pub use diagnostic::{attention_score_table, ScoreTable};
pub use meta::{
    compose_kv, meta_id, meta_scale, meta_shift, norm_ratio_blend, scaling_weights, MetaNetParams, NORM_EPS,
};
pub use split::{physical_split, split_sequence, SplitMasks};
