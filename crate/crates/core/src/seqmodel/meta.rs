//! Meta scaling and shifting networks for weakly trained id embeddings.
//!
//! The scaling network reads a (gradient-blocked) id embedding and emits one
//! multiplicative weight per side-information dimension, squashed into
//! `(0, 2)` so that a zero pre-activation is the identity. The shifting
//! network reads the (gradient-blocked) side embedding and emits a meta id,
//! which is blended into the id embedding with weight
//! `v = |meta| / (|meta| + |id| + ε)`: the weaker the id, the more the meta id
//! takes over.

use rand::Rng;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::Result;
use crate::layers::Mlp;

pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct MetaNetParams {
    pub scaling: Mlp,
    pub shifting: Mlp,
}

impl MetaNetParams {
    pub fn new(prefix: &str, d_id: usize, d_side: usize, hidden: usize) -> Self {
        MetaNetParams {
            scaling: Mlp::new(&format!("{prefix}.scale"), d_id, &[hidden], d_side),
            shifting: Mlp::new(&format!("{prefix}.shift"), d_side, &[hidden], d_id),
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.scaling.init(store, rng)?;
        self.shifting.init(store, rng)
    }
}

/// Per-dimension side weights `2·sigmoid(net(stop_gradient(id)))`.
pub fn scaling_weights(tape: &mut Tape<'_>, id_emb: Var, params: &MetaNetParams) -> Result<Var> {
    let blocked = tape.stop_gradient(id_emb)?;
    let logits = params.scaling.forward(tape, blocked)?;
    let s = tape.sigmoid(logits);
    Ok(tape.scale(s, 2.0))
}

/// Field-wise rescaled side embedding.
pub fn meta_scale(tape: &mut Tape<'_>, id_emb: Var, side_emb: Var, params: &MetaNetParams) -> Result<Var> {
    let w = scaling_weights(tape, id_emb, params)?;
    tape.mul(w, side_emb)
}

/// Meta id generated from the (gradient-blocked) side embedding.
pub fn meta_id(tape: &mut Tape<'_>, side_emb: Var, params: &MetaNetParams) -> Result<Var> {
    let blocked = tape.stop_gradient(side_emb)?;
    params.shifting.forward(tape, blocked)
}

/// `v·meta + (1 − v)·id` with `v = |meta| / (|meta| + |id| + ε)` per row.
pub fn norm_ratio_blend(tape: &mut Tape<'_>, meta: Var, id_emb: Var) -> Result<Var> {
    let meta_norm = tape.row_norm(meta)?;
    let id_norm = tape.row_norm(id_emb)?;
    let sum = tape.add(meta_norm, id_norm)?;
    let denom = tape.add_scalar(sum, NORM_EPS);
    let v = tape.div(meta_norm, denom)?;
    tape.row_blend(meta, id_emb, v)
}

/// Id embedding shifted towards the meta id generated from side information.
pub fn meta_shift(tape: &mut Tape<'_>, side_emb: Var, id_emb: Var, params: &MetaNetParams) -> Result<Var> {
    let meta = meta_id(tape, side_emb, params)?;
    norm_ratio_blend(tape, meta, id_emb)
}

/// Keys `Concat[id, scaled side]` and values `Concat[shifted id, side]`.
pub fn compose_kv(tape: &mut Tape<'_>, id_emb: Var, side_emb: Var, scaled_side: Var, shifted_id: Var) -> Result<(Var, Var)> {
    let k = tape.concat_cols(&[id_emb, scaled_side])?;
    let v = tape.concat_cols(&[shifted_id, side_emb])?;
    Ok((k, v))
}
