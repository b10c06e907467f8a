use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::features::{Embedded, SampleBatch, CATEGORY_TABLE, ITEM_TABLE};

use super::AuxScope;

const COSINE_EPS: f64 = 1e-12;

/// Scalar loss terms of one batch. `aux` is `None` when the auxiliary loss
/// is switched off.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub ce: Var,
    pub aux: Option<Var>,
    pub total: Var,
}

/// Mean negative log-likelihood.
pub fn loss_ce(tape: &mut Tape<'_>, probs: Var, labels: &[f64]) -> Result<Var> {
    tape.bce_mean(probs, labels)
}

/// Mean squared gap between (gradient-blocked) side-information cosine
/// similarity and id cosine similarity of target and sequence items, over the
/// sequence positions selected by `scope`. Zero when no position qualifies.
pub fn loss_aux(tape: &mut Tape<'_>, batch: &SampleBatch, embedded: &Embedded, scope: AuxScope) -> Result<Var> {
    let h = batch.max_len;
    let repeat = |ids: &[usize]| -> Vec<usize> { ids.iter().flat_map(|&i| std::iter::repeat_n(i, h)).collect() };
    let items = tape.param(ITEM_TABLE)?;
    let cats = tape.param(CATEGORY_TABLE)?;
    let target_id = tape.gather_rows(items, &repeat(&batch.target_item))?;
    let target_side = tape.gather_rows(cats, &repeat(&batch.target_category))?;

    let side_sim = tape.cosine_sim_rows(target_side, embedded.seq_side, COSINE_EPS)?;
    let side_sim = tape.stop_gradient(side_sim)?;
    let id_sim = tape.cosine_sim_rows(target_id, embedded.seq_id, COSINE_EPS)?;
    let sq = tape.squared_error(side_sim, id_sim)?;
    let mask: Vec<bool> = match scope {
        AuxScope::LimitedOnly => batch.mask.iter().zip(&batch.seq_limited).map(|(&v, &l)| v && l).collect(),
        AuxScope::Both => batch.mask.clone(),
    };
    tape.masked_mean(sq, &mask)
}

/// `ce + α·aux`; plain `ce` when there is no auxiliary term or `α = 0`.
pub fn total_loss(tape: &mut Tape<'_>, ce: Var, aux: Option<Var>, alpha: f64) -> Result<Var> {
    match aux {
        Some(a) if alpha != 0.0 => {
            let weighted = tape.scale(a, alpha);
            tape.add(ce, weighted)
        }
        _ => Ok(ce),
    }
}
