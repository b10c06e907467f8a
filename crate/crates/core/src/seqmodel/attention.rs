use rand::Rng;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::Linear;

/// Multi-head target attention: the candidate item is the query and the
/// behaviour sequence supplies keys and values.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub prefix: String,
    pub d_in: usize,
    pub n_heads: usize,
    pub d_head: usize,
}

impl AttentionParams {
    pub fn new(prefix: impl Into<String>, d_in: usize, n_heads: usize, d_head: usize) -> Self {
        AttentionParams {
            prefix: prefix.into(),
            d_in,
            n_heads,
            d_head,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.n_heads * self.d_head
    }

    fn projection(&self, role: &str, head: usize) -> Linear {
        Linear::new(format!("{}.{role}{head}", self.prefix), self.d_in, self.d_head).without_bias()
    }

    pub fn combine(&self) -> Linear {
        Linear::new(format!("{}.out", self.prefix), self.out_dim(), self.out_dim()).without_bias()
    }

    pub fn query(&self, head: usize) -> Linear {
        self.projection("q", head)
    }

    pub fn key(&self, head: usize) -> Linear {
        self.projection("k", head)
    }

    pub fn value(&self, head: usize) -> Linear {
        self.projection("v", head)
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for h in 0..self.n_heads {
            self.query(h).init(store, rng)?;
            self.key(h).init(store, rng)?;
            self.value(h).init(store, rng)?;
        }
        self.combine().init(store, rng)
    }
}

pub struct AttentionOutput {
    /// `B×(n_heads·d_head)`; zero for rows without any unmasked position.
    pub interest: Var,
    /// Pre-softmax scores `q·kᵀ/√d_head`, one `B×H` tensor per head.
    pub scores: Vec<Var>,
    /// Attention weights, one `B×H` tensor per head.
    pub weights: Vec<Var>,
}

/// `softmax(QKᵀ/√d)·V` per head over the positions where `mask` is true,
/// heads concatenated and mixed by the output matrix.
pub fn target_attention(
    tape: &mut Tape<'_>,
    query: Var,
    keys: Var,
    values: Var,
    mask: &[bool],
    max_len: usize,
    params: &AttentionParams,
) -> Result<AttentionOutput> {
    let b = tape.value(query).rows();
    for (what, v) in [("query", query), ("keys", keys), ("values", values)] {
        let t = tape.value(v);
        let rows = if what == "query" { b } else { b * max_len };
        if t.shape().len() != 2 || t.rows() != rows || t.cols() != params.d_in {
            return Err(Error::shape(
                "target_attention",
                format!("{what} has shape {:?}, expected [{rows}x{}]", t.shape(), params.d_in),
            ));
        }
    }
    if mask.len() != b * max_len {
        return Err(Error::shape(
            "target_attention",
            format!("mask length {} for {b} rows of {max_len}", mask.len()),
        ));
    }
    let temperature = 1.0 / (params.d_head as f64).sqrt();
    let mut heads = Vec::with_capacity(params.n_heads);
    let mut scores = Vec::with_capacity(params.n_heads);
    let mut weights = Vec::with_capacity(params.n_heads);
    for h in 0..params.n_heads {
        let q = params.query(h).forward(tape, query)?;
        let k = params.key(h).forward(tape, keys)?;
        let v = params.value(h).forward(tape, values)?;
        let raw = tape.group_dot(q, k, max_len)?;
        let s = tape.scale(raw, temperature);
        let w = tape.softmax_rows(s, Some(mask))?;
        heads.push(tape.group_pool(w, v, max_len)?);
        scores.push(s);
        weights.push(w);
    }
    let cat = tape.concat_cols(&heads)?;
    let interest = params.combine().forward(tape, cat)?;
    Ok(AttentionOutput {
        interest,
        scores,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamKind;
    use crate::tensor::Tensor;

    fn set(store: &mut ParamStore, name: &str, rows: usize, cols: usize, v: &[f64]) {
        store.insert(name, ParamKind::Dense, Tensor::matrix(rows, cols, v.to_vec()).unwrap()).unwrap();
    }

    fn identity_params(store: &mut ParamStore) -> AttentionParams {
        let p = AttentionParams::new("a", 2, 1, 2);
        let eye = [1.0, 0.0, 0.0, 1.0];
        set(store, "a.q0.w", 2, 2, &eye);
        set(store, "a.k0.w", 2, 2, &eye);
        set(store, "a.v0.w", 2, 2, &eye);
        set(store, "a.out.w", 2, 2, &eye);
        p
    }

    #[test]
    fn single_key_passes_its_value() {
        let mut store = ParamStore::new();
        let p = AttentionParams::new("a", 2, 1, 2);
        set(&mut store, "a.q0.w", 2, 2, &[0.3, -0.1, 0.2, 0.5]);
        set(&mut store, "a.k0.w", 2, 2, &[1.0, 2.0, -1.0, 0.5]);
        set(&mut store, "a.v0.w", 2, 2, &[2.0, 0.0, 1.0, 1.0]);
        set(&mut store, "a.out.w", 2, 2, &[1.0, 1.0, 0.0, 2.0]);
        let mut tape = Tape::new(&store);
        let q = tape.constant(Tensor::from_rows(&[&[0.4, 0.9]]).unwrap());
        let kv = tape.constant(Tensor::from_rows(&[&[1.0, -2.0]]).unwrap());
        let out = target_attention(&mut tape, q, kv, kv, &[true], 1, &p).unwrap();
        // v = [1,-2]·Wv = [0, -2]; combine: [0·1 + -2·0, 0·1 + -2·2] = [0, -4]
        assert_eq!(tape.value(out.interest).values(), &[0.0, -4.0]);
    }

    #[test]
    fn identical_keys_split_weight_evenly() {
        let mut store = ParamStore::new();
        let p = identity_params(&mut store);
        let mut tape = Tape::new(&store);
        let q = tape.constant(Tensor::from_rows(&[&[0.7, -0.2]]).unwrap());
        let kv = tape.constant(Tensor::from_rows(&[&[1.0, 3.0], &[1.0, 3.0]]).unwrap());
        let out = target_attention(&mut tape, q, kv, kv, &[true, true], 2, &p).unwrap();
        assert_eq!(tape.value(out.weights[0]).values(), &[0.5, 0.5]);
    }

    #[test]
    fn hand_computed_two_position_case() {
        let mut store = ParamStore::new();
        let p = AttentionParams::new("a", 2, 1, 2);
        set(&mut store, "a.q0.w", 2, 2, &[1.0, 0.0, 0.0, 2.0]);
        set(&mut store, "a.k0.w", 2, 2, &[1.0, 1.0, 0.0, 1.0]);
        set(&mut store, "a.v0.w", 2, 2, &[1.0, 0.0, 1.0, 1.0]);
        set(&mut store, "a.out.w", 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let mut tape = Tape::new(&store);
        let q = tape.constant(Tensor::from_rows(&[&[1.0, 0.5]]).unwrap());
        let keys = tape.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
        let out = target_attention(&mut tape, q, keys, keys, &[true, true], 2, &p).unwrap();
        // q = [1, 1]; k1 = [1, 1], k2 = [0, 1]; scores = [2, 1]/sqrt(2)
        let s = tape.value(out.scores[0]).values().to_vec();
        let r2 = 2f64.sqrt();
        assert!((s[0] - 2.0 / r2).abs() < 1e-15 && (s[1] - 1.0 / r2).abs() < 1e-15);
        let e = (1.0 / r2).exp();
        let (w1, w2) = (e / (e + 1.0), 1.0 / (e + 1.0));
        // v1 = [1, 0], v2 = [1, 1]
        let want = [w1 + w2, w2];
        let got = tape.value(out.interest).values();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-14, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn all_masked_row_gives_zero_interest() {
        let mut store = ParamStore::new();
        let p = identity_params(&mut store);
        let mut tape = Tape::new(&store);
        let q = tape.constant(Tensor::from_rows(&[&[0.7, -0.2], &[0.1, 0.1]]).unwrap());
        let kv = tape.constant(Tensor::from_rows(&[&[1.0, 3.0], &[2.0, 1.0], &[1.0, 1.0], &[5.0, 5.0]]).unwrap());
        let out = target_attention(&mut tape, q, kv, kv, &[false, false, true, false], 2, &p).unwrap();
        let v = tape.value(out.interest).values();
        assert_eq!(&v[..2], &[0.0, 0.0]);
        assert_eq!(&v[2..], &[1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut store = ParamStore::new();
        let p = identity_params(&mut store);
        let mut tape = Tape::new(&store);
        let q = tape.constant(Tensor::from_rows(&[&[0.7, -0.2]]).unwrap());
        let kv = tape.constant(Tensor::from_rows(&[&[1.0, 3.0, 1.0]]).unwrap());
        assert!(matches!(
            target_attention(&mut tape, q, kv, kv, &[true], 1, &p),
            Err(Error::Shape { .. })
        ));
    }
}
