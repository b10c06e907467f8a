//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] borrows a [`ParamStore`] for the duration of one forward and
//! backward pass. Every operation evaluates eagerly and appends a node whose
//! inputs precede it, so reverse iteration over the node list is a valid
//! topological order for backpropagation.

use std::collections::{BTreeMap, HashMap};

use crate::autodiff::grad::{Grad, GradMap, SparseRows};
use crate::autodiff::params::{ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Value {
    Owned(Tensor),
    Param(usize),
}

enum Op {
    Leaf,
    Gather { src: usize, indices: Vec<usize> },
    MatMul { a: usize, b: usize },
    ConcatCols { inputs: Vec<usize> },
    Softmax { x: usize },
    Sigmoid { x: usize },
    LeakyRelu { x: usize, slope: f64 },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    AddRow { x: usize, bias: usize },
    Scale { x: usize, c: f64 },
    AddScalar { x: usize },
    Clamp { x: usize, lo: f64, hi: f64 },
    RowBlend { a: usize, b: usize, w: usize },
    RowNorm { x: usize },
    Cosine { a: usize, b: usize, eps: f64 },
    GroupDot { q: usize, k: usize, group: usize },
    GroupPool { w: usize, v: usize, group: usize },
    MaskedMean { x: usize, mask: Vec<bool>, count: usize },
    SquaredError { a: usize, b: usize },
    BceMean { p: usize, labels: Vec<f64> },
    Sum { x: usize },
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<usize, Var>,
    registered: Vec<usize>,
    stopped: Vec<Tensor>,
    frozen: Option<Vec<Tensor>>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            registered: Vec::new(),
            stopped: Vec::new(),
            frozen: None,
        }
    }

    /// A tape whose `stop_gradient` calls return the given values, in call
    /// order, instead of their inputs. Finite-difference checks use this to
    /// hold gradient-blocked quantities at their unperturbed values.
    pub fn with_frozen_stops(store: &'p ParamStore, stops: Vec<Tensor>) -> Self {
        let mut tape = Tape::new(store);
        tape.frozen = Some(stops);
        tape
    }

    /// Values produced by `stop_gradient` so far, in call order.
    pub fn stopped_values(&self) -> &[Tensor] {
        &self.stopped
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.value_of(v.0)
    }

    fn value_of(&self, id: usize) -> &Tensor {
        match &self.nodes[id].value {
            Value::Owned(t) => t,
            Value::Param(p) => &self.store.by_index(*p).value,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node_label(&self, id: usize) -> String {
        match &self.nodes[id].value {
            Value::Param(p) => self.store.by_index(*p).name.clone(),
            Value::Owned(_) => format!("node#{id}"),
        }
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Registers a trainable leaf. Registering the same name twice returns the
    /// same handle.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let idx = self
            .store
            .index_of(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if let Some(&v) = self.param_vars.get(&idx) {
            return Ok(v);
        }
        self.nodes.push(Node {
            value: Value::Param(idx),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(idx, v);
        self.registered.push(idx);
        Ok(v)
    }

    fn require_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn require_2d(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::shape(op, format!("expected 2-D, got {:?}", t.shape())));
        }
        Ok((t.rows(), t.cols()))
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, dim) = self.require_2d("gather_rows", table)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::IndexOutOfRange {
                table: self.node_label(table.0),
                index: bad,
                rows,
            });
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            out.extend_from_slice(src.row(i));
        }
        let t = Tensor::new(vec![indices.len(), dim], out)?;
        Ok(self.push(
            t,
            Op::Gather {
                src: table.0,
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.require_2d("matmul", a)?;
        let (k2, m) = self.require_2d("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{n}x{k}] * [{k2}x{m}]")));
        }
        let (av, bv) = (self.value(a).values(), self.value(b).values());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * m..(p + 1) * m];
                for (o, &bpj) in orow.iter_mut().zip(brow) {
                    *o += aip * bpj;
                }
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        Ok(self.push(t, Op::MatMul { a: a.0, b: b.0 }))
    }

    pub fn concat_cols(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let n = self.require_2d("concat_cols", inputs[0])?.0;
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let (r, c) = self.require_2d("concat_cols", v)?;
            if r != n {
                return Err(Error::shape("concat_cols", format!("row counts {n} vs {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &v in inputs {
                out.extend_from_slice(self.value(v).row(i));
            }
        }
        let t = Tensor::new(vec![n, total], out)?;
        Ok(self.push(
            t,
            Op::ConcatCols {
                inputs: inputs.iter().map(|v| v.0).collect(),
            },
        ))
    }

    /// Row-wise softmax. Masked entries (mask `false`) are exactly zero and a
    /// row with no unmasked entry is all zeros.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (n, m) = self.require_2d("softmax_rows", x)?;
        if let Some(mask) = mask {
            if mask.len() != n * m {
                return Err(Error::shape(
                    "softmax_rows",
                    format!("mask length {} for [{n}x{m}]", mask.len()),
                ));
            }
        }
        let keep = |j: usize| mask.is_none_or(|mk| mk[j]);
        let xv = self.value(x).values();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let base = i * m;
            let mut max = f64::NEG_INFINITY;
            for j in 0..m {
                if keep(base + j) && xv[base + j] > max {
                    max = xv[base + j];
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for j in 0..m {
                if keep(base + j) {
                    let e = (xv[base + j] - max).exp();
                    out[base + j] = e;
                    sum += e;
                }
            }
            for j in 0..m {
                if keep(base + j) {
                    out[base + j] /= sum;
                }
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        Ok(self.push(t, Op::Softmax { x: x.0 }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.map(x, sigmoid);
        self.push(t, Op::Sigmoid { x: x.0 })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let t = self.map(x, |v| if v > 0.0 { v } else { slope * v });
        self.push(t, Op::LeakyRelu { x: x.0, slope })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul { a: a.0, b: b.0 }))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("div", a, b, |x, y| x / y)?;
        Ok(self.push(t, Op::Div { a: a.0, b: b.0 }))
    }

    /// `x[i, j] + bias[j]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.require_2d("add_row", x)?;
        let bv = self.value(bias).values();
        if bv.len() != m {
            return Err(Error::shape("add_row", format!("bias {} for width {m}", bv.len())));
        }
        let xv = self.value(x).values();
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            out.extend(xv[i * m..(i + 1) * m].iter().zip(bv).map(|(a, b)| a + b));
        }
        let t = Tensor::new(vec![n, m], out)?;
        Ok(self.push(t, Op::AddRow { x: x.0, bias: bias.0 }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.map(x, |v| c * v);
        self.push(t, Op::Scale { x: x.0, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.map(x, |v| v + c);
        self.push(t, Op::AddScalar { x: x.0 })
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = self.map(x, |v| v.clamp(lo, hi));
        self.push(t, Op::Clamp { x: x.0, lo, hi })
    }

    /// Per-row convex blend `w[i]·a[i] + (1 − w[i])·b[i]`.
    pub fn row_blend(&mut self, a: Var, b: Var, w: Var) -> Result<Var> {
        self.require_same_shape("row_blend", a, b)?;
        let (n, m) = self.require_2d("row_blend", a)?;
        let wv = self.value(w).values();
        if wv.len() != n {
            return Err(Error::shape("row_blend", format!("{} weights for {n} rows", wv.len())));
        }
        let (av, bv) = (self.value(a).values(), self.value(b).values());
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let wi = wv[i];
            for j in 0..m {
                out.push(wi * av[i * m + j] + (1.0 - wi) * bv[i * m + j]);
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        Ok(self.push(t, Op::RowBlend { a: a.0, b: b.0, w: w.0 }))
    }

    /// Euclidean norm of each row, shape `[N]`.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let (n, _) = self.require_2d("row_norm", x)?;
        let xt = self.value(x);
        let out = (0..n).map(|i| norm(xt.row(i))).collect();
        Ok(self.push(Tensor::vector(out), Op::RowNorm { x: x.0 }))
    }

    /// Row-wise cosine similarity `dot(a_i, b_i) / (|a_i|·|b_i| + eps)`;
    /// `b` is either one row (broadcast) or one row per row of `a`.
    pub fn cosine_sim_rows(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.require_2d("cosine_sim_rows", a)?;
        let (nb, db) = self.require_2d("cosine_sim_rows", b)?;
        if db != d || (nb != 1 && nb != n) {
            return Err(Error::shape("cosine_sim_rows", format!("[{n}x{d}] vs [{nb}x{db}]")));
        }
        let (at, bt) = (self.value(a), self.value(b));
        let out = (0..n)
            .map(|i| {
                let (ar, br) = (at.row(i), bt.row(if nb == 1 { 0 } else { i }));
                dot(ar, br) / (norm(ar) * norm(br) + eps)
            })
            .collect();
        Ok(self.push(Tensor::vector(out), Op::Cosine { a: a.0, b: b.0, eps }))
    }

    /// Scores `s[b, g] = q[b] · k[b·group + g]`, shape `[B×group]`.
    pub fn group_dot(&mut self, q: Var, k: Var, group: usize) -> Result<Var> {
        let (nb, d) = self.require_2d("group_dot", q)?;
        let (nk, dk) = self.require_2d("group_dot", k)?;
        if dk != d || nk != nb * group {
            return Err(Error::shape(
                "group_dot",
                format!("q [{nb}x{d}], k [{nk}x{dk}], group {group}"),
            ));
        }
        let (qt, kt) = (self.value(q), self.value(k));
        let mut out = Vec::with_capacity(nb * group);
        for b in 0..nb {
            for g in 0..group {
                out.push(dot(qt.row(b), kt.row(b * group + g)));
            }
        }
        let t = Tensor::new(vec![nb, group], out)?;
        Ok(self.push(t, Op::GroupDot { q: q.0, k: k.0, group }))
    }

    /// Weighted pooling `out[b] = Σ_g w[b, g] · v[b·group + g]`. Terms with a
    /// weight of exactly zero are skipped.
    pub fn group_pool(&mut self, w: Var, v: Var, group: usize) -> Result<Var> {
        let (nb, g2) = self.require_2d("group_pool", w)?;
        let (nv, d) = self.require_2d("group_pool", v)?;
        if g2 != group || nv != nb * group {
            return Err(Error::shape(
                "group_pool",
                format!("w [{nb}x{g2}], v [{nv}x{d}], group {group}"),
            ));
        }
        let (wt, vt) = (self.value(w).values(), self.value(v));
        let mut out = vec![0.0; nb * d];
        for b in 0..nb {
            let orow = &mut out[b * d..(b + 1) * d];
            for g in 0..group {
                let wg = wt[b * group + g];
                if wg == 0.0 {
                    continue;
                }
                for (o, &x) in orow.iter_mut().zip(vt.row(b * group + g)) {
                    *o += wg * x;
                }
            }
        }
        let t = Tensor::new(vec![nb, d], out)?;
        Ok(self.push(t, Op::GroupPool { w: w.0, v: v.0, group }))
    }

    /// Forward identity that passes no gradient back to `x`.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var> {
        let k = self.stopped.len();
        let value = match &self.frozen {
            Some(frozen) => {
                let f = frozen.get(k).ok_or_else(|| {
                    Error::shape("stop_gradient", format!("no frozen value for call {k}"))
                })?;
                if f.shape() != self.value(x).shape() {
                    return Err(Error::shape("stop_gradient", "frozen value shape differs"));
                }
                f.clone()
            }
            None => self.value(x).clone(),
        };
        self.stopped.push(value.clone());
        Ok(self.push(value, Op::Leaf))
    }

    /// Mean of the entries whose mask is `true`; zero when none are.
    pub fn masked_mean(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let xv = self.value(x).values();
        if mask.len() != xv.len() {
            return Err(Error::shape(
                "masked_mean",
                format!("mask {} for {} values", mask.len(), xv.len()),
            ));
        }
        let mut sum = 0.0;
        let mut count = 0;
        for (v, &m) in xv.iter().zip(mask) {
            if m {
                sum += v;
                count += 1;
            }
        }
        let mean = if count == 0 { 0.0 } else { sum / count as f64 };
        Ok(self.push(
            Tensor::scalar(mean),
            Op::MaskedMean {
                x: x.0,
                mask: mask.to_vec(),
                count,
            },
        ))
    }

    /// Elementwise `(a − b)²`.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("squared_error", a, b, |x, y| (x - y) * (x - y))?;
        Ok(self.push(t, Op::SquaredError { a: a.0, b: b.0 }))
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 labels.
    pub fn bce_mean(&mut self, p: Var, labels: &[f64]) -> Result<Var> {
        let pv = self.value(p).values();
        if pv.len() != labels.len() || pv.is_empty() {
            return Err(Error::shape(
                "bce_mean",
                format!("{} probabilities, {} labels", pv.len(), labels.len()),
            ));
        }
        let total: f64 = pv
            .iter()
            .zip(labels)
            .map(|(&p, &y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
            .sum();
        let loss = total / pv.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceMean {
                p: p.0,
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x: x.0 })
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        let values = t.values().iter().map(|&v| f(v)).collect();
        Tensor::new(t.shape().to_vec(), values).expect("same shape")
    }

    fn zip(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.require_same_shape(op, a, b)?;
        let (at, bt) = (self.value(a), self.value(b));
        let values = at.values().iter().zip(bt.values()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(at.shape().to_vec(), values)
    }

    /// Backpropagates from a scalar `loss`, consuming the tape. Every
    /// registered parameter receives a gradient; unreached ones are zero.
    pub fn backward(self, loss: Var) -> Result<GradMap> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut sparse: BTreeMap<usize, SparseRows> = BTreeMap::new();
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let out = self.value_of(id);
            match &self.nodes[id].op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                Op::Gather { src, indices } => {
                    let table = self.value_of(*src);
                    let dim = table.cols();
                    let sparse_src = match self.nodes[*src].value {
                        Value::Param(p) => self.store.by_index(p).kind == ParamKind::Embedding,
                        Value::Owned(_) => false,
                    };
                    if sparse_src {
                        let rows = sparse
                            .entry(*src)
                            .or_insert_with(|| SparseRows::new(table.rows(), dim));
                        for (r, &i) in indices.iter().enumerate() {
                            rows.add_row(i, &g[r * dim..(r + 1) * dim]);
                        }
                    } else {
                        let dst = slot(&mut grads, *src, table.len());
                        for (r, &i) in indices.iter().enumerate() {
                            for c in 0..dim {
                                dst[i * dim + c] += g[r * dim + c];
                            }
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let (at, bt) = (self.value_of(*a), self.value_of(*b));
                    let (n, k, m) = (at.rows(), at.cols(), bt.cols());
                    let (av, bv) = (at.values(), bt.values());
                    {
                        let da = slot(&mut grads, *a, n * k);
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            for p in 0..k {
                                da[i * k + p] += dot(grow, &bv[p * m..(p + 1) * m]);
                            }
                        }
                    }
                    let db = slot(&mut grads, *b, k * m);
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (d, &gj) in db[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *d += aip * gj;
                            }
                        }
                    }
                }
                Op::ConcatCols { inputs } => {
                    let n = out.rows();
                    let total = out.cols();
                    let mut offset = 0;
                    for &inp in inputs {
                        let w = self.value_of(inp).cols();
                        let dst = slot(&mut grads, inp, n * w);
                        for i in 0..n {
                            for c in 0..w {
                                dst[i * w + c] += g[i * total + offset + c];
                            }
                        }
                        offset += w;
                    }
                }
                Op::Softmax { x } => {
                    let (n, m) = (out.rows(), out.cols());
                    let y = out.values();
                    let dx = slot(&mut grads, *x, n * m);
                    for i in 0..n {
                        let (yr, gr) = (&y[i * m..(i + 1) * m], &g[i * m..(i + 1) * m]);
                        let s = dot(yr, gr);
                        for j in 0..m {
                            dx[i * m + j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    let y = out.values();
                    let dx = slot(&mut grads, *x, y.len());
                    for ((d, &yi), &gi) in dx.iter_mut().zip(y).zip(&g) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value_of(*x).values();
                    let dx = slot(&mut grads, *x, xv.len());
                    for ((d, &xi), &gi) in dx.iter_mut().zip(xv).zip(&g) {
                        *d += if xi > 0.0 { gi } else { slope * gi };
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.len(), |j| g[j]);
                    accumulate(&mut grads, *b, g.len(), |j| g[j]);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, *a, g.len(), |j| g[j]);
                    accumulate(&mut grads, *b, g.len(), |j| -g[j]);
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (self.value_of(*a).values(), self.value_of(*b).values());
                    accumulate(&mut grads, *a, g.len(), |j| g[j] * bv[j]);
                    accumulate(&mut grads, *b, g.len(), |j| g[j] * av[j]);
                }
                Op::Div { a, b } => {
                    let (av, bv) = (self.value_of(*a).values(), self.value_of(*b).values());
                    accumulate(&mut grads, *a, g.len(), |j| g[j] / bv[j]);
                    accumulate(&mut grads, *b, g.len(), |j| -g[j] * av[j] / (bv[j] * bv[j]));
                }
                Op::AddRow { x, bias } => {
                    accumulate(&mut grads, *x, g.len(), |j| g[j]);
                    let m = out.cols();
                    let db = slot(&mut grads, *bias, m);
                    for (j, &gi) in g.iter().enumerate() {
                        db[j % m] += gi;
                    }
                }
                Op::Scale { x, c } => accumulate(&mut grads, *x, g.len(), |j| c * g[j]),
                Op::AddScalar { x } => accumulate(&mut grads, *x, g.len(), |j| g[j]),
                Op::Clamp { x, lo, hi } => {
                    let xv = self.value_of(*x).values();
                    accumulate(&mut grads, *x, g.len(), |j| {
                        if xv[j] >= *lo && xv[j] <= *hi {
                            g[j]
                        } else {
                            0.0
                        }
                    });
                }
                Op::RowBlend { a, b, w } => {
                    let m = out.cols();
                    let (av, bv) = (self.value_of(*a).values(), self.value_of(*b).values());
                    let wv = self.value_of(*w).values();
                    accumulate(&mut grads, *a, g.len(), |j| wv[j / m] * g[j]);
                    accumulate(&mut grads, *b, g.len(), |j| (1.0 - wv[j / m]) * g[j]);
                    let dw = slot(&mut grads, *w, wv.len());
                    for (j, &gi) in g.iter().enumerate() {
                        dw[j / m] += gi * (av[j] - bv[j]);
                    }
                }
                Op::RowNorm { x } => {
                    let xt = self.value_of(*x);
                    let d = xt.cols();
                    let norms = out.values();
                    let dx = slot(&mut grads, *x, xt.len());
                    for (i, (&n, &gi)) in norms.iter().zip(&g).enumerate() {
                        if n > 0.0 {
                            for c in 0..d {
                                dx[i * d + c] += gi * xt.values()[i * d + c] / n;
                            }
                        }
                    }
                }
                Op::Cosine { a, b, eps } => {
                    let (at, bt) = (self.value_of(*a), self.value_of(*b));
                    let (n, d, nb) = (at.rows(), at.cols(), bt.rows());
                    let mut da = vec![0.0; n * d];
                    let mut db = vec![0.0; nb * d];
                    for i in 0..n {
                        let bi = if nb == 1 { 0 } else { i };
                        let (ar, br) = (at.row(i), bt.row(bi));
                        let (na, nbn) = (norm(ar), norm(br));
                        let den = na * nbn + eps;
                        let dp = dot(ar, br);
                        let gi = g[i];
                        for c in 0..d {
                            let ua = if na > 0.0 { ar[c] / na } else { 0.0 };
                            let ub = if nbn > 0.0 { br[c] / nbn } else { 0.0 };
                            da[i * d + c] += gi * (br[c] / den - dp * nbn * ua / (den * den));
                            db[bi * d + c] += gi * (ar[c] / den - dp * na * ub / (den * den));
                        }
                    }
                    add_into(slot(&mut grads, *a, n * d), &da);
                    add_into(slot(&mut grads, *b, nb * d), &db);
                }
                Op::GroupDot { q, k, group } => {
                    let (qt, kt) = (self.value_of(*q), self.value_of(*k));
                    let (nb, d) = (qt.rows(), qt.cols());
                    {
                        let dq = slot(&mut grads, *q, nb * d);
                        for b in 0..nb {
                            for gidx in 0..*group {
                                let gs = g[b * group + gidx];
                                for (dst, &kv) in
                                    dq[b * d..(b + 1) * d].iter_mut().zip(kt.row(b * group + gidx))
                                {
                                    *dst += gs * kv;
                                }
                            }
                        }
                    }
                    let dk = slot(&mut grads, *k, kt.len());
                    for b in 0..nb {
                        for gidx in 0..*group {
                            let gs = g[b * group + gidx];
                            let row = b * group + gidx;
                            for (dst, &qv) in dk[row * d..(row + 1) * d].iter_mut().zip(qt.row(b)) {
                                *dst += gs * qv;
                            }
                        }
                    }
                }
                Op::GroupPool { w, v, group } => {
                    let (wt, vt) = (self.value_of(*w), self.value_of(*v));
                    let (nb, d) = (wt.rows(), vt.cols());
                    {
                        let dw = slot(&mut grads, *w, wt.len());
                        for b in 0..nb {
                            let grow = &g[b * d..(b + 1) * d];
                            for gidx in 0..*group {
                                dw[b * group + gidx] += dot(grow, vt.row(b * group + gidx));
                            }
                        }
                    }
                    let wv = wt.values();
                    let dv = slot(&mut grads, *v, vt.len());
                    for b in 0..nb {
                        let grow = &g[b * d..(b + 1) * d];
                        for gidx in 0..*group {
                            let wg = wv[b * group + gidx];
                            let row = b * group + gidx;
                            for (dst, &gv) in dv[row * d..(row + 1) * d].iter_mut().zip(grow) {
                                *dst += wg * gv;
                            }
                        }
                    }
                }
                Op::MaskedMean { x, mask, count } => {
                    if *count > 0 {
                        let scale = g[0] / *count as f64;
                        accumulate(&mut grads, *x, mask.len(), |j| {
                            if mask[j] {
                                scale
                            } else {
                                0.0
                            }
                        });
                    }
                }
                Op::SquaredError { a, b } => {
                    let (av, bv) = (self.value_of(*a).values(), self.value_of(*b).values());
                    accumulate(&mut grads, *a, g.len(), |j| 2.0 * g[j] * (av[j] - bv[j]));
                    accumulate(&mut grads, *b, g.len(), |j| -2.0 * g[j] * (av[j] - bv[j]));
                }
                Op::BceMean { p, labels } => {
                    let pv = self.value_of(*p).values();
                    let n = pv.len() as f64;
                    let scale = g[0] / n;
                    accumulate(&mut grads, *p, pv.len(), |j| {
                        let (pj, y) = (pv[j], labels[j]);
                        scale * (-y / pj + (1.0 - y) / (1.0 - pj))
                    });
                }
                Op::Sum { x } => {
                    let n = self.value_of(*x).len();
                    accumulate(&mut grads, *x, n, |_| g[0]);
                }
            }
        }

        let mut map = GradMap::default();
        for &pidx in &self.registered {
            let param = self.store.by_index(pidx);
            let var = self.param_vars[&pidx];
            let dense = grads[var.0].take();
            let grad = match param.kind {
                ParamKind::Dense => Grad::Dense(match dense {
                    Some(d) => Tensor::new(param.value.shape().to_vec(), d)?,
                    None => Tensor::zeros(param.value.shape().to_vec()),
                }),
                ParamKind::Embedding => {
                    let (rows, dim) = (param.value.rows(), param.value.cols());
                    let mut s = sparse
                        .remove(&var.0)
                        .unwrap_or_else(|| SparseRows::new(rows, dim));
                    if let Some(d) = dense {
                        for r in 0..rows {
                            let row = &d[r * dim..(r + 1) * dim];
                            if row.iter().any(|&v| v != 0.0) {
                                s.add_row(r, row);
                            }
                        }
                    }
                    Grad::Sparse(s)
                }
            };
            map.insert(param.name.clone(), grad);
        }
        Ok(map)
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: usize, len: usize) -> &mut [f64] {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

/// `grads[id][j] += f(j)` for every entry.
fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, len: usize, f: impl Fn(usize) -> f64) {
    let dst = slot(grads, id, len);
    for (j, d) in dst.iter_mut().enumerate() {
        *d += f(j);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
