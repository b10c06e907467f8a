use std::collections::{BTreeMap, BTreeSet};

use crate::tensor::Tensor;

/// Row-sparse gradient of an embedding table. Rows are unique and ordered.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows {
    pub rows: usize,
    pub dim: usize,
    pub entries: BTreeMap<usize, Vec<f64>>,
}

impl SparseRows {
    pub fn new(rows: usize, dim: usize) -> Self {
        SparseRows {
            rows,
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn add_row(&mut self, row: usize, grad: &[f64]) {
        let dim = self.dim;
        let slot = self.entries.entry(row).or_insert_with(|| vec![0.0; dim]);
        for (s, g) in slot.iter_mut().zip(grad) {
            *s += g;
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(vec![self.rows, self.dim]);
        for (&r, g) in &self.entries {
            t.row_mut(r).copy_from_slice(g);
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Grad {
    Dense(Tensor),
    Sparse(SparseRows),
}

impl Grad {
    /// Gradient of one flat (row-major) entry.
    pub fn at(&self, flat: usize) -> f64 {
        match self {
            Grad::Dense(t) => t.values()[flat],
            Grad::Sparse(s) => {
                let (r, c) = (flat / s.dim, flat % s.dim);
                s.entries.get(&r).map_or(0.0, |g| g[c])
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        match self {
            Grad::Dense(t) => t.all_finite(),
            Grad::Sparse(s) => s.entries.values().flatten().all(|v| v.is_finite()),
        }
    }

    /// Rows holding at least one nonzero entry.
    pub fn row_support(&self) -> BTreeSet<usize> {
        match self {
            Grad::Dense(t) => (0..t.rows())
                .filter(|&r| t.row(r).iter().any(|&v| v != 0.0))
                .collect(),
            Grad::Sparse(s) => s
                .entries
                .iter()
                .filter(|(_, g)| g.iter().any(|&v| v != 0.0))
                .map(|(&r, _)| r)
                .collect(),
        }
    }

    pub fn is_all_zero(&self) -> bool {
        match self {
            Grad::Dense(t) => t.values().iter().all(|&v| v == 0.0),
            Grad::Sparse(s) => s.entries.values().flatten().all(|&v| v == 0.0),
        }
    }

    pub fn to_dense(&self) -> Tensor {
        match self {
            Grad::Dense(t) => t.clone(),
            Grad::Sparse(s) => s.to_dense(),
        }
    }
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradMap {
    grads: BTreeMap<String, Grad>,
}

impl GradMap {
    pub(crate) fn insert(&mut self, name: String, grad: Grad) {
        self.grads.insert(name, grad);
    }

    pub fn get(&self, name: &str) -> Option<&Grad> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Grad)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
