use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Grad, GradMap, ParamStore};
use crate::error::{Error, Result};

pub const ADAGRAD_EPS: f64 = 1e-8;

/// Adagrad with an optional accumulator decay.
///
/// Per entry: `acc ← ρ·acc + g²`, `θ ← θ − lr·g/(√acc + ε)`. For embedding
/// tables only the rows present in the sparse gradient are touched, decay
/// included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adagrad {
    pub learning_rate: f64,
    pub decay: f64,
    pub step: u64,
    /// Squared-gradient accumulators, flat and parallel to each parameter.
    pub accumulators: BTreeMap<String, Vec<f64>>,
}

impl Adagrad {
    pub fn new(learning_rate: f64, decay: f64, params: &ParamStore) -> Self {
        let accumulators = params.iter().map(|p| (p.name.clone(), vec![0.0; p.value.len()])).collect();
        Adagrad {
            learning_rate,
            decay,
            step: 0,
            accumulators,
        }
    }

    /// Applies one update. A non-finite gradient aborts before anything is
    /// modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradMap) -> Result<()> {
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
        let (lr, rho) = (self.learning_rate, self.decay);
        let update = |theta: &mut f64, acc: &mut f64, g: f64| {
            *acc = rho * *acc + g * g;
            *theta -= lr * g / (acc.sqrt() + ADAGRAD_EPS);
        };
        for (name, grad) in grads.iter() {
            let acc = self
                .accumulators
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
            let theta = params.value_mut(name)?.values_mut();
            match grad {
                Grad::Dense(g) => {
                    for ((t, a), &g) in theta.iter_mut().zip(acc.iter_mut()).zip(g.values()) {
                        update(t, a, g);
                    }
                }
                Grad::Sparse(s) => {
                    for (&row, g) in &s.entries {
                        let span = row * s.dim..(row + 1) * s.dim;
                        for ((t, a), &g) in theta[span.clone()].iter_mut().zip(&mut acc[span]).zip(g) {
                            update(t, a, g);
                        }
                    }
                }
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamKind, Tape};
    use crate::tensor::Tensor;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", ParamKind::Dense, Tensor::vector(vec![v])).unwrap();
        s
    }

    /// Gradient of `g·w` with respect to `w` is `g`.
    fn grad_of(store: &ParamStore, g: f64) -> GradMap {
        let mut tape = Tape::new(store);
        let w = tape.param("w").unwrap();
        let l = tape.scale(w, g);
        let l = tape.sum(l);
        tape.backward(l).unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = store(0.0);
        let mut opt = Adagrad::new(0.1, 1.0, &s);
        let g = grad_of(&s, 1.0);
        opt.step(&mut s, &g).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((s.value("w").unwrap().values()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn second_step_divides_by_root_two() {
        let mut s = store(0.0);
        let mut opt = Adagrad::new(0.1, 1.0, &s);
        let g = grad_of(&s, 1.0);
        opt.step(&mut s, &g).unwrap();
        let before = s.value("w").unwrap().values()[0];
        opt.step(&mut s, &g).unwrap();
        let delta = s.value("w").unwrap().values()[0] - before;
        assert!((delta + 0.1 / 2f64.sqrt()).abs() < 1e-8);
        assert_eq!(opt.accumulators["w"], vec![2.0]);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = store(0.25);
        let mut opt = Adagrad::new(0.1, 1.0, &s);
        let g = grad_of(&s, 0.0);
        opt.step(&mut s, &g).unwrap();
        assert_eq!(s.value("w").unwrap().values()[0].to_bits(), 0.25f64.to_bits());
        assert_eq!(opt.accumulators["w"], vec![0.0]);
    }

    #[test]
    fn untouched_embedding_rows_are_not_modified() {
        let mut s = ParamStore::new();
        s.insert("emb", ParamKind::Embedding, Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap())
            .unwrap();
        let before = s.clone();
        let mut opt = Adagrad::new(0.5, 0.9, &s);
        let grads = {
            let mut tape = Tape::new(&s);
            let e = tape.param("emb").unwrap();
            let g = tape.gather_rows(e, &[1]).unwrap();
            let l = tape.sum(g);
            tape.backward(l).unwrap()
        };
        opt.step(&mut s, &grads).unwrap();
        let (a, b) = (s.value("emb").unwrap(), before.value("emb").unwrap());
        assert_eq!(a.row(0), b.row(0));
        assert_eq!(a.row(2), b.row(2));
        assert_ne!(a.row(1), b.row(1));
        assert_eq!(opt.accumulators["emb"], vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_gradient_aborts_and_names_parameter() {
        let mut s = store(0.0);
        let mut opt = Adagrad::new(0.1, 1.0, &s);
        let g = grad_of(&s, f64::NAN);
        let err = opt.step(&mut s, &g).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(s.value("w").unwrap().values()[0], 0.0);
        assert_eq!(opt.step, 0);
    }
}
