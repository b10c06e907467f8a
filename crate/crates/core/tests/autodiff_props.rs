//! Tape gradients against central differences computed here, one property per
//! operation, plus structural properties of softmax and gather.

use msnet::autodiff::{Grad, ParamKind, ParamStore, Tape, Var};
use msnet::Tensor;
use proptest::prelude::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-3;

type Build = dyn for<'a> Fn(&mut Tape<'a>) -> msnet::Result<Var>;

fn weights(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 + 1.0) * 0.7).sin()).collect()
}

/// `Σ out ⊙ w` for fixed, uneven weights so no entry's gradient is trivial.
fn project(tape: &mut Tape<'_>, out: Var) -> msnet::Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let n = tape.value(out).len();
    let w = tape.constant(Tensor::new(shape, weights(n))?);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn loss_value(store: &ParamStore, build: &Build) -> f64 {
    let mut tape = Tape::new(store);
    let out = build(&mut tape).unwrap();
    let loss = project(&mut tape, out).unwrap();
    tape.value(loss).item()
}

fn fd_matches(store: &ParamStore, build: &Build) -> Result<(), TestCaseError> {
    let grads = {
        let mut tape = Tape::new(store);
        let out = build(&mut tape).unwrap();
        let loss = project(&mut tape, out).unwrap();
        tape.backward(loss).unwrap()
    };
    let mut work = store.clone();
    let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
    for name in names {
        let g = grads.get(&name).expect("every parameter has a gradient");
        for i in 0..store.value(&name).unwrap().len() {
            let orig = store.value(&name).unwrap().values()[i];
            work.value_mut(&name).unwrap().values_mut()[i] = orig + H;
            let plus = loss_value(&work, build);
            work.value_mut(&name).unwrap().values_mut()[i] = orig - H;
            let minus = loss_value(&work, build);
            work.value_mut(&name).unwrap().values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let analytic = g.at(i);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
            prop_assert!(err < TOL, "{name}[{i}]: tape {analytic} vs fd {numeric}");
        }
    }
    Ok(())
}

fn store(entries: &[(&str, usize, usize, &[f64])]) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, r, c, v) in entries {
        s.insert(*name, ParamKind::Dense, Tensor::matrix(*r, *c, v.to_vec()).unwrap()).unwrap();
    }
    s
}

fn vals(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

fn cfg() -> ProptestConfig {
    ProptestConfig::with_cases(100)
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn matmul_and_bias(a in vals(6), b in vals(12), c in vals(4)) {
        let s = store(&[("a", 2, 3, &a), ("b", 3, 4, &b), ("c", 1, 4, &c)]);
        fd_matches(&s, &|t| {
            let (a, b, c) = (t.param("a")?, t.param("b")?, t.param("c")?);
            let m = t.matmul(a, b)?;
            t.add_row(m, c)
        })?;
    }

    #[test]
    fn elementwise_arithmetic(a in vals(6), b in prop::collection::vec(0.5f64..2.0, 6)) {
        let s = store(&[("a", 2, 3, &a), ("b", 2, 3, &b)]);
        fd_matches(&s, &|t| {
            let (a, b) = (t.param("a")?, t.param("b")?);
            let p = t.mul(a, b)?;
            let q = t.div(a, b)?;
            let d = t.sub(p, q)?;
            let e = t.add(d, a)?;
            let e = t.scale(e, 1.3);
            Ok(t.add_scalar(e, -0.2))
        })?;
    }

    #[test]
    fn activations(a in vals(8)) {
        prop_assume!(a.iter().all(|x| x.abs() > 1e-3));
        let s = store(&[("a", 2, 4, &a)]);
        fd_matches(&s, &|t| {
            let a = t.param("a")?;
            let s = t.sigmoid(a);
            let l = t.leaky_relu(a, 0.01);
            t.concat_cols(&[s, l])
        })?;
    }

    #[test]
    fn masked_softmax(x in vals(12), mask in prop::collection::vec(any::<bool>(), 12)) {
        let s = store(&[("x", 3, 4, &x)]);
        fd_matches(&s, &move |t| {
            let x = t.param("x")?;
            t.softmax_rows(x, Some(&mask))
        })?;
    }

    #[test]
    fn blend_norm_and_cosine(a in vals(9), b in vals(9), w in prop::collection::vec(0.0f64..1.0, 3)) {
        prop_assume!(a.chunks(3).chain(b.chunks(3)).all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-2));
        let s = store(&[("a", 3, 3, &a), ("b", 3, 3, &b), ("w", 3, 1, &w)]);
        fd_matches(&s, &|t| {
            let (a, b, w) = (t.param("a")?, t.param("b")?, t.param("w")?);
            let blended = t.row_blend(a, b, w)?;
            let n = t.row_norm(blended)?;
            let c = t.cosine_sim_rows(a, b, 1e-12)?;
            t.add(n, c)
        })?;
    }

    #[test]
    fn attention_primitives(q in vals(6), k in vals(18), v in vals(18), mask in prop::collection::vec(any::<bool>(), 6)) {
        let s = store(&[("q", 2, 3, &q), ("k", 6, 3, &k), ("v", 6, 3, &v)]);
        fd_matches(&s, &move |t| {
            let (q, k, v) = (t.param("q")?, t.param("k")?, t.param("v")?);
            let scores = t.group_dot(q, k, 3)?;
            let w = t.softmax_rows(scores, Some(&mask))?;
            t.group_pool(w, v, 3)
        })?;
    }

    #[test]
    fn gather_and_reductions(table in vals(15), idx in prop::collection::vec(0usize..5, 4), mask in prop::collection::vec(any::<bool>(), 4)) {
        let mut s = ParamStore::new();
        s.insert("table", ParamKind::Embedding, Tensor::matrix(5, 3, table).unwrap()).unwrap();
        fd_matches(&s, &move |t| {
            let table = t.param("table")?;
            let g = t.gather_rows(table, &idx)?;
            let n = t.row_norm(g)?;
            let m = t.masked_mean(n, &mask)?;
            let p = t.sigmoid(g);
            let bce = t.bce_mean(p, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0])?;
            t.add(m, bce)
        })?;
    }

    #[test]
    fn softmax_rows_are_distributions(x in vals(20), mask in prop::collection::vec(any::<bool>(), 20)) {
        let s = store(&[("x", 4, 5, &x)]);
        let mut t = Tape::new(&s);
        let xv = t.param("x").unwrap();
        let p = t.softmax_rows(xv, Some(&mask)).unwrap();
        let out = t.value(p);
        for r in 0..4 {
            let row = out.row(r);
            let m = &mask[r * 5..(r + 1) * 5];
            for (v, keep) in row.iter().zip(m) {
                prop_assert!(*v >= 0.0);
                if !keep {
                    prop_assert_eq!(v.to_bits(), 0.0f64.to_bits());
                }
            }
            let total: f64 = row.iter().sum();
            if m.iter().any(|k| *k) {
                prop_assert!((total - 1.0).abs() < 1e-12, "row {} sums to {}", r, total);
            } else {
                prop_assert_eq!(total, 0.0);
            }
        }
    }

    #[test]
    fn gather_gradient_conserves_mass(table in vals(18), idx in prop::collection::vec(0usize..6, 1..10)) {
        let mut s = ParamStore::new();
        s.insert("table", ParamKind::Embedding, Tensor::matrix(6, 3, table).unwrap()).unwrap();
        let mut t = Tape::new(&s);
        let tv = t.param("table").unwrap();
        let g = t.gather_rows(tv, &idx).unwrap();
        let loss = project(&mut t, g).unwrap();
        let grads = t.backward(loss).unwrap();
        let Some(Grad::Sparse(rows)) = grads.get("table") else {
            panic!("embedding gradient must be sparse");
        };
        let support: std::collections::BTreeSet<usize> = idx.iter().copied().collect();
        prop_assert_eq!(rows.entries.keys().copied().collect::<std::collections::BTreeSet<_>>(), support);
        let w = weights(idx.len() * 3);
        for c in 0..3 {
            let spread: f64 = rows.entries.values().map(|r| r[c]).sum();
            let sent: f64 = (0..idx.len()).map(|i| w[i * 3 + c]).sum();
            prop_assert!((spread - sent).abs() < 1e-12);
        }
    }
}
