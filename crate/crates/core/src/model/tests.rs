use super::*;
use crate::autodiff::{check_gradients, EntryStatus, Grad, GradCheckConfig};
use crate::datagen::{generate, split_by_last_day, GeneratorConfig, HistoryEntry, ImpressionRecord};
use crate::features::{build_vocab, encode_batch};
use crate::error::Error;
use crate::tensor::Tensor;

fn market(seed: u64) -> (Vec<ImpressionRecord>, Vec<ImpressionRecord>) {
    let cfg = GeneratorConfig {
        n_users: 80,
        n_items: 400,
        days: 4,
        activity_mean: 8.0,
        ..GeneratorConfig::default()
    };
    let out = generate(&cfg, seed).unwrap();
    split_by_last_day(out.records, cfg.days)
}

fn small_config(arch: Architecture) -> ModelConfig {
    ModelConfig {
        architecture: arch,
        d_id: 4,
        d_side: 4,
        max_len: 6,
        n_heads: 2,
        d_head: 3,
        mlp_hidden: vec![8, 4],
        meta_hidden: 5,
        batch_size: 32,
        epochs: 1,
        ..ModelConfig::default()
    }
}

fn record(user: u64, item: u64, cat: u32, label: u8, history: &[(u64, u32, bool)]) -> ImpressionRecord {
    ImpressionRecord {
        day: 1,
        user_id: user,
        item_id: item,
        item_category: cat,
        label,
        true_ctr: 0.2,
        item_is_limited: false,
        item_is_new: false,
        user_history: history
            .iter()
            .map(|&(item_id, category_id, is_limited)| HistoryEntry {
                item_id,
                category_id,
                is_limited,
            })
            .collect(),
    }
}

/// DIN forward written with plain loops over the parameter store.
fn oracle_din(model: &Model, batch: &SampleBatch) -> Vec<f64> {
    let c = &model.config;
    let p = |name: &str| model.params.value(name).unwrap();
    let item = p(ITEM_TABLE);
    let cat = p(CATEGORY_TABLE);
    let embed = |i: usize, k: usize| -> Vec<f64> { item.row(i).iter().chain(cat.row(k)).copied().collect() };
    let matvec = |x: &[f64], w: &Tensor| -> Vec<f64> {
        let cols = w.cols();
        (0..cols).map(|j| x.iter().enumerate().map(|(i, xi)| xi * w.values()[i * cols + j]).sum()).collect()
    };
    let mut out = Vec::new();
    for b in 0..batch.batch_size {
        let t = embed(batch.target_item[b], batch.target_category[b]);
        let mut heads = Vec::new();
        for h in 0..c.n_heads {
            let q = matvec(&t, p(&format!("attn.q{h}.w")));
            let mut scores = Vec::new();
            let mut vals = Vec::new();
            for pos in batch.positions(b) {
                if !batch.mask[pos] {
                    continue;
                }
                let x = embed(batch.seq_item[pos], batch.seq_category[pos]);
                let k = matvec(&x, p(&format!("attn.k{h}.w")));
                scores.push(q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (c.d_head as f64).sqrt());
                vals.push(matvec(&x, p(&format!("attn.v{h}.w"))));
            }
            let mut head = vec![0.0; c.d_head];
            if !scores.is_empty() {
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for (s, v) in scores.iter().zip(&vals) {
                    for (hd, vi) in head.iter_mut().zip(v) {
                        *hd += (s - m).exp() / z * vi;
                    }
                }
            }
            heads.extend(head);
        }
        let mut x = matvec(&heads, p("attn.out.w"));
        x.extend(&t);
        let n_layers = c.mlp_hidden.len() + 1;
        for l in 0..n_layers {
            let name = if l + 1 == n_layers { "mlp.out".to_string() } else { format!("mlp.{l}") };
            let mut y = matvec(&x, p(&format!("{name}.w")));
            for (yi, bi) in y.iter_mut().zip(p(&format!("{name}.b")).values()) {
                *yi += bi;
            }
            if l + 1 < n_layers {
                y.iter_mut().for_each(|v| *v = if *v > 0.0 { *v } else { 0.01 * *v });
            }
            x = y;
        }
        out.push(1.0 / (1.0 + (-x[0].clamp(-15.0, 15.0)).exp()));
    }
    out
}

#[test]
fn din_forward_matches_loop_oracle() {
    let (train, _) = market(1);
    let model = Model::new(small_config(Architecture::Din), build_vocab(&train)).unwrap();
    let batch = encode_batch(&train[..40], &model.vocabs, model.config.max_len);
    let got = model.predict_batch(&batch).unwrap();
    let want = oracle_din(&model, &batch);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12, "{g} vs {w}");
    }
}

#[test]
fn hand_set_micro_model() {
    // D_id = D_side = 1, H = 2, one head of width 1, MLP [2].
    let recs = [record(1, 10, 0, 1, &[(11, 1, false), (12, 0, true)]), record(1, 11, 1, 0, &[(10, 0, false)])];
    let config = ModelConfig {
        architecture: Architecture::Din,
        d_id: 1,
        d_side: 1,
        max_len: 2,
        n_heads: 1,
        d_head: 1,
        mlp_hidden: vec![2],
        ..ModelConfig::default()
    };
    let mut model = Model::new(config, build_vocab(&recs)).unwrap();
    let set = |m: &mut Model, name: &str, v: &[f64]| m.params.value_mut(name).unwrap().values_mut().copy_from_slice(v);
    // items 10, 11, 12 -> rows 1..=3; categories 0, 1 -> rows 1, 2
    set(&mut model, ITEM_TABLE, &[0.0, 1.0, -1.0, 2.0]);
    set(&mut model, CATEGORY_TABLE, &[0.0, 0.5, 1.0]);
    set(&mut model, "attn.q0.w", &[1.0, 0.0]);
    set(&mut model, "attn.k0.w", &[1.0, 0.0]);
    set(&mut model, "attn.v0.w", &[0.0, 1.0]);
    set(&mut model, "attn.out.w", &[2.0]);
    set(&mut model, "mlp.0.w", &[1.0, 0.0, 0.0, 1.0, 1.0, -1.0]);
    set(&mut model, "mlp.0.b", &[0.0, 0.5]);
    set(&mut model, "mlp.out.w", &[1.0, -1.0]);
    set(&mut model, "mlp.out.b", &[0.1]);
    let batch = encode_batch(&recs, &model.vocabs, 2);
    let got = model.predict_batch(&batch).unwrap();

    // Row 0: target (1, 0.5); history (-1, 1), (2, 0.5). Scores -1, 2.
    let w = [(-1f64).exp() / ((-1f64).exp() + 2f64.exp()), 2f64.exp() / ((-1f64).exp() + 2f64.exp())];
    let interest = 2.0 * (w[0] * 1.0 + w[1] * 0.5);
    // MLP input (interest, 1, 0.5) against rows (1, 0), (0, 1), (1, -1).
    let h = [interest + 0.5, 1.0 - 0.5 + 0.5];
    let lrelu = |v: f64| if v > 0.0 { v } else { 0.01 * v };
    let logit0 = lrelu(h[0]) - lrelu(h[1]) + 0.1;
    // Row 1: target (-1, 1); history (1, 0.5). Single key, weight 1.
    let interest = 2.0 * 0.5;
    let h = [interest + 1.0, -1.0 - 1.0 + 0.5];
    let logit1 = lrelu(h[0]) - lrelu(h[1]) + 0.1;
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    assert!((got[0] - sig(logit0)).abs() < 1e-14, "{} vs {}", got[0], sig(logit0));
    assert!((got[1] - sig(logit1)).abs() < 1e-14, "{} vs {}", got[1], sig(logit1));
}

#[test]
fn empty_history_gives_zero_interest() {
    let recs = [record(1, 10, 0, 1, &[]), record(2, 11, 1, 0, &[])];
    for arch in [Architecture::Din, Architecture::Msnet] {
        let model = Model::new(small_config(arch), build_vocab(&recs)).unwrap();
        let batch = encode_batch(&recs, &model.vocabs, model.config.max_len);
        let mut tape = Tape::new(&model.params);
        let out = forward(&model.config, &mut tape, &batch).unwrap();
        for b in &out.branches {
            assert!(tape.value(b.attention.interest).values().iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn msnet_with_everything_off_is_din() {
    let (train, _) = market(2);
    let vocabs = build_vocab(&train);
    let din = Model::new(small_config(Architecture::Din), vocabs.clone()).unwrap();
    let mut cfg = small_config(Architecture::Msnet);
    cfg.switches = Switches {
        seq_split: false,
        seq_meta: false,
        aux_loss: false,
    };
    let mut ms = Model::new(cfg, vocabs).unwrap();
    assert_eq!(ms.copy_shared_from(&din), din.params.len());
    let batch = encode_batch(&train[..64], &din.vocabs, din.config.max_len);
    let a = din.predict_batch(&batch).unwrap();
    let b = ms.predict_batch(&batch).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn ce_examples() {
    let store = crate::autodiff::ParamStore::new();
    let mut tape = Tape::new(&store);
    let p = tape.constant(Tensor::vector(vec![0.5, 0.5]));
    let l = loss_ce(&mut tape, p, &[1.0, 0.0]).unwrap();
    assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    let p = tape.constant(Tensor::vector(vec![0.9, 0.1]));
    let l = loss_ce(&mut tape, p, &[1.0, 0.0]).unwrap();
    assert!((tape.value(l).item() - 0.105_360_515_657_826_3).abs() < 1e-12);
}

#[test]
fn total_loss_examples() {
    let store = crate::autodiff::ParamStore::new();
    let mut tape = Tape::new(&store);
    let ce = tape.constant(Tensor::scalar(0.7));
    let aux = tape.constant(Tensor::scalar(0.1));
    let t = total_loss(&mut tape, ce, Some(aux), 0.5).unwrap();
    assert!((tape.value(t).item() - 0.75).abs() < 1e-15);
    let t = total_loss(&mut tape, ce, Some(aux), 0.0).unwrap();
    assert_eq!(t, ce);
    let mut din = ModelConfig::din();
    din.alpha = 3.0;
    assert_eq!(din.effective_alpha(), 0.0);
}

/// Two-row embedding setup for auxiliary-loss cases: target item row 1,
/// history rows 2 and 3, all limited.
fn aux_case(items: &[f64], cats: &[f64]) -> (Model, SampleBatch) {
    let recs = [record(1, 10, 0, 1, &[(11, 1, true), (12, 2, true)])];
    let config = ModelConfig {
        d_id: 2,
        d_side: 2,
        max_len: 2,
        ..small_config(Architecture::Msnet)
    };
    let mut model = Model::new(config, build_vocab(&recs)).unwrap();
    model.params.value_mut(ITEM_TABLE).unwrap().values_mut().copy_from_slice(items);
    model.params.value_mut(CATEGORY_TABLE).unwrap().values_mut().copy_from_slice(cats);
    let batch = encode_batch(&recs, &model.vocabs, 2);
    (model, batch)
}

#[test]
fn aux_loss_examples_and_blocked_side_gradient() {
    let table = [0.0, 0.0, 1.0, 0.0, 0.6, 0.8, -0.3, 0.9];
    let (model, batch) = aux_case(&table, &table);
    let mut tape = Tape::new(&model.params);
    let e = embed(&mut tape, &batch).unwrap();
    let l = loss_aux(&mut tape, &batch, &e, AuxScope::LimitedOnly).unwrap();
    assert!(tape.value(l).item().abs() < 1e-15);

    // Side similarities [1, 0], id similarities [0, 0].
    let items = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, -1.0];
    let cats = [0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 3.0];
    let (model, batch) = aux_case(&items, &cats);
    let mut tape = Tape::new(&model.params);
    let e = embed(&mut tape, &batch).unwrap();
    let l = loss_aux(&mut tape, &batch, &e, AuxScope::LimitedOnly).unwrap();
    assert!((tape.value(l).item() - 0.5).abs() < 1e-12);
    let grads = tape.backward(l).unwrap();
    assert!(grads.get(CATEGORY_TABLE).unwrap().is_all_zero());
    assert!(!grads.get(ITEM_TABLE).unwrap().is_all_zero());
}

#[test]
fn aux_scope_selects_positions() {
    let recs = [record(1, 10, 0, 1, &[(11, 1, false), (12, 2, false)])];
    let model = Model::new(small_config(Architecture::Msnet), build_vocab(&recs)).unwrap();
    let batch = encode_batch(&recs, &model.vocabs, model.config.max_len);
    let mut tape = Tape::new(&model.params);
    let e = embed(&mut tape, &batch).unwrap();
    let limited = loss_aux(&mut tape, &batch, &e, AuxScope::LimitedOnly).unwrap();
    let both = loss_aux(&mut tape, &batch, &e, AuxScope::Both).unwrap();
    assert_eq!(tape.value(limited).item(), 0.0);
    assert!(tape.value(both).item() > 0.0);
}

#[test]
fn full_msnet_gradient_check() {
    let (train, _) = market(3);
    let mut cfg = small_config(Architecture::Msnet);
    cfg.max_len = 5;
    cfg.alpha = 0.5;
    cfg.aux_scope = AuxScope::Both;
    let model = Model::new(cfg, build_vocab(&train)).unwrap();
    let picks: Vec<&ImpressionRecord> = train.iter().filter(|r| r.user_history.len() >= 3).take(3).collect();
    let batch = encode_batch(picks, &model.vocabs, model.config.max_len);
    let report = check_gradients(
        &model.params,
        |tape| Ok(model_loss(&model.config, tape, &batch)?.total),
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passed(), "max rel error {}", report.max_rel_error());
    assert!(report.params.len() == model.params.len());
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (train, _) = market(4);
    let mut cfg = small_config(Architecture::Msnet);
    cfg.learning_rate = 0.0;
    let mut model = Model::new(cfg, build_vocab(&train)).unwrap();
    let before = model.params.clone();
    let mut opt = Adagrad::new(0.0, 1.0, &model.params);
    fit(&mut model, &mut opt, &train, |_, _, _| Ok(())).unwrap();
    for (a, b) in model.params.iter().zip(before.iter()) {
        assert!(a.value.values().iter().zip(b.value.values()).all(|(x, y)| x.to_bits() == y.to_bits()), "{}", a.name);
    }
}

fn train_once(cfg: ModelConfig, train: &[ImpressionRecord]) -> (Model, TrainingLog) {
    let mut model = Model::new(cfg, build_vocab(train)).unwrap();
    let mut opt = Adagrad::new(model.config.learning_rate, model.config.adagrad_decay, &model.params);
    let log = fit(&mut model, &mut opt, train, |_, _, _| Ok(())).unwrap();
    (model, log)
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let (train, _) = market(5);
    let mut cfg = small_config(Architecture::Msnet);
    cfg.epochs = 3;
    cfg.batch_size = 64;
    let (m1, log1) = train_once(cfg.clone(), &train);
    let (m2, log2) = train_once(cfg, &train);
    assert!(log1.epochs.iter().map(|e| e.batches).sum::<usize>() >= 50);
    assert!(log1.epochs[2].ce < log1.epochs[0].ce, "{log1:?}");
    assert_eq!(log1.to_tsv(), log2.to_tsv());
    assert_eq!(m1, m2);
    assert_eq!(TrainingLog::parse_tsv(&log1.to_tsv()).unwrap(), log1);
}

#[test]
fn aux_switch_off_matches_zero_alpha() {
    let (train, _) = market(6);
    let mut off = small_config(Architecture::Msnet);
    off.alpha = 0.7;
    off.switches.aux_loss = false;
    let mut zero = small_config(Architecture::Msnet);
    zero.alpha = 0.0;
    let (a, _) = train_once(off, &train);
    let (b, _) = train_once(zero, &train);
    assert_eq!(a.params, b.params);
}

#[test]
fn predictions_are_total_pure_and_sane() {
    let (train, test) = market(7);
    let model = Model::new(small_config(Architecture::Msnet), build_vocab(&train)).unwrap();
    let mut doubled = test.clone();
    doubled.extend(test.iter().cloned());
    let preds = predict(&model, &doubled, 50, 0).unwrap();
    assert_eq!(preds.len(), doubled.len());
    let n = test.len();
    for i in 0..n {
        assert_eq!(preds[i].p.to_bits(), preds[i + n].p.to_bits());
    }
    let mean = preds.iter().map(|p| p.p).sum::<f64>() / preds.len() as f64;
    assert!(mean > 0.2 && mean < 0.8, "{mean}");
}

#[test]
fn divergence_is_reported() {
    let (train, _) = market(8);
    let mut model = Model::new(small_config(Architecture::Din), build_vocab(&train)).unwrap();
    model.params.value_mut("mlp.out.b").unwrap().values_mut()[0] = f64::NAN;
    let mut opt = Adagrad::new(0.01, 1.0, &model.params);
    let before = model.params.clone();
    let mut called = false;
    let err = fit(&mut model, &mut opt, &train, |_, _, _| {
        called = true;
        Ok(())
    })
    .unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 0, batch: 0 }), "{err}");
    assert!(!called);
    assert_eq!(format!("{:?}", model.params), format!("{before:?}"));
}

#[test]
fn gradient_check_without_aux_on_limited_histories() {
    let (train, _) = market(9);
    let mut cfg = small_config(Architecture::Msnet);
    cfg.switches.aux_loss = false;
    let model = Model::new(cfg, build_vocab(&train)).unwrap();
    let picks: Vec<&ImpressionRecord> = train.iter().filter(|r| r.user_history.iter().any(|h| h.is_limited)).take(8).collect();
    let batch = encode_batch(picks, &model.vocabs, model.config.max_len);
    let report = check_gradients(
        &model.params,
        |tape| Ok(model_loss(&model.config, tape, &batch)?.total),
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passed(), "{}", report.max_rel_error());
    let blocked: usize = report.params.iter().map(|p| p.count(EntryStatus::Blocked)).sum();
    assert_eq!(blocked, 0);
    let mut tape = Tape::new(&model.params);
    let l = model_loss(&model.config, &mut tape, &batch).unwrap();
    let g = tape.backward(l.total).unwrap();
    assert!(matches!(g.get(ITEM_TABLE), Some(Grad::Sparse(_))));
}
