//! Finite-difference check of every MSNet parameter group on a tiny batch.
//!
//! Run with `cargo run --release --example gradient_check`.

use msnet::autodiff::{check_gradients, EntryStatus, GradCheckConfig};
use msnet::datagen::{generate, GeneratorConfig};
use msnet::features::{build_vocab, encode_batch};
use msnet::model::{model_loss, AuxScope, Model, ModelConfig};

fn main() -> msnet::Result<()> {
    let gen = GeneratorConfig {
        n_users: 60,
        n_items: 300,
        days: 3,
        ..GeneratorConfig::default()
    };
    let records = generate(&gen, 7)?.records;
    let config = ModelConfig {
        d_id: 4,
        d_side: 4,
        max_len: 5,
        d_head: 4,
        mlp_hidden: vec![8, 4],
        meta_hidden: 6,
        alpha: 0.5,
        aux_scope: AuxScope::Both,
        ..ModelConfig::default()
    };
    let model = Model::new(config, build_vocab(&records))?;
    let picks: Vec<_> = records.iter().filter(|r| r.user_history.len() >= 3).take(2).collect();
    let batch = encode_batch(picks, &model.vocabs, model.config.max_len);

    let report = check_gradients(
        &model.params,
        |tape| Ok(model_loss(&model.config, tape, &batch)?.total),
        &GradCheckConfig::default(),
    )?;
    println!("{:<28} {:>7} {:>8} {:>12}", "parameter", "checked", "blocked", "max rel err");
    for p in &report.params {
        println!(
            "{:<28} {:>7} {:>8} {:>12.3e}",
            p.name,
            p.entries.len(),
            p.count(EntryStatus::Blocked),
            p.max_rel_error()
        );
    }
    println!(
        "\n{} mismatches, worst relative error {:.3e} (tolerance {:.0e})",
        report.mismatches(),
        report.max_rel_error(),
        report.tolerance
    );
    Ok(())
}
