//! The evaluation metrics on scored impressions whose true click
//! probabilities are known, so the calibrated predictor can be compared with
//! a biased and a noisy one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use msnet::datagen::{generate, GeneratorConfig};
use msnet::metrics::{
    auc_records, cal_n, gauc, grouped_report, partition_of, pcoc, rela_impr, welch_t_test, Group, PredictionRecord,
    ReportMeta, N_PARTITIONS,
};

fn score(records: &[msnet::datagen::ImpressionRecord], f: impl Fn(f64) -> f64) -> Vec<PredictionRecord> {
    records
        .iter()
        .map(|r| PredictionRecord {
            user_id: r.user_id,
            item_id: r.item_id,
            p: f(r.true_ctr).clamp(1e-6, 1.0 - 1e-6),
            label: r.label,
            is_new: r.item_is_new,
            is_limited: r.item_is_limited,
            partition_id: partition_of(r.user_id, r.item_id, 0),
        })
        .collect()
}

fn main() -> msnet::Result<()> {
    let gen = GeneratorConfig {
        n_users: 500,
        n_items: 2500,
        ..GeneratorConfig::default()
    };
    let records = generate(&gen, 1)?.records;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise: Vec<f64> = (0..records.len()).map(|_| rng.random_range(-0.15..0.15)).collect();

    let oracle = score(&records, |p| p);
    let biased = score(&records, |p| p * 1.1);
    let noisy: Vec<PredictionRecord> = oracle
        .iter()
        .zip(&noise)
        .map(|(r, n)| PredictionRecord {
            p: (r.p + n).clamp(1e-6, 1.0 - 1e-6),
            ..r.clone()
        })
        .collect();

    // x1.1 ranks exactly like the oracle; only the calibration columns move.
    println!("{:<8} {:>8} {:>8} {:>8} {:>8}", "scorer", "AUC", "GAUC", "PCOC", "Cal-N");
    for (name, preds) in [("oracle", &oracle), ("x1.1", &biased), ("noisy", &noisy)] {
        println!(
            "{name:<8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            auc_records(preds.iter()).unwrap_or(f64::NAN),
            gauc(preds.iter()).unwrap_or(f64::NAN),
            pcoc(preds.iter()).unwrap_or(f64::NAN),
            cal_n(preds.iter(), N_PARTITIONS).value.unwrap_or(f64::NAN),
        );
    }

    let base = auc_records(oracle.iter()).unwrap();
    let noisy_auc = auc_records(noisy.iter()).unwrap();
    println!("\nRelaImpr of noisy over oracle: {:+.2}%", rela_impr(noisy_auc, base).unwrap());

    let meta = ReportMeta::new("oracle", "-", "-", 0, gen.new_window_days as u32);
    let a = grouped_report(&oracle, meta.clone(), None);
    let b = grouped_report(&noisy, ReportMeta { model: "noisy".into(), ..meta }, Some(&a));
    let parts = |r: &msnet::metrics::MetricReport| -> Vec<f64> {
        r.group(Group::Overall).unwrap().partition_aucs.iter().flatten().copied().collect()
    };
    if let Some(t) = welch_t_test(&parts(&a), &parts(&b)) {
        println!("Welch t over partition AUCs: t = {:.3}, df = {:.1}, p = {:.4}", t.t, t.df, t.p_value);
    }
    println!("\n{}", b.render_human());
    Ok(())
}
