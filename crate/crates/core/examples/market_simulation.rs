//! Simulates the default market and summarizes who sees what.
//!
//! Single-unit items sell out after a click and leave the catalog, so they
//! collect far fewer impressions than items with more stock.

use std::collections::HashMap;

use msnet::datagen::{generate, split_by_last_day, GeneratorConfig};

fn main() -> msnet::Result<()> {
    let config = GeneratorConfig::default();
    let out = generate(&config, 0)?;
    println!("{} impressions, {} items sold out", out.records.len(), out.sold_out.len());

    let mut per_item: HashMap<u64, (bool, usize)> = HashMap::new();
    for r in &out.records {
        per_item.entry(r.item_id).or_insert((r.item_is_limited, 0)).1 += 1;
    }
    for limited in [false, true] {
        let counts: Vec<usize> = per_item.values().filter(|(l, _)| *l == limited).map(|(_, n)| *n).collect();
        let mean = counts.iter().sum::<usize>() as f64 / counts.len().max(1) as f64;
        let name = if limited { "limited" } else { "multi" };
        println!("{name:>8} items: {:>6}, mean impressions per item {mean:.2}", counts.len());
    }

    let clicks = out.records.iter().filter(|r| r.label == 1).count();
    let mean_ctr = out.records.iter().map(|r| r.true_ctr).sum::<f64>() / out.records.len() as f64;
    println!("empirical CTR {:.4}, mean true CTR {mean_ctr:.4}", clicks as f64 / out.records.len() as f64);

    let (train, test) = split_by_last_day(out.records, config.days);
    let limited_share = test.iter().filter(|r| r.item_is_limited).count() as f64 / test.len() as f64;
    println!("train {} / test {} (limited share of test {limited_share:.3})", train.len(), test.len());

    if let Some(r) = test.iter().find(|r| r.user_history.len() >= 3) {
        println!("\nexample test impression: user {} item {} day {}", r.user_id, r.item_id, r.day);
        for h in &r.user_history[..3] {
            println!("  clicked item {} (category {}, limited {})", h.item_id, h.category_id, h.is_limited);
        }
    }
    Ok(())
}
