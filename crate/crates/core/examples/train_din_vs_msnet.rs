//! Trains DIN and MSNet on the same simulated market and compares them per
//! item group.
//!
//! `cargo run --release --example train_din_vs_msnet -- [epochs] [seed]`.
//! The default market takes roughly half a minute per epoch for both models
//! together on one core.

use msnet::datagen::{generate, split_by_last_day, GeneratorConfig};
use msnet::features::build_vocab;
use msnet::metrics::{grouped_report, render_comparison, ReportMeta};
use msnet::model::{fit, predict, Adagrad, Architecture, Model, ModelConfig};

fn main() -> msnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(2);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);

    let gen = GeneratorConfig::default();
    let (train, test) = split_by_last_day(generate(&gen, seed)?.records, gen.days);
    println!("{} train / {} test impressions", train.len(), test.len());

    let mut reports = Vec::new();
    for arch in [Architecture::Din, Architecture::Msnet] {
        let config = ModelConfig {
            architecture: arch,
            epochs,
            seed,
            ..ModelConfig::default()
        };
        let mut model = Model::new(config, build_vocab(&train))?;
        let mut opt = Adagrad::new(model.config.learning_rate, model.config.adagrad_decay, &model.params);
        fit(&mut model, &mut opt, &train, |_, _, e| {
            println!("{:>6} epoch {}: ce {:.5} aux {:.5}", arch.name(), e.epoch, e.ce, e.aux);
            Ok(())
        })?;
        let preds = predict(&model, &test, 1024, 0)?;
        let meta = ReportMeta::new(arch.name(), &model.config.config_hash(), "-", 0, gen.new_window_days as u32);
        reports.push(grouped_report(&preds, meta, None));
    }
    println!("\n{}", render_comparison(&reports));
    Ok(())
}
