//! Mean pre-softmax attention scores of a trained DIN, split by whether the
//! target and each history item are single-unit (L/s) or multi-stock (M/s).
//!
//! Sold-out single-unit items get few updates, so their embeddings stay close
//! to initialization and multi-stock targets attend to them less.

use msnet::datagen::{generate, split_by_last_day, GeneratorConfig};
use msnet::features::build_vocab;
use msnet::model::{fit, Adagrad, Model, ModelConfig};
use msnet::seqmodel::attention_score_table;

fn main() -> msnet::Result<()> {
    let gen = GeneratorConfig::default();
    let (train, test) = split_by_last_day(generate(&gen, 0)?.records, gen.days);
    let config = ModelConfig {
        epochs: 1,
        ..ModelConfig::din()
    };
    let mut model = Model::new(config, build_vocab(&train))?;
    let before = attention_score_table(&model, &test, 1024)?;
    let mut opt = Adagrad::new(model.config.learning_rate, model.config.adagrad_decay, &model.params);
    fit(&mut model, &mut opt, &train, |_, _, _| Ok(()))?;
    let after = attention_score_table(&model, &test, 1024)?;

    println!("at initialization\n{}", before.render());
    println!("after one epoch\n{}", after.render());
    if let (Some(mm), Some(ml)) = (after.mean(false, false), after.mean(false, true)) {
        println!("M/s target: multi history {mm:.4} vs limited history {ml:.4}");
    }
    Ok(())
}
