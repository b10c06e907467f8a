//! Generates a small market into a temporary directory and runs the ablation
//! grid through the same pipeline the `msnet ablate` command uses.

use msnet::datagen::GeneratorConfig;
use msnet::experiment::{ablate, generate_dataset, load_dataset, ExperimentConfig};
use msnet::model::ModelConfig;

fn main() -> msnet::Result<()> {
    let mut config = ExperimentConfig {
        generator: GeneratorConfig {
            n_users: 600,
            n_items: 3000,
            ..GeneratorConfig::default()
        },
        model: ModelConfig {
            epochs: 2,
            ..ModelConfig::default()
        },
        ..ExperimentConfig::default()
    };
    config.ablation.alpha_sweep = vec![0.01, 1.0];

    let dir = std::env::temp_dir().join(format!("msnet-ablation-{}", std::process::id()));
    let data_dir = dir.join("data");
    let manifest = generate_dataset(&config, &data_dir, true)?;
    println!("dataset {} ({} train impressions)", manifest.dataset_hash, manifest.train.records);
    let data = load_dataset(&data_dir, Some(&config))?;
    let table = ablate(&config, &data, &dir.join("runs"))?;
    println!("\n{}", table.render());
    println!("artifacts in {}", dir.display());
    Ok(())
}
