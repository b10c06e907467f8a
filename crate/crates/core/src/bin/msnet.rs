use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use msnet::experiment::{
    ablate, evaluate_checkpoint, generate_dataset, load_dataset, report_from_predictions, train_model, ExperimentConfig,
};
use msnet::metrics::render_comparison;
use msnet::model::{load_checkpoint, Architecture};
use msnet::seqmodel::attention_score_table;
use msnet::{Error, Result};

#[derive(Parser)]
#[command(name = "msnet", version, about = "Train and evaluate DIN and MSNet on a simulated C2C market")]
struct Cli {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the market and model seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Human,
    Machine,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Din,
    Msnet,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the market and write train/test files plus a manifest.
    Generate {
        /// Output directory [default: paths.data_dir]
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train one model and write a checkpoint and a loss log.
    Train {
        /// Dataset directory [default: paths.data_dir]
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        arch: Option<Arch>,
        /// Output directory [default: paths.run_dir]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Artifact name [default: the architecture]
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        no_verify: bool,
    },
    /// Score the test split and write predictions and a grouped report.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report JSON to measure RelaImpr against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Artifact name [default: checkpoint file stem]
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        no_verify: bool,
    },
    /// Train and evaluate DIN and every configured MSNet variant.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_verify: bool,
    },
    /// Compare prediction files side by side.
    Report {
        #[arg(required = true)]
        predictions: Vec<PathBuf>,
        /// Adds the attention-score table computed on the dataset's test split.
        #[arg(long, requires = "data")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn emit(format: Format, human: String, machine: serde_json::Value) {
    match format {
        Format::Human => print!("{human}"),
        Format::Machine => println!("{machine}"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let data_dir = |d: Option<PathBuf>| d.unwrap_or_else(|| cfg.paths.data_dir.clone());
    let run_dir = |d: Option<PathBuf>| d.unwrap_or_else(|| cfg.paths.run_dir.clone());
    let verify = |no_verify: bool| (!no_verify).then_some(&cfg);

    match cli.command {
        Command::Generate { out, force } => {
            let out = data_dir(out);
            let m = generate_dataset(&cfg, &out, force)?;
            let human = format!(
                "wrote {} ({} train, {} test impressions), dataset {}\n",
                out.display(),
                m.train.records,
                m.test.records,
                m.dataset_hash
            );
            emit(cli.format, human, value(&m));
        }
        Command::Train {
            data,
            arch,
            out,
            name,
            no_verify,
        } => {
            let ds = load_dataset(&data_dir(data), verify(no_verify))?;
            let mut model_cfg = cfg.model.clone();
            if let Some(a) = arch {
                model_cfg.architecture = match a {
                    Arch::Din => Architecture::Din,
                    Arch::Msnet => Architecture::Msnet,
                };
            }
            let name = name.unwrap_or_else(|| model_cfg.architecture.name().to_string());
            let t = train_model(&model_cfg, &ds, &run_dir(out), &name)?;
            let mut human = format!(
                "checkpoint {}  config {}\n",
                t.checkpoint.display(),
                model_cfg.config_hash()
            );
            if let Some(last) = t.log.epochs.last() {
                human += &format!(
                    "epoch {}: ce {:.6}  aux {:.6}  total {:.6}\n",
                    last.epoch, last.ce, last.aux, last.total
                );
            }
            let machine = json!({
                "checkpoint": t.checkpoint,
                "log": t.log_path,
                "config_hash": model_cfg.config_hash(),
                "dataset_hash": ds.manifest.dataset_hash,
                "epochs": t.log.epochs,
            });
            emit(cli.format, human, machine);
        }
        Command::Evaluate {
            checkpoint,
            data,
            baseline,
            out,
            name,
            no_verify,
        } => {
            let ds = load_dataset(&data_dir(data), verify(no_verify))?;
            let name = name.unwrap_or_else(|| {
                checkpoint
                    .file_stem()
                    .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
            });
            let e = evaluate_checkpoint(
                &checkpoint,
                &ds,
                &cfg.evaluation,
                baseline.as_deref(),
                &run_dir(out),
                &name,
                !no_verify,
            )?;
            emit(cli.format, e.report.render_human(), value(&e.report));
        }
        Command::Ablate { data, out, no_verify } => {
            let ds = load_dataset(&data_dir(data), verify(no_verify))?;
            let table = ablate(&cfg, &ds, &run_dir(out))?;
            emit(cli.format, table.render(), value(&table));
        }
        Command::Report {
            predictions,
            checkpoint,
            data,
        } => {
            let reports = report_from_predictions(&predictions, cfg.generator.new_window_days)?;
            let mut human = render_comparison(&reports);
            let mut attention = None;
            if let Some(ck) = checkpoint {
                let ds = load_dataset(&data_dir(data), None)?;
                let model = load_checkpoint(&ck, None)?.model;
                let table = attention_score_table(&model, &ds.test, cfg.evaluation.batch_size)?;
                human += "\nmean pre-softmax attention score\n";
                human += &table.render();
                attention = Some(table);
            }
            let machine = json!({ "reports": reports, "attention": attention });
            emit(cli.format, human, machine);
        }
    }
    Ok(())
}

fn value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), one_line(&e));
            ExitCode::FAILURE
        }
    }
}

fn one_line(e: &Error) -> String {
    e.to_string().replace('\n', " ")
}
