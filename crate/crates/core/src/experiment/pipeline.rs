use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EvaluationConfig, ExperimentConfig};
use crate::datagen::{generate, read_dataset, split_by_last_day, write_dataset, GeneratorConfig, ImpressionRecord};
use crate::error::{Error, Result};
use crate::features::build_vocab;
use crate::hashing::{json_hash, sha256_hex, short_hash};
use crate::metrics::{
    grouped_report, read_predictions, write_predictions, MetricReport, PredictionHeader, ReportMeta,
};
use crate::model::{fit, load_checkpoint, predict, save_checkpoint, Adagrad, Model, ModelConfig, TrainingLog};
use crate::seqmodel::attention_score_table;

pub const MANIFEST_VERSION: &str = "msnet-dataset/v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub sha256: String,
    pub records: usize,
}

/// Description of a generated dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub generator_hash: String,
    pub train: FileEntry,
    pub test: FileEntry,
    /// Fingerprint of both files' contents.
    pub dataset_hash: String,
}

fn expected_generator_hash(generator: &GeneratorConfig, seed: u64) -> String {
    json_hash(&(generator, seed))
}

fn write_new(path: &Path, bytes: &[u8], force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(Error::Exists(path.to_path_buf()));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Simulates the market and writes all but the last day to the train file,
/// the last day to the test file, plus a manifest.
pub fn generate_dataset(config: &ExperimentConfig, out_dir: &Path, force: bool) -> Result<Manifest> {
    config.generator.validate()?;
    mkdir(out_dir)?;
    if !force {
        for name in [TRAIN_FILE, TEST_FILE, MANIFEST_FILE] {
            let p = out_dir.join(name);
            if p.exists() {
                return Err(Error::Exists(p));
            }
        }
    }
    let sim = generate(&config.generator, config.seed)?;
    let (train, test) = split_by_last_day(sim.records, config.generator.days);
    let mut entries = Vec::new();
    for (name, records) in [(TRAIN_FILE, &train), (TEST_FILE, &test)] {
        let path = out_dir.join(name);
        write_dataset(records, &path)?;
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        entries.push(FileEntry {
            file: name.to_string(),
            sha256: sha256_hex(&bytes),
            records: records.len(),
        });
    }
    let test_entry = entries.pop().expect("two entries");
    let train_entry = entries.pop().expect("two entries");
    let manifest = Manifest {
        format: MANIFEST_VERSION.to_string(),
        seed: config.seed,
        generator: config.generator.clone(),
        generator_hash: expected_generator_hash(&config.generator, config.seed),
        dataset_hash: short_hash(format!("{}{}", train_entry.sha256, test_entry.sha256).as_bytes()),
        train: train_entry,
        test: test_entry,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    write_new(&out_dir.join(MANIFEST_FILE), json.as_bytes(), true)?;
    Ok(manifest)
}

/// A loaded dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub train: Vec<ImpressionRecord>,
    pub test: Vec<ImpressionRecord>,
}

/// Reads a dataset directory. With `expected` set, file contents must match
/// the manifest and the manifest must describe the expected generator
/// settings.
pub fn load_dataset(dir: &Path, expected: Option<&ExperimentConfig>) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", mpath.display())))?;
    if manifest.format != MANIFEST_VERSION {
        return Err(Error::Serde(format!(
            "{}: format `{}`, expected `{MANIFEST_VERSION}`",
            mpath.display(),
            manifest.format
        )));
    }
    if let Some(cfg) = expected {
        let want = expected_generator_hash(&cfg.generator, cfg.seed);
        if want != manifest.generator_hash {
            return Err(Error::HashMismatch {
                expected: format!("generator {want} (from config)"),
                found: format!("generator {} (from {})", manifest.generator_hash, mpath.display()),
            });
        }
        for entry in [&manifest.train, &manifest.test] {
            let p = dir.join(&entry.file);
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let found = sha256_hex(&bytes);
            if found != entry.sha256 {
                return Err(Error::HashMismatch {
                    expected: format!("{} (manifest)", entry.sha256),
                    found: format!("{found} ({})", p.display()),
                });
            }
        }
    }
    let train = read_dataset(dir.join(&manifest.train.file))?;
    let test = read_dataset(dir.join(&manifest.test.file))?;
    Ok(Dataset {
        dir: dir.to_path_buf(),
        manifest,
        train,
        test,
    })
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub log: TrainingLog,
    pub model: Model,
}

/// Trains one model and writes `{name}.ckpt` and `{name}.log.tsv` under
/// `out_dir`. The checkpoint is written once after initialization and again
/// after every epoch, so an interrupted run leaves the last finished epoch.
pub fn train_model(config: &ModelConfig, data: &Dataset, out_dir: &Path, name: &str) -> Result<TrainOutcome> {
    mkdir(out_dir)?;
    let checkpoint = out_dir.join(format!("{name}.ckpt"));
    let log_path = out_dir.join(format!("{name}.log.tsv"));
    let mut model = Model::new(config.clone(), build_vocab(&data.train))?;
    let mut optimizer = Adagrad::new(config.learning_rate, config.adagrad_decay, &model.params);
    let hash = data.manifest.dataset_hash.clone();
    save_checkpoint(&checkpoint, &model, &optimizer, Some(&hash))?;
    let mut partial = TrainingLog::default();
    write_new(&log_path, partial.to_tsv().as_bytes(), true)?;
    let log = fit(&mut model, &mut optimizer, &data.train, |m, opt, entry| {
        save_checkpoint(&checkpoint, m, opt, Some(&hash))?;
        partial.epochs.push(entry.clone());
        write_new(&log_path, partial.to_tsv().as_bytes(), true)
    })?;
    Ok(TrainOutcome {
        checkpoint,
        log_path,
        log,
        model,
    })
}

pub struct EvalOutcome {
    pub predictions: PathBuf,
    pub report_json: PathBuf,
    pub report_text: PathBuf,
    pub report: MetricReport,
}

fn report_meta(model: &str, config_hash: &str, dataset_hash: &str, eval: &EvaluationConfig, new_days: i64) -> ReportMeta {
    ReportMeta::new(model, config_hash, dataset_hash, eval.partition_seed, new_days.max(0) as u32)
}

/// Scores the test split with a checkpoint, then writes
/// `{name}.predictions.tsv`, `{name}.report.json` and `{name}.report.txt`.
///
/// A baseline report that cannot be read leaves RelaImpr absent with a note
/// rather than failing.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    data: &Dataset,
    eval: &EvaluationConfig,
    baseline: Option<&Path>,
    out_dir: &Path,
    name: &str,
    verify: bool,
) -> Result<EvalOutcome> {
    mkdir(out_dir)?;
    let ck = load_checkpoint(checkpoint, None)?;
    if verify && ck.dataset_hash.as_deref() != Some(data.manifest.dataset_hash.as_str()) {
        return Err(Error::HashMismatch {
            expected: format!("dataset {} ({})", data.manifest.dataset_hash, data.dir.display()),
            found: format!(
                "dataset {} ({})",
                ck.dataset_hash.as_deref().unwrap_or("none"),
                checkpoint.display()
            ),
        });
    }
    let model = ck.model;
    let preds = predict(&model, &data.test, eval.batch_size, eval.partition_seed)?;
    let config_hash = model.config.config_hash();
    let header = PredictionHeader {
        model: name.to_string(),
        config_hash: config_hash.clone(),
        dataset_hash: data.manifest.dataset_hash.clone(),
        partition_seed: eval.partition_seed,
    };
    let predictions = out_dir.join(format!("{name}.predictions.tsv"));
    write_predictions(&predictions, &header, &preds)?;

    let meta = report_meta(name, &config_hash, &data.manifest.dataset_hash, eval, data.manifest.generator.new_window_days);
    let mut report = grouped_report(&preds, meta, None);
    if let Some(path) = baseline {
        match std::fs::read_to_string(path) {
            Ok(text) => report.set_baseline(&MetricReport::from_json(&text)?),
            Err(_) => report.clear_baseline(format!("baseline report {} could not be read", path.display())),
        }
    }
    report.attention = Some(attention_score_table(&model, &data.test, eval.batch_size)?);
    let report_json = out_dir.join(format!("{name}.report.json"));
    let report_text = out_dir.join(format!("{name}.report.txt"));
    write_new(&report_json, report.to_json().as_bytes(), true)?;
    write_new(&report_text, report.render_human().as_bytes(), true)?;
    Ok(EvalOutcome {
        predictions,
        report_json,
        report_text,
        report,
    })
}

/// Rebuilds one report per prediction file, each with RelaImpr against the
/// first. All files must come from the same dataset.
pub fn report_from_predictions(paths: &[PathBuf], eval_new_days: i64) -> Result<Vec<MetricReport>> {
    if paths.is_empty() {
        return Err(Error::Config("at least one prediction file is required".into()));
    }
    let mut loaded = Vec::new();
    for p in paths {
        loaded.push(read_predictions(p)?);
    }
    let first = loaded[0].0.dataset_hash.clone();
    if let Some(((h, _), p)) = loaded.iter().zip(paths).find(|((h, _), _)| h.dataset_hash != first) {
        return Err(Error::HashMismatch {
            expected: format!("dataset {first} ({})", paths[0].display()),
            found: format!("dataset {} ({})", h.dataset_hash, p.display()),
        });
    }
    let mut reports: Vec<MetricReport> = Vec::new();
    for (h, preds) in &loaded {
        let eval = EvaluationConfig {
            partition_seed: h.partition_seed,
            ..EvaluationConfig::default()
        };
        let meta = report_meta(&h.model, &h.config_hash, &h.dataset_hash, &eval, eval_new_days);
        let r = grouped_report(preds, meta, reports.first());
        reports.push(r);
    }
    if let Some(first) = reports.first().cloned() {
        if reports.len() > 1 {
            reports[0].set_baseline(&first);
        }
    }
    Ok(reports)
}
