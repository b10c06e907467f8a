use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate_checkpoint, train_model, Dataset, ExperimentConfig, Variant};
use crate::error::Result;
use crate::metrics::{Group, MetricReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub auc: Option<f64>,
    pub auc_rela_impr: Option<f64>,
    pub gauc: Option<f64>,
    pub gauc_rela_impr: Option<f64>,
    pub limited_auc: Option<f64>,
    /// Error code and message of a variant that did not finish.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub dataset_hash: String,
    pub rows: Vec<AblationRow>,
}

impl AblationRow {
    fn from_report(name: String, r: &MetricReport) -> Self {
        let o = r.group(Group::Overall);
        AblationRow {
            name,
            auc: o.and_then(|g| g.auc_mean),
            auc_rela_impr: o.and_then(|g| g.rela_impr_auc),
            gauc: o.and_then(|g| g.gauc),
            gauc_rela_impr: o.and_then(|g| g.rela_impr_gauc),
            limited_auc: r.group(Group::Limited).and_then(|g| g.auc_mean),
            failure: None,
        }
    }

    fn failed(name: String, e: &crate::Error) -> Self {
        AblationRow {
            name,
            auc: None,
            auc_rela_impr: None,
            gauc: None,
            gauc_rela_impr: None,
            limited_auc: None,
            failure: Some(format!("{}: {e}", e.code())),
        }
    }
}

impl AblationTable {
    pub fn render(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let p = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:+.2}%"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<26} {:>8} {:>9} {:>8} {:>9} {:>11}",
            "Method", "AUC", "RelaImpr", "GAUC", "RelaImpr", "L/s AUC"
        );
        for r in &self.rows {
            if let Some(fail) = &r.failure {
                let _ = writeln!(s, "{:<26} failed: {fail}", r.name);
                continue;
            }
            let _ = writeln!(
                s,
                "{:<26} {:>8} {:>9} {:>8} {:>9} {:>11}",
                r.name,
                f(r.auc),
                p(r.auc_rela_impr),
                f(r.gauc),
                p(r.gauc_rela_impr),
                f(r.limited_auc)
            );
        }
        s
    }
}

/// Trains and evaluates the DIN baseline and every configured variant on the
/// same data and seed, each measured against the baseline. A variant that
/// fails becomes a marked row; the others still run.
pub fn ablate(config: &ExperimentConfig, data: &Dataset, out_dir: &Path) -> Result<AblationTable> {
    let mut jobs: Vec<(String, String, crate::model::ModelConfig)> = vec![(
        Variant::Base.label().to_string(),
        Variant::Base.slug().to_string(),
        Variant::Base.apply(&config.model),
    )];
    for v in config.ablation.variants.iter().filter(|v| **v != Variant::Base) {
        jobs.push((v.label().to_string(), v.slug().to_string(), v.apply(&config.model)));
    }
    for &alpha in &config.ablation.alpha_sweep {
        let mut c = Variant::Full.apply(&config.model);
        c.alpha = alpha;
        jobs.push((format!("MSNet (alpha={alpha})"), format!("full_alpha_{alpha}"), c));
    }

    let baseline_path = out_dir.join(format!("{}.report.json", Variant::Base.slug()));
    let mut rows = Vec::new();
    for (i, (label, slug, model_cfg)) in jobs.into_iter().enumerate() {
        let run = || -> Result<MetricReport> {
            let trained = train_model(&model_cfg, data, out_dir, &slug)?;
            let baseline = (i > 0).then_some(baseline_path.as_path());
            let mut out = evaluate_checkpoint(&trained.checkpoint, data, &config.evaluation, baseline, out_dir, &slug, true)?;
            if i == 0 {
                let own = out.report.clone();
                out.report.set_baseline(&own);
                std::fs::write(&out.report_json, out.report.to_json()).map_err(|e| crate::Error::io(&out.report_json, e))?;
            }
            Ok(out.report)
        };
        rows.push(match run() {
            Ok(r) => AblationRow::from_report(label, &r),
            Err(e) => AblationRow::failed(label, &e),
        });
    }
    Ok(AblationTable {
        dataset_hash: data.manifest.dataset_hash.clone(),
        rows,
    })
}
