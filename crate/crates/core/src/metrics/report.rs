use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{auc_records, cal_n, gauc, mean_std, partition_aucs, pcoc, rela_impr, PredictionRecord, N_PARTITIONS};
use crate::seqmodel::ScoreTable;

pub const REPORT_VERSION: &str = "msnet-report/v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Overall,
    New,
    Limited,
    Multi,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Overall, Group::New, Group::Limited, Group::Multi];

    pub fn name(self) -> &'static str {
        match self {
            Group::Overall => "overall",
            Group::New => "new",
            Group::Limited => "limited",
            Group::Multi => "multi",
        }
    }

    pub fn contains(self, r: &PredictionRecord) -> bool {
        match self {
            Group::Overall => true,
            Group::New => r.is_new,
            Group::Limited => r.is_limited,
            Group::Multi => !r.is_limited,
        }
    }
}

/// Descriptive fields stamped into every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model: String,
    pub config_hash: String,
    pub dataset_hash: String,
    pub partition_seed: u64,
    /// Human-readable definition of each group.
    pub group_definitions: Vec<(String, String)>,
    pub notes: Vec<String>,
}

impl ReportMeta {
    /// Metadata with the standard group definitions; `new_days` is the age
    /// window below which an item counts as new.
    pub fn new(model: &str, config_hash: &str, dataset_hash: &str, partition_seed: u64, new_days: u32) -> Self {
        ReportMeta {
            model: model.to_string(),
            config_hash: config_hash.to_string(),
            dataset_hash: dataset_hash.to_string(),
            partition_seed,
            group_definitions: vec![
                ("overall".into(), "every test impression".into()),
                ("new".into(), format!("item listed less than {new_days} days before the impression")),
                ("limited".into(), "item listed with a stock of exactly one".into()),
                ("multi".into(), "item listed with a stock above one".into()),
            ],
            notes: vec![
                format!("AUC is the mean and sample std over {N_PARTITIONS} hash partitions of (user_id, item_id)"),
                "tied scores count one half in every AUC".into(),
                "GAUC excludes users whose impressions are all one class".into(),
                "Cal-N skips partitions without clicks".into(),
                "target and sequence items share one id table and one category table".into(),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: Group,
    pub impressions: usize,
    pub clicks: usize,
    /// Set when the group is empty or metrics are undefined for it.
    pub absent: Option<String>,
    pub auc_mean: Option<f64>,
    pub auc_std: Option<f64>,
    pub partition_aucs: Vec<Option<f64>>,
    /// AUC over the whole group without partitioning.
    pub auc_pooled: Option<f64>,
    pub gauc: Option<f64>,
    pub pcoc: Option<f64>,
    pub cal_n: Option<f64>,
    pub cal_n_excluded: usize,
    /// Percent, against the baseline's `auc_mean`.
    pub rela_impr_auc: Option<f64>,
    /// Percent, against the baseline's `gauc`.
    pub rela_impr_gauc: Option<f64>,
}

impl GroupMetrics {
    fn compute(group: Group, records: &[PredictionRecord]) -> Self {
        let members: Vec<&PredictionRecord> = records.iter().filter(|r| group.contains(r)).collect();
        let clicks = members.iter().filter(|r| r.label != 0).count();
        let part = partition_aucs(&members, N_PARTITIONS);
        let defined: Vec<f64> = part.iter().flatten().copied().collect();
        let (auc_mean, auc_std) = mean_std(&defined);
        let c = cal_n(members.iter().copied(), N_PARTITIONS);
        let absent = if members.is_empty() {
            Some("no impressions in this group".to_string())
        } else if clicks == 0 || clicks == members.len() {
            Some("only one label class in this group".to_string())
        } else {
            None
        };
        GroupMetrics {
            group,
            impressions: members.len(),
            clicks,
            absent,
            auc_mean,
            auc_std,
            partition_aucs: part,
            auc_pooled: auc_records(members.iter().copied()),
            gauc: gauc(members.iter().copied()),
            pcoc: pcoc(members.iter().copied()),
            cal_n: c.value,
            cal_n_excluded: c.excluded,
            rela_impr_auc: None,
            rela_impr_gauc: None,
        }
    }
}

/// Grouped metrics of one model's predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub format: String,
    pub meta: ReportMeta,
    /// Model name of the report RelaImpr is measured against.
    pub baseline: Option<String>,
    /// Why RelaImpr is missing, when it is.
    pub baseline_note: Option<String>,
    pub groups: Vec<GroupMetrics>,
    pub attention: Option<ScoreTable>,
}

/// Computes every metric for every group and, given a baseline, the
/// per-group RelaImpr against it.
pub fn grouped_report(records: &[PredictionRecord], meta: ReportMeta, baseline: Option<&MetricReport>) -> MetricReport {
    let mut report = MetricReport {
        format: REPORT_VERSION.to_string(),
        meta,
        baseline: None,
        baseline_note: Some("no baseline supplied".into()),
        groups: Group::ALL.iter().map(|&g| GroupMetrics::compute(g, records)).collect(),
        attention: None,
    };
    if let Some(b) = baseline {
        report.set_baseline(b);
    }
    report
}

impl MetricReport {
    pub fn group(&self, g: Group) -> Option<&GroupMetrics> {
        self.groups.iter().find(|m| m.group == g)
    }

    pub fn set_baseline(&mut self, baseline: &MetricReport) {
        for m in &mut self.groups {
            let b = baseline.group(m.group);
            let rel = |x: Option<f64>, y: Option<f64>| x.zip(y).and_then(|(x, y)| rela_impr(x, y));
            m.rela_impr_auc = rel(m.auc_mean, b.and_then(|b| b.auc_mean));
            m.rela_impr_gauc = rel(m.gauc, b.and_then(|b| b.gauc));
        }
        self.baseline = Some(baseline.meta.model.clone());
        self.baseline_note = None;
    }

    /// Marks RelaImpr as unavailable with a reason, e.g. a missing file.
    pub fn clear_baseline(&mut self, note: impl Into<String>) {
        for m in &mut self.groups {
            m.rela_impr_auc = None;
            m.rela_impr_gauc = None;
        }
        self.baseline = None;
        self.baseline_note = Some(note.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        let r: MetricReport = serde_json::from_str(text).map_err(|e| crate::Error::Serde(e.to_string()))?;
        if r.format != REPORT_VERSION {
            return Err(crate::Error::Serde(format!(
                "report format `{}`, expected `{REPORT_VERSION}`",
                r.format
            )));
        }
        Ok(r)
    }

    pub fn render_human(&self) -> String {
        let mut s = String::new();
        let m = &self.meta;
        let _ = writeln!(s, "model {}  config {}  dataset {}", m.model, m.config_hash, m.dataset_hash);
        let _ = writeln!(
            s,
            "{:<8} {:>8} {:>7} {:>16} {:>8} {:>8} {:>7} {:>7} {:>9} {:>9}",
            "group", "n", "clicks", "AUC (avg±std)", "pooled", "GAUC", "PCOC", "Cal-N", "RI(AUC)", "RI(GAUC)"
        );
        for g in &self.groups {
            if let Some(reason) = &g.absent {
                let _ = writeln!(s, "{:<8} {:>8} {:>7}  absent: {reason}", g.group.name(), g.impressions, g.clicks);
                continue;
            }
            let auc = match (g.auc_mean, g.auc_std) {
                (Some(a), Some(sd)) => format!("{a:.4}±{sd:.4}"),
                (Some(a), None) => format!("{a:.4}"),
                _ => "-".into(),
            };
            let _ = writeln!(
                s,
                "{:<8} {:>8} {:>7} {:>16} {:>8} {:>8} {:>7} {:>7} {:>9} {:>9}",
                g.group.name(),
                g.impressions,
                g.clicks,
                auc,
                fmt4(g.auc_pooled),
                fmt4(g.gauc),
                fmt4(g.pcoc),
                fmt4(g.cal_n),
                pct(g.rela_impr_auc),
                pct(g.rela_impr_gauc)
            );
        }
        match (&self.baseline, &self.baseline_note) {
            (Some(b), _) => {
                let _ = writeln!(s, "RelaImpr against {b}");
            }
            (None, Some(note)) => {
                let _ = writeln!(s, "RelaImpr absent: {note}");
            }
            _ => {}
        }
        if let Some(t) = &self.attention {
            let _ = writeln!(s, "\nmean pre-softmax attention score");
            s.push_str(&t.render());
        }
        for (g, d) in &m.group_definitions {
            let _ = writeln!(s, "  {g}: {d}");
        }
        for n in &m.notes {
            let _ = writeln!(s, "  note: {n}");
        }
        s
    }
}

fn fmt4(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:+.2}%"))
}

/// Side-by-side table of several reports; RelaImpr is measured against the
/// first.
pub fn render_comparison(reports: &[MetricReport]) -> String {
    let mut s = String::new();
    let Some(base) = reports.first() else {
        return s;
    };
    let _ = write!(s, "{:<8} {:<10}", "group", "metric");
    for r in reports {
        let _ = write!(s, " {:>16}", r.meta.model);
    }
    s.push('\n');
    for g in Group::ALL {
        let b = base.group(g);
        type Row<'a> = (&'a str, Box<dyn Fn(&GroupMetrics) -> Option<f64>>, bool);
        let rows: [Row; 4] = [
            ("avg AUC", Box::new(|m| m.auc_mean), false),
            ("RelaImpr", Box::new(|m| m.auc_mean), true),
            ("GAUC", Box::new(|m| m.gauc), false),
            ("RelaImpr", Box::new(|m| m.gauc), true),
        ];
        for (label, get, relative) in rows.iter() {
            let _ = write!(s, "{:<8} {:<10}", g.name(), label);
            for r in reports {
                let v = r.group(g).and_then(|m| get(m));
                let cell = if *relative {
                    pct(v.zip(b.and_then(|b| get(b))).and_then(|(x, y)| rela_impr(x, y)))
                } else {
                    fmt4(v)
                };
                let _ = write!(s, " {cell:>16}");
            }
            s.push('\n');
        }
    }
    s
}
