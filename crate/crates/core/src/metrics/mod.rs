//! Ranking and calibration metrics with group slicing and partition
//! statistics.

mod io;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::hashing::mix64;

pub use io::{read_predictions, write_predictions, PredictionHeader, PREDICTION_VERSION};
pub use report::{grouped_report, render_comparison, Group, GroupMetrics, MetricReport, ReportMeta, REPORT_VERSION};

/// Number of evaluation partitions.
pub const N_PARTITIONS: u8 = 10;

/// One scored impression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub user_id: u64,
    pub item_id: u64,
    /// Predicted click probability.
    pub p: f64,
    pub label: u8,
    pub is_new: bool,
    pub is_limited: bool,
    pub partition_id: u8,
}

/// Partition of an impression, a seeded hash of `(user_id, item_id)`.
pub fn partition_of(user_id: u64, item_id: u64, seed: u64) -> u8 {
    (mix64(seed ^ mix64(user_id ^ mix64(item_id))) % u64::from(N_PARTITIONS)) as u8
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half. `None` unless both classes are present.
///
/// Computed by sorting, with the pair count kept in integers (doubled so a
/// tie is worth 1), which makes the result identical to the all-pairs count.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut neg_below, mut doubled) = (0u128, 0u128);
    let (mut pos, mut neg) = (0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p_grp, mut n_grp) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] != 0 {
                p_grp += 1;
            } else {
                n_grp += 1;
            }
            j += 1;
        }
        doubled += p_grp * (2 * neg_below + n_grp);
        neg_below += n_grp;
        pos += p_grp;
        neg += n_grp;
        i = j;
    }
    (pos > 0 && neg > 0).then(|| doubled as f64 / (2 * pos * neg) as f64)
}

pub fn auc_records<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>) -> Option<f64> {
    let (scores, labels): (Vec<f64>, Vec<u8>) = records.into_iter().map(|r| (r.p, r.label)).unzip();
    auc(&scores, &labels)
}

/// Impression-weighted mean of per-user AUC over users with both classes.
pub fn gauc<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>) -> Option<f64> {
    let mut by_user: BTreeMap<u64, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for r in records {
        let e = by_user.entry(r.user_id).or_default();
        e.0.push(r.p);
        e.1.push(r.label);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (scores, labels) in by_user.values() {
        if let Some(a) = auc(scores, labels) {
            let n = scores.len() as f64;
            num += n * a;
            den += n;
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Relative improvement over a baseline AUC, in percent, measured from the
/// random-guess level 0.5.
pub fn rela_impr(measured: f64, base: f64) -> Option<f64> {
    (base != 0.5).then(|| ((measured - 0.5) / (base - 0.5) - 1.0) * 100.0)
}

/// Sum of predictions over sum of clicks.
pub fn pcoc<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>) -> Option<f64> {
    let (mut sp, mut sy) = (0.0, 0.0);
    for r in records {
        sp += r.p;
        sy += f64::from(r.label);
    }
    (sy > 0.0).then(|| sp / sy)
}

/// Calibration error of one partition: `pcoc − 1` when over-predicting,
/// `1/pcoc − 1` otherwise.
pub fn calibration_error(pcoc: f64) -> f64 {
    if pcoc >= 1.0 {
        pcoc - 1.0
    } else {
        1.0 / pcoc - 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalN {
    /// Root mean square of the partition calibration errors; `None` when no
    /// partition has a click.
    pub value: Option<f64>,
    /// Partitions skipped for having no clicks.
    pub excluded: usize,
}

/// Root mean square of per-partition calibration errors over partitions
/// `0..n`.
pub fn cal_n<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>, n: u8) -> CalN {
    let mut sums = vec![(0.0f64, 0.0f64); usize::from(n)];
    for r in records {
        if let Some(s) = sums.get_mut(usize::from(r.partition_id)) {
            s.0 += r.p;
            s.1 += f64::from(r.label);
        }
    }
    let errors: Vec<f64> = sums
        .iter()
        .filter(|(_, y)| *y > 0.0)
        .map(|(p, y)| calibration_error(p / y))
        .collect();
    let excluded = sums.len() - errors.len();
    let value = (!errors.is_empty()).then(|| (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt());
    CalN { value, excluded }
}

/// AUC of each partition `0..n`; `None` for single-class partitions.
pub fn partition_aucs(records: &[&PredictionRecord], n: u8) -> Vec<Option<f64>> {
    (0..n)
        .map(|k| auc_records(records.iter().copied().filter(|r| r.partition_id == k)))
        .collect()
}

/// Mean and sample standard deviation (`n − 1`); the deviation needs two
/// values.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p_value: f64,
}

/// Welch's two-sample t-test, e.g. over two models' partition AUCs. Needs
/// at least two values per side and nonzero pooled variance.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<TTest> {
    let (Some(ma), Some(sa)) = mean_std(a) else { return None };
    let (Some(mb), Some(sb)) = mean_std(b) else { return None };
    let (va, vb) = (sa * sa / a.len() as f64, sb * sb / b.len() as f64);
    let se2 = va + vb;
    if se2 <= 0.0 {
        return None;
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    let p_value = 2.0 * (1.0 - dist.cdf(t.abs()));
    Some(TTest { t, df, p_value })
}
