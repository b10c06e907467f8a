use serde::{Deserialize, Serialize};

use crate::datagen::ImpressionRecord;
use crate::error::Result;
use crate::features::{encode_batch, SampleBatch};
use crate::model::Model;

/// Mean pre-softmax attention score bucketed by the stock type of the
/// target (rows) and of the sequence item (columns). Index 0 is
/// multi-stock, 1 limited-stock.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub sums: [[f64; 2]; 2],
    pub counts: [[u64; 2]; 2],
}

impl ScoreTable {
    pub fn add(&mut self, target_limited: bool, seq_limited: bool, score: f64) {
        let (t, s) = (usize::from(target_limited), usize::from(seq_limited));
        self.sums[t][s] += score;
        self.counts[t][s] += 1;
    }

    /// `None` for an empty bucket.
    pub fn mean(&self, target_limited: bool, seq_limited: bool) -> Option<f64> {
        let (t, s) = (usize::from(target_limited), usize::from(seq_limited));
        (self.counts[t][s] > 0).then(|| self.sums[t][s] / self.counts[t][s] as f64)
    }

    pub fn merge(&mut self, other: &ScoreTable) {
        for t in 0..2 {
            for s in 0..2 {
                self.sums[t][s] += other.sums[t][s];
                self.counts[t][s] += other.counts[t][s];
            }
        }
    }

    /// Adds per-position scores (`B×H`, already averaged over heads) for the
    /// positions selected by `mask`.
    pub fn accumulate(&mut self, batch: &SampleBatch, scores: &[f64], mask: &[bool]) {
        for b in 0..batch.batch_size {
            for p in batch.positions(b) {
                if mask[p] {
                    self.add(batch.is_limited[b], batch.seq_limited[p], scores[p]);
                }
            }
        }
    }

    pub fn render(&self) -> String {
        let cell = |t, s| match self.mean(t, s) {
            Some(m) => format!("{m:>10.4}"),
            None => format!("{:>10}", "absent"),
        };
        format!(
            "target \\ sequence      M/s        L/s\n\
             M/s             {} {}\n\
             L/s             {} {}\n",
            cell(false, false),
            cell(false, true),
            cell(true, false),
            cell(true, true)
        )
    }
}

/// Averages pre-softmax scores over every valid sequence position in
/// `records`, taking each position's score from the attention branch that
/// covers it.
pub fn attention_score_table(model: &Model, records: &[ImpressionRecord], batch_size: usize) -> Result<ScoreTable> {
    let mut table = ScoreTable::default();
    for chunk in records.chunks(batch_size.max(1)) {
        let batch = encode_batch(chunk, &model.vocabs, model.config.max_len);
        for (scores, mask) in model.branch_scores(&batch)? {
            table.accumulate(&batch, &scores, &mask);
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucket_means_follow_input() {
        let mut t = ScoreTable::default();
        for s in [0.3, 0.4] {
            t.add(false, false, s);
        }
        for s in [0.1, 0.24] {
            t.add(false, true, s);
        }
        t.add(true, false, 0.09);
        t.add(true, true, 0.07);
        assert!((t.mean(false, false).unwrap() - 0.35).abs() < 1e-12);
        assert!((t.mean(false, true).unwrap() - 0.17).abs() < 1e-12);
        assert!((t.mean(true, false).unwrap() - 0.09).abs() < 1e-12);
        assert!((t.mean(true, true).unwrap() - 0.07).abs() < 1e-12);
    }

    #[test]
    fn empty_buckets_are_absent() {
        let mut t = ScoreTable::default();
        t.add(false, false, 1.0);
        assert_eq!(t.mean(false, false), Some(1.0));
        assert_eq!(t.mean(false, true), None);
        assert_eq!(t.mean(true, false), None);
        assert_eq!(t.mean(true, true), None);
        assert!(t.render().contains("absent"));
    }
}
