use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Tape;
use crate::datagen::ImpressionRecord;
use crate::error::{Error, Result};
use crate::features::encode_batch;
use crate::hashing::mix64;
use crate::metrics::{partition_of, PredictionRecord};

use super::{model_loss, Adagrad, Model};

const LOG_HEADER: &str = "#v1\tepoch\tce\taux\ttotal\tbatches\timpressions";

/// Impression-weighted mean losses over one epoch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub ce: f64,
    /// Zero when the auxiliary loss is off.
    pub aux: f64,
    pub total: f64,
    pub batches: usize,
    pub impressions: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    /// Tab-separated, one line per epoch after a versioned header. Floats use
    /// the shortest representation that parses back to the same value.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for e in &self.epochs {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.epoch, e.ce, e.aux, e.total, e.batches, e.impressions
            ));
        }
        s
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == LOG_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    path: "training log".into(),
                    line: 1,
                    message: "missing or unsupported header".into(),
                })
            }
        }
        let mut epochs = Vec::new();
        for (i, line) in lines {
            let bad = |message: String| Error::Parse {
                path: "training log".into(),
                line: i + 1,
                message,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad(format!("expected 6 fields, got {}", f.len())));
            }
            let float = |s: &str| s.parse::<f64>().map_err(|e| bad(e.to_string()));
            let int = |s: &str| s.parse::<usize>().map_err(|e| bad(e.to_string()));
            epochs.push(EpochLog {
                epoch: int(f[0])?,
                ce: float(f[1])?,
                aux: float(f[2])?,
                total: float(f[3])?,
                batches: int(f[4])?,
                impressions: int(f[5])?,
            });
        }
        Ok(TrainingLog { epochs })
    }
}

/// Training order of epoch `epoch`: a permutation fixed by the model seed.
fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(epoch as u64)));
    order.shuffle(&mut rng);
    order
}

/// Trains `model` for `model.config.epochs` epochs.
///
/// `on_epoch` runs after every completed epoch (typically to write a
/// checkpoint). On a non-finite loss or gradient the parameters and
/// optimizer state are restored to the end of the previous epoch and
/// [`Error::Diverged`] is returned.
pub fn fit<F>(model: &mut Model, optimizer: &mut Adagrad, records: &[ImpressionRecord], mut on_epoch: F) -> Result<TrainingLog>
where
    F: FnMut(&Model, &Adagrad, &EpochLog) -> Result<()>,
{
    let config = model.config.clone();
    if records.is_empty() && config.epochs > 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut log = TrainingLog::default();
    for epoch in 0..config.epochs {
        let good = (model.params.clone(), optimizer.clone());
        let order = epoch_order(config.seed, epoch, records.len());
        let (mut ce, mut aux, mut total) = (0.0, 0.0, 0.0);
        let mut batches = 0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = encode_batch(chunk.iter().map(|&i| &records[i]), &model.vocabs, config.max_len);
            let step = (|| {
                let mut tape = Tape::new(&model.params);
                let parts = model_loss(&config, &mut tape, &batch)?;
                let values = (
                    tape.value(parts.ce).item(),
                    parts.aux.map_or(0.0, |a| tape.value(a).item()),
                    tape.value(parts.total).item(),
                );
                if !values.2.is_finite() {
                    return Err(Error::NonFiniteLoss(values.2));
                }
                Ok((tape.backward(parts.total)?, values))
            })();
            let result = step.and_then(|(grads, values)| optimizer.step(&mut model.params, &grads).map(|_| values));
            match result {
                Ok((c, a, t)) => {
                    let w = batch.len() as f64;
                    ce += c * w;
                    aux += a * w;
                    total += t * w;
                    batches += 1;
                }
                Err(Error::NonFiniteLoss(_) | Error::NonFiniteGradient(_)) => {
                    (model.params, *optimizer) = good;
                    return Err(Error::Diverged { epoch, batch: bi });
                }
                Err(e) => return Err(e),
            }
        }
        let n = records.len() as f64;
        let entry = EpochLog {
            epoch,
            ce: ce / n,
            aux: aux / n,
            total: total / n,
            batches,
            impressions: records.len(),
        };
        on_epoch(model, optimizer, &entry)?;
        log.epochs.push(entry);
    }
    Ok(log)
}

/// One prediction per record, in input order.
pub fn predict(model: &Model, records: &[ImpressionRecord], batch_size: usize, partition_seed: u64) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch_size.max(1)) {
        let batch = encode_batch(chunk, &model.vocabs, model.config.max_len);
        let probs = model.predict_batch(&batch)?;
        for (r, p) in chunk.iter().zip(probs) {
            out.push(PredictionRecord {
                user_id: r.user_id,
                item_id: r.item_id,
                p,
                label: r.label,
                is_new: r.item_is_new,
                is_limited: r.item_is_limited,
                partition_id: partition_of(r.user_id, r.item_id, partition_seed),
            });
        }
    }
    Ok(out)
}
