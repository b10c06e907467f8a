//! Prediction file: one tab-separated impression per line after two header
//! lines.
//!
//! ```text
//! #msnet-predictions	v1	model=msnet	config=<hash>	dataset=<hash>	partition_seed=<n>
//! user_id	item_id	p	y	is_new	is_limited	partition_id
//! 17	4031	0.1834...	0	1	1	6
//! ```
//!
//! Probabilities use the shortest decimal form that parses back to the same
//! `f64`, so every metric recomputed from the file is bit-identical.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PredictionRecord, N_PARTITIONS};
use crate::error::{Error, Result};

pub const PREDICTION_VERSION: &str = "v1";
const MAGIC: &str = "#msnet-predictions";
const COLUMNS: &str = "user_id\titem_id\tp\ty\tis_new\tis_limited\tpartition_id";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionHeader {
    pub model: String,
    pub config_hash: String,
    pub dataset_hash: String,
    pub partition_seed: u64,
}

impl PredictionHeader {
    fn render(&self) -> String {
        format!(
            "{MAGIC}\t{PREDICTION_VERSION}\tmodel={}\tconfig={}\tdataset={}\tpartition_seed={}",
            self.model, self.config_hash, self.dataset_hash, self.partition_seed
        )
    }

    fn parse(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.first() != Some(&MAGIC) {
            return Err("not a prediction file".into());
        }
        if f.get(1) != Some(&PREDICTION_VERSION) {
            return Err(format!("unsupported version {:?}, expected {PREDICTION_VERSION}", f.get(1)));
        }
        let get = |key: &str| -> std::result::Result<String, String> {
            f.iter()
                .skip(2)
                .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .map(str::to_string)
                .ok_or_else(|| format!("header lacks `{key}`"))
        };
        Ok(PredictionHeader {
            model: get("model")?,
            config_hash: get("config")?,
            dataset_hash: get("dataset")?,
            partition_seed: get("partition_seed")?.parse().map_err(|e| format!("partition_seed: {e}"))?,
        })
    }
}

pub fn write_predictions(path: impl AsRef<Path>, header: &PredictionHeader, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header.render()).map_err(io)?;
    writeln!(w, "{COLUMNS}").map_err(io)?;
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.user_id,
            r.item_id,
            r.p,
            r.label,
            u8::from(r.is_new),
            u8::from(r.is_limited),
            r.partition_id
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

fn parse_line(line: &str) -> std::result::Result<PredictionRecord, String> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 7 {
        return Err(format!("expected 7 fields, got {}", f.len()));
    }
    let flag = |s: &str, name: &str| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(format!("{name} must be 0 or 1, got `{s}`")),
    };
    let p: f64 = f[2].parse().map_err(|e| format!("p: {e}"))?;
    if !(p > 0.0 && p < 1.0) {
        return Err(format!("p must lie in (0, 1), got {p}"));
    }
    let partition_id: u8 = f[6].parse().map_err(|e| format!("partition_id: {e}"))?;
    if partition_id >= N_PARTITIONS {
        return Err(format!("partition_id {partition_id} out of range"));
    }
    Ok(PredictionRecord {
        user_id: f[0].parse().map_err(|e| format!("user_id: {e}"))?,
        item_id: f[1].parse().map_err(|e| format!("item_id: {e}"))?,
        p,
        label: u8::from(flag(f[3], "y")?),
        is_new: flag(f[4], "is_new")?,
        is_limited: flag(f[5], "is_limited")?,
        partition_id,
    })
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<(PredictionHeader, Vec<PredictionRecord>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let err = |line: usize, message: String| Error::Parse {
        path: source.clone(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let mut next = || -> Result<Option<String>> { lines.next().transpose().map_err(|e| Error::io(path, e)) };
    let header_line = next()?.ok_or_else(|| err(1, "empty file".into()))?;
    let header = PredictionHeader::parse(&header_line).map_err(|m| err(1, m))?;
    match next()? {
        Some(c) if c == COLUMNS => {}
        _ => return Err(err(2, "missing column header".into())),
    }
    let mut records = Vec::new();
    let mut n = 2;
    while let Some(line) = next()? {
        n += 1;
        records.push(parse_line(&line).map_err(|m| err(n, m))?);
    }
    Ok((header, records))
}
