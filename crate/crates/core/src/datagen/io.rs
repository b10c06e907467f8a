//! Tab-separated impression log.
//!
//! ```text
//! #v1	day	user_id	item_id	item_category	label	true_ctr	item_is_limited	item_is_new	history
//! 3	17	402	5	1	0.2311	1	0	388:5:1,90:2:0
//! ```
//!
//! Booleans are `0`/`1`. The history column lists prior clicks most recent
//! first as `item_id:category_id:is_limited` triples joined by commas, and is
//! empty for users without clicks. Floats use the shortest representation
//! that parses back to the same value.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::datagen::{HistoryEntry, ImpressionRecord};
use crate::error::{Error, Result};

pub const DATASET_HEADER: &str =
    "#v1\tday\tuser_id\titem_id\titem_category\tlabel\ttrue_ctr\titem_is_limited\titem_is_new\thistory";

const FIELDS: usize = 9;

pub fn format_record(r: &ImpressionRecord) -> String {
    let mut line = format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t",
        r.day,
        r.user_id,
        r.item_id,
        r.item_category,
        r.label,
        r.true_ctr,
        u8::from(r.item_is_limited),
        u8::from(r.item_is_new),
    );
    for (k, h) in r.user_history.iter().enumerate() {
        if k > 0 {
            line.push(',');
        }
        let _ = write!(line, "{}:{}:{}", h.item_id, h.category_id, u8::from(h.is_limited));
    }
    line
}

pub fn write_records<W: Write>(mut w: W, records: &[ImpressionRecord]) -> std::io::Result<()> {
    writeln!(w, "{DATASET_HEADER}")?;
    for r in records {
        writeln!(w, "{}", format_record(r))?;
    }
    w.flush()
}

pub fn write_dataset(records: &[ImpressionRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(BufWriter::new(file), records).map_err(|e| Error::io(path, e))
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(format!("expected 0 or 1, got `{s}`")),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, field: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("invalid {field} `{s}`"))
}

pub fn parse_record(line: &str) -> std::result::Result<ImpressionRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != FIELDS {
        return Err(format!("expected {FIELDS} fields, found {}", fields.len()));
    }
    let label: u8 = parse_num(fields[4], "label")?;
    if label > 1 {
        return Err(format!("label must be 0 or 1, got {label}"));
    }
    let true_ctr: f64 = parse_num(fields[5], "true_ctr")?;
    if !(true_ctr > 0.0 && true_ctr < 1.0) {
        return Err(format!("true_ctr {true_ctr} outside (0, 1)"));
    }
    let mut user_history = Vec::new();
    if !fields[8].is_empty() {
        for triple in fields[8].split(',') {
            let parts: Vec<&str> = triple.split(':').collect();
            if parts.len() != 3 {
                return Err(format!("malformed history entry `{triple}`"));
            }
            user_history.push(HistoryEntry {
                item_id: parse_num(parts[0], "history item_id")?,
                category_id: parse_num(parts[1], "history category_id")?,
                is_limited: parse_bool(parts[2])?,
            });
        }
    }
    Ok(ImpressionRecord {
        day: parse_num(fields[0], "day")?,
        user_id: parse_num(fields[1], "user_id")?,
        item_id: parse_num(fields[2], "item_id")?,
        item_category: parse_num(fields[3], "item_category")?,
        label,
        true_ctr,
        item_is_limited: parse_bool(fields[6])?,
        item_is_new: parse_bool(fields[7])?,
        user_history,
    })
}

pub fn read_records<R: BufRead>(reader: R, source: &str) -> Result<Vec<ImpressionRecord>> {
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(h)) if h == DATASET_HEADER => {}
        Some(Ok(h)) => return Err(err(1, format!("unexpected header `{h}`"))),
        Some(Err(e)) => return Err(Error::io(source, e)),
        None => return Err(err(1, "missing header".into())),
    }
    let mut records = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        let record = parse_record(&line).map_err(|m| err(k + 2, m))?;
        records.push(record);
    }
    Ok(records)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<ImpressionRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(BufReader::new(file), &path.display().to_string())
}
