//! Append-only evaluation log.
//!
//! One record per line: `alpha coords qoi value`, where `coords` is the
//! comma-separated list of coordinates and every real is the 16-digit hex
//! image of its IEEE-754 bits, so reloading is bit-exact. A final line without
//! a newline (an interrupted write) is dropped with a warning.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::Path;

use misc_uq_core::oracle::{CacheRecord, EvalCache};

use crate::error::{CliError, CliResult};

pub const HEADER: &str = "# misc-uq evaluation log v1";

pub fn encode_f64(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

pub fn decode_f64(s: &str) -> Option<f64> {
    if s.len() != 16 {
        return None;
    }
    u64::from_str_radix(s, 16).ok().map(f64::from_bits)
}

pub fn format_record(r: &CacheRecord) -> String {
    let coords: Vec<String> = r.point.iter().map(|&x| encode_f64(x)).collect();
    format!(
        "{} {} {} {}",
        r.fidelity,
        coords.join(","),
        r.qoi,
        encode_f64(r.value)
    )
}

pub fn parse_record(line: &str) -> Option<CacheRecord> {
    let mut it = line.split_whitespace();
    let fidelity = it.next()?.parse().ok()?;
    let point = it
        .next()?
        .split(',')
        .map(decode_f64)
        .collect::<Option<Vec<f64>>>()?;
    let qoi = it.next()?.to_string();
    let value = decode_f64(it.next()?)?;
    if it.next().is_some() {
        return None;
    }
    Some(CacheRecord {
        fidelity,
        point,
        qoi,
        value,
    })
}

/// Reads the log; a missing file gives an empty cache.
pub fn load(path: &Path) -> CliResult<EvalCache> {
    let mut cache = EvalCache::new();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(cache),
        Err(e) => return Err(CliError::io(format!("reading {}", path.display()))(e)),
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        match parse_record(line) {
            Some(r) => cache.restore(r),
            None if i + 1 == lines.len() && !complete => {
                log::warn!("{}: dropping truncated final record", path.display());
            }
            None => {
                return Err(CliError::format(
                    path.display(),
                    format!("malformed record on line {}", i + 1),
                ))
            }
        }
    }
    Ok(cache)
}

/// Appends records, writing the header first if the file is new.
pub fn append(path: &Path, records: &[CacheRecord]) -> CliResult<()> {
    if records.is_empty() {
        return Ok(());
    }
    let ctx = || format!("appending to {}", path.display());
    let fresh = !path.exists();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(CliError::io(ctx()))?;
    let mut buf = String::new();
    if fresh {
        buf.push_str(HEADER);
        buf.push('\n');
    }
    for r in records {
        buf.push_str(&format_record(r));
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(CliError::io(ctx()))?;
    file.sync_data().map_err(CliError::io(ctx()))
}
