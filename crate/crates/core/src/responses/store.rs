//! Line-delimited JSON stores.
//!
//! Whole-file saves go through a temporary file and a rename. Appends write
//! one complete line and sync before returning. A trailing line without a
//! newline is a torn append and is skipped on load; any other malformed
//! line is an error carrying its line number.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{RankingRecord, ResponseRecord, Stimulus};
use crate::error::{Error, Result};

pub fn load_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if i + 1 == lines.len() && !complete => break,
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

pub fn save_records<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        for item in items {
            serde_json::to_writer(&mut w, item)
                .map_err(|e| Error::io(&tmp, std::io::Error::other(e)))?;
            w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
        }
        let file = w.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Appends one record as a single line and syncs it to disk.
pub fn append_record<T: Serialize>(path: &Path, item: &T) -> Result<Vec<u8>> {
    let mut line = serde_json::to_vec(item).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    line.push(b'\n');
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    file.write_all(&line).map_err(|e| Error::io(path, e))?;
    file.sync_data().map_err(|e| Error::io(path, e))?;
    Ok(line)
}

pub fn load_responses(path: &Path) -> Result<Vec<ResponseRecord>> {
    load_records(path)
}

pub fn save_responses(path: &Path, items: &[ResponseRecord]) -> Result<()> {
    save_records(path, items)
}

pub fn load_stimuli(path: &Path) -> Result<Vec<Stimulus>> {
    load_records(path)
}

pub fn save_stimuli(path: &Path, items: &[Stimulus]) -> Result<()> {
    save_records(path, items)
}

pub fn load_rankings(path: &Path) -> Result<Vec<RankingRecord>> {
    load_records(path)
}

pub fn save_rankings(path: &Path, items: &[RankingRecord]) -> Result<()> {
    save_records(path, items)
}

pub const RESPONSES_CSV_HEADER: [&str; 5] =
    ["participant_id", "stimulus_id", "x", "y", "response_time_s"];

/// One row per grid point of every response. Responses whose stimulus is
/// unknown are an error.
pub fn write_responses_csv<W: Write>(
    w: W,
    stimuli: &[Stimulus],
    responses: &[ResponseRecord],
) -> Result<()> {
    let by_id: HashMap<&str, &Stimulus> = stimuli.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut out = csv::Writer::from_writer(w);
    let wrap = |e: csv::Error| Error::io("<csv>", std::io::Error::other(e));
    out.write_record(RESPONSES_CSV_HEADER).map_err(wrap)?;
    for r in responses {
        let s = by_id
            .get(r.stimulus_id.as_str())
            .ok_or_else(|| Error::validation("stimulus_id", format!("unknown stimulus {}", r.stimulus_id)))?;
        r.validate_for(s)?;
        for (x, y) in s.x_test.iter().zip(&r.y_star) {
            out.write_record([
                r.participant_id.as_str(),
                r.stimulus_id.as_str(),
                &x.to_string(),
                &y.to_string(),
                &r.response_time_s.to_string(),
            ])
            .map_err(wrap)?;
        }
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
