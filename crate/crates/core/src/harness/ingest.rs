//! Catalog ingestion: parse and validate the listening-log CSV
//! (`song_id,subset,playcount,listeners,release_period`). Bad rows are
//! reported with line numbers and excluded; more than 1% bad rows, a
//! malformed header, or duplicate song ids fail the whole ingest.

use std::io::Write;
use std::path::Path;

use crate::popularity::Song;

use super::HarnessError;

pub const CATALOG_HEADER: [&str; 5] =
    ["song_id", "subset", "playcount", "listeners", "release_period"];

/// One rejected or suspicious row.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RowIssue {
    /// 1-based line number in the CSV file (header is line 1).
    pub line: usize,
    pub message: String,
}

#[derive(Debug)]
pub struct IngestReport {
    pub songs: Vec<Song>,
    pub rejected: Vec<RowIssue>,
    pub warnings: Vec<RowIssue>,
}

/// Maximum tolerated fraction of invalid data rows.
const MAX_BAD_ROW_FRACTION: f64 = 0.01;

pub fn ingest_catalog(path: &Path) -> Result<IngestReport, HarnessError> {
    if !path.is_file() {
        return Err(HarnessError::Catalog(format!(
            "catalog file {} does not exist",
            path.display()
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| HarnessError::Catalog(format!("{}: {e}", path.display())))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| HarnessError::Catalog(e.to_string()))?;
        let got: Vec<&str> = headers.iter().collect();
        if got != CATALOG_HEADER {
            return Err(HarnessError::Catalog(format!(
                "malformed header: expected {:?}, got {:?}",
                CATALOG_HEADER.join(","),
                got.join(",")
            )));
        }
    }

    let mut songs = Vec::new();
    let mut rejected = Vec::new();
    let mut warnings = Vec::new();
    let mut total_rows = 0usize;

    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        total_rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RowIssue { line, message: format!("unparseable row: {e}") });
                continue;
            }
        };
        match parse_row(&record) {
            Ok((song, warn)) => {
                if let Some(message) = warn {
                    warnings.push(RowIssue { line, message });
                }
                songs.push(song);
            }
            Err(message) => rejected.push(RowIssue { line, message }),
        }
    }

    if total_rows == 0 {
        return Err(HarnessError::Validation("catalog has no data rows".into()));
    }
    let bad_fraction = rejected.len() as f64 / total_rows as f64;
    if bad_fraction > MAX_BAD_ROW_FRACTION {
        return Err(HarnessError::Validation(format!(
            "{} of {} rows invalid ({:.1}% > {:.0}%); first: line {}: {}",
            rejected.len(),
            total_rows,
            bad_fraction * 100.0,
            MAX_BAD_ROW_FRACTION * 100.0,
            rejected[0].line,
            rejected[0].message
        )));
    }

    let mut ids: Vec<&str> = songs.iter().map(|s| s.song_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(dup) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(HarnessError::Validation(format!(
            "duplicate song_id '{}'",
            dup[0]
        )));
    }

    for w in &warnings {
        log::warn!("catalog line {}: {}", w.line, w.message);
    }
    Ok(IngestReport { songs, rejected, warnings })
}

fn parse_row(record: &csv::StringRecord) -> Result<(Song, Option<String>), String> {
    if record.len() != 5 {
        return Err(format!("expected 5 fields, got {}", record.len()));
    }
    let song_id = record[0].trim().to_string();
    if song_id.is_empty() {
        return Err("empty song_id".into());
    }
    let subset = record[1].trim().to_string();
    if subset.is_empty() {
        return Err("empty subset".into());
    }
    let playcount: u64 = record[2]
        .trim()
        .parse()
        .map_err(|_| format!("bad playcount '{}' (need a non-negative integer)", &record[2]))?;
    let listeners: u64 = record[3]
        .trim()
        .parse()
        .map_err(|_| format!("bad listeners '{}' (need a non-negative integer)", &record[3]))?;
    let release_period: i32 = record[4]
        .trim()
        .parse()
        .map_err(|_| format!("bad release_period '{}'", &record[4]))?;
    // A listener implies at least one play; synthetic or corrupted logs may
    // violate this, so warn rather than reject.
    let warn = (listeners > playcount && playcount > 0)
        .then(|| format!("listeners ({listeners}) exceed playcount ({playcount})"));
    Ok((Song::new(song_id, subset, playcount, listeners, release_period), warn))
}

/// Write songs in the catalog format (used by the synthetic generator).
pub fn write_catalog_csv(path: &Path, songs: &[Song]) -> Result<(), HarnessError> {
    let mut out = Vec::new();
    writeln!(out, "{}", CATALOG_HEADER.join(","))?;
    for s in songs {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.song_id, s.subset, s.playcount, s.listeners, s.release_period
        )?;
    }
    crate::audio::cache::write_atomic(path, &out)?;
    Ok(())
}

/// Strict read used by tooling that already trusts the file (tests,
/// round-trips); experiment code goes through [`ingest_catalog`].
pub fn read_catalog_csv(path: &Path) -> Result<Vec<Song>, HarnessError> {
    let report = ingest_catalog(path)?;
    if !report.rejected.is_empty() {
        return Err(HarnessError::Validation(format!(
            "catalog has {} invalid rows",
            report.rejected.len()
        )));
    }
    Ok(report.songs)
}
