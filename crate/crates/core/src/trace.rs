//! Trace File parsing and the replay timeline.
//!
//! A Trace File is a CSV timeline: each row holds one set of link
//! characteristics plus a `keep_us` duration for which they stay active.
//! Two column sets exist: `SIMPLE` omits jitter, duplication and route
//! identifiers; `EXTENDED` carries every per-entry characteristic.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Column set accepted by the ingest parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Simple,
    Extended,
}

impl TraceFormat {
    /// Column names, in file order.
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            TraceFormat::Simple => &["keep_us", "delay_us", "rate_bps", "loss_prob", "q_limit"],
            TraceFormat::Extended => &[
                "keep_us",
                "delay_us",
                "jitter_us",
                "rate_bps",
                "loss_prob",
                "dup_prob",
                "dup_delay_us",
                "q_limit",
                "route_id",
            ],
        }
    }
}

impl fmt::Display for TraceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceFormat::Simple => write!(f, "SIMPLE"),
            TraceFormat::Extended => write!(f, "EXTENDED"),
        }
    }
}

impl FromStr for TraceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "SIMPLE" => Ok(TraceFormat::Simple),
            "EXTENDED" => Ok(TraceFormat::Extended),
            other => Err(format!("unknown trace format \"{other}\"")),
        }
    }
}

/// One timeline row: how long it stays active and the characteristics
/// applied while it is.
///
/// All fields are plain unsigned integers; probabilities are scaled so
/// that 0 means 0% and `u32::MAX` means 100%. Zero values disable the
/// respective characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    /// Microseconds this entry stays active. Always >= 1.
    pub keep_us: u64,
    /// Base one-way packet delay in microseconds.
    pub delay_us: u64,
    /// Standard deviation of the delay in microseconds.
    pub jitter_us: u64,
    /// Link rate in bits per second; 0 = no rate limit.
    pub rate_bps: u64,
    /// Scaled drop probability (0 = 0%, u32::MAX = 100%).
    pub loss_prob: u32,
    /// Scaled duplication probability.
    pub dup_prob: u32,
    /// Extra delay applied to a duplicate, in microseconds.
    pub dup_delay_us: u64,
    /// Queue capacity in the instance-configured unit; 0 = unlimited.
    pub q_limit: u64,
    /// Ordering domain; 0 permits reordering.
    pub route_id: u64,
}

impl TraceEntry {
    fn write_csv(&self, format: TraceFormat, out: &mut String) {
        match format {
            TraceFormat::Simple => {
                out.push_str(&format!(
                    "{},{},{},{},{}",
                    self.keep_us, self.delay_us, self.rate_bps, self.loss_prob, self.q_limit
                ));
            }
            TraceFormat::Extended => {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}",
                    self.keep_us,
                    self.delay_us,
                    self.jitter_us,
                    self.rate_bps,
                    self.loss_prob,
                    self.dup_prob,
                    self.dup_delay_us,
                    self.q_limit,
                    self.route_id
                ));
            }
        }
    }
}

/// Errors produced while ingesting a Trace File. Line numbers are
/// 1-based and count physical lines, comments included.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("missing header line")]
    MissingHeader,
    #[error("line {line}: unknown column \"{column}\" (expected \"{expected}\")")]
    UnknownColumn {
        line: usize,
        column: String,
        expected: String,
    },
    #[error("line {line}: expected {expected} columns, found {found}")]
    WrongColumnCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: field \"{field}\" is not an unsigned integer: \"{value}\"")]
    NonNumericField {
        line: usize,
        field: String,
        value: String,
    },
    #[error("line {line}: keep_us must be >= 1")]
    ZeroKeepUs { line: usize },
    #[error("line {line}: field \"{field}\" exceeds its value range")]
    ValueOverflow { line: usize, field: String },
    #[error("timeline is empty")]
    EmptyTimeline,
}

/// An ordered sequence of [`TraceEntry`] values plus the prefix sums
/// needed for O(log n) offset lookup. Entry `i` is active on the replay
/// offset interval `[start_i, start_i + keep_us_i)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Timeline {
    entries: Vec<TraceEntry>,
    starts_us: Vec<u64>,
    total_duration_us: u64,
}

impl Timeline {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parse a whole Trace File. The first non-comment line must be the
    /// header naming exactly the format's columns. `#`-comment lines and
    /// blank lines are skipped; CRLF line endings are accepted.
    pub fn parse(text: &str, format: TraceFormat) -> Result<Self, TraceError> {
        let mut timeline = Timeline::new();
        timeline.append_parsed(text, format)?;
        Ok(timeline)
    }

    /// Parse `text` and append its entries after the existing ones.
    /// The header is required again; prefix sums and the total duration
    /// are updated. On error the timeline is left unchanged.
    pub fn append(&mut self, text: &str, format: TraceFormat) -> Result<usize, TraceError> {
        let backup_len = self.entries.len();
        match self.append_parsed(text, format) {
            Ok(added) => Ok(added),
            Err(e) => {
                self.entries.truncate(backup_len);
                self.starts_us.truncate(backup_len);
                self.total_duration_us = self
                    .starts_us
                    .last()
                    .map(|s| s + self.entries[backup_len - 1].keep_us)
                    .unwrap_or(0);
                Err(e)
            }
        }
    }

    fn append_parsed(&mut self, text: &str, format: TraceFormat) -> Result<usize, TraceError> {
        let columns = format.columns();
        let mut saw_header = false;
        let mut added = 0;

        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();

            if !saw_header {
                check_header(&fields, columns, line_no)?;
                saw_header = true;
                continue;
            }

            if fields.len() != columns.len() {
                return Err(TraceError::WrongColumnCount {
                    line: line_no,
                    expected: columns.len(),
                    found: fields.len(),
                });
            }

            let mut values = [0u64; 9];
            for (i, (field, name)) in fields.iter().zip(columns).enumerate() {
                values[i] = parse_field(field, name, line_no)?;
            }

            let entry = match format {
                TraceFormat::Simple => TraceEntry {
                    keep_us: values[0],
                    delay_us: values[1],
                    jitter_us: 0,
                    rate_bps: values[2],
                    loss_prob: check_u32(values[3], "loss_prob", line_no)?,
                    dup_prob: 0,
                    dup_delay_us: 0,
                    q_limit: values[4],
                    route_id: 0,
                },
                TraceFormat::Extended => TraceEntry {
                    keep_us: values[0],
                    delay_us: values[1],
                    jitter_us: values[2],
                    rate_bps: values[3],
                    loss_prob: check_u32(values[4], "loss_prob", line_no)?,
                    dup_prob: check_u32(values[5], "dup_prob", line_no)?,
                    dup_delay_us: values[6],
                    q_limit: values[7],
                    route_id: values[8],
                },
            };

            if entry.keep_us == 0 {
                return Err(TraceError::ZeroKeepUs { line: line_no });
            }
            let start = self.total_duration_us;
            self.total_duration_us = start.checked_add(entry.keep_us).ok_or(
                TraceError::ValueOverflow {
                    line: line_no,
                    field: "keep_us".to_string(),
                },
            )?;
            self.starts_us.push(start);
            self.entries.push(entry);
            added += 1;
        }

        if !saw_header {
            return Err(TraceError::MissingHeader);
        }
        Ok(added)
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum of all `keep_us`.
    pub fn total_duration_us(&self) -> u64 {
        self.total_duration_us
    }

    /// Replay-start offsets of each entry (prefix sums of `keep_us`).
    pub fn starts_us(&self) -> &[u64] {
        &self.starts_us
    }

    /// Index of the entry active at `offset_us` from replay start, or
    /// `None` once the offset is at or past the total duration.
    ///
    /// Equivalent to a linear walk over the entries; implemented as a
    /// binary search over the prefix sums.
    pub fn entry_at_offset(&self, offset_us: u64) -> Result<Option<usize>, TraceError> {
        if self.entries.is_empty() {
            return Err(TraceError::EmptyTimeline);
        }
        if offset_us >= self.total_duration_us {
            return Ok(None);
        }
        let idx = self.starts_us.partition_point(|&s| s <= offset_us) - 1;
        Ok(Some(idx))
    }

    /// Render the timeline back to canonical CSV (header plus one row
    /// per entry, no padding). Parsing the output yields an identical
    /// timeline as long as `format` can represent every entry.
    pub fn to_csv(&self, format: TraceFormat) -> String {
        let mut out = String::new();
        out.push_str(&format.columns().join(","));
        out.push('\n');
        for entry in &self.entries {
            entry.write_csv(format, &mut out);
            out.push('\n');
        }
        out
    }
}

fn check_header(
    fields: &[&str],
    columns: &[&'static str],
    line_no: usize,
) -> Result<(), TraceError> {
    if fields.len() != columns.len() {
        return Err(TraceError::WrongColumnCount {
            line: line_no,
            expected: columns.len(),
            found: fields.len(),
        });
    }
    for (found, expected) in fields.iter().zip(columns) {
        if !found.eq_ignore_ascii_case(expected) {
            return Err(TraceError::UnknownColumn {
                line: line_no,
                column: (*found).to_string(),
                expected: (*expected).to_string(),
            });
        }
    }
    Ok(())
}

fn parse_field(value: &str, field: &str, line_no: usize) -> Result<u64, TraceError> {
    if value.is_empty() || !value.bytes().all(|b| b.is_ascii_digit()) {
        return Err(TraceError::NonNumericField {
            line: line_no,
            field: field.to_string(),
            value: value.to_string(),
        });
    }
    value.parse::<u64>().map_err(|_| TraceError::ValueOverflow {
        line: line_no,
        field: field.to_string(),
    })
}

fn check_u32(value: u64, field: &str, line_no: usize) -> Result<u32, TraceError> {
    u32::try_from(value).map_err(|_| TraceError::ValueOverflow {
        line: line_no,
        field: field.to_string(),
    })
}
