use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeDelta};
use log::warn;
use serde::{Deserialize, Serialize};

use super::{forward_fill, Channel, ChannelRole, SeriesFrame};
use crate::error::{Error, Result};

/// Channel roles and parsing options for a delimiter-separated input file.
///
/// A covariate listed under both `past_covariates` and `future_covariates`
/// feeds both pathways.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub targets: Vec<String>,
    #[serde(default)]
    pub past_covariates: Vec<String>,
    #[serde(default)]
    pub future_covariates: Vec<String>,
    /// Sampling interval such as `"1h"`, `"15min"` or `"5min"`.
    pub frequency: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Longest covariate gap (in steps) that forward-fill will bridge.
    #[serde(default = "default_max_gap")]
    pub max_gap: usize,
}

fn default_delimiter() -> char {
    ','
}

fn default_max_gap() -> usize {
    8
}

impl DatasetSchema {
    pub fn new(targets: &[&str], frequency: &str) -> Self {
        Self {
            targets: targets.iter().map(|s| s.to_string()).collect(),
            past_covariates: Vec::new(),
            future_covariates: Vec::new(),
            frequency: frequency.to_string(),
            delimiter: default_delimiter(),
            max_gap: default_max_gap(),
        }
    }

    /// Roles in declaration order: targets first, then covariates.
    pub fn roles(&self) -> Result<Vec<(String, ChannelRole)>> {
        if self.targets.is_empty() {
            return Err(Error::Schema("schema declares no target".into()));
        }
        let mut out: Vec<(String, ChannelRole)> = Vec::new();
        for t in &self.targets {
            if out.iter().any(|(n, _)| n == t) {
                return Err(Error::Schema(format!("target {t} declared twice")));
            }
            out.push((t.clone(), ChannelRole::Target));
        }
        for name in &self.targets {
            if self.past_covariates.contains(name) || self.future_covariates.contains(name) {
                return Err(Error::Schema(format!("{name} is both a target and a covariate")));
            }
        }
        for name in self.past_covariates.iter().chain(&self.future_covariates) {
            if out.iter().any(|(n, _)| n == name) {
                continue;
            }
            let past = self.past_covariates.contains(name);
            let future = self.future_covariates.contains(name);
            let role = match (past, future) {
                (true, true) => ChannelRole::Covariate,
                (true, false) => ChannelRole::PastCovariate,
                _ => ChannelRole::FutureCovariate,
            };
            out.push((name.clone(), role));
        }
        Ok(out)
    }
}

/// Parses `"<n><unit>"` with unit one of `s`, `min`, `h`, `d` (also `m`,
/// `t`, `H`, `D`).
pub fn parse_frequency(text: &str) -> Result<TimeDelta> {
    let text = text.trim();
    let split = text
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(text.len());
    let (num, unit) = text.split_at(split);
    let n: i64 = if num.is_empty() {
        1
    } else {
        num.parse()
            .map_err(|_| Error::Config(format!("bad frequency {text:?}")))?
    };
    let delta = match unit.trim() {
        "s" | "sec" => TimeDelta::seconds(n),
        "m" | "min" | "t" | "T" => TimeDelta::minutes(n),
        "h" | "H" | "hour" => TimeDelta::hours(n),
        "d" | "D" | "day" => TimeDelta::days(n),
        other => return Err(Error::Config(format!("unknown frequency unit {other:?} in {text:?}"))),
    };
    if n <= 0 {
        return Err(Error::Config(format!("frequency must be positive, got {text:?}")));
    }
    Ok(delta)
}

/// ISO-8601 date-times with `T` or space separator, optional fractional
/// seconds and optional UTC offset (converted to UTC), or bare dates.
pub fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    let text = text.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.naive_utc());
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(text, f).ok())
        .or_else(|| {
            NaiveDate::parse_from_str(text, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

fn parse_value(text: &str) -> f64 {
    let t = text.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("null") {
        return f64::NAN;
    }
    t.parse().unwrap_or(f64::NAN)
}

/// Reads a delimiter-separated file (first column timestamps, header row of
/// channel names), aligns it to the declared frequency and forward-fills
/// short covariate gaps.
///
/// Missing timestamps become rows of `NaN`. Steps that are not a whole
/// number of periods (beyond 1% jitter) are rejected.
pub fn load_frame(path: &Path, schema: &DatasetSchema) -> Result<SeriesFrame> {
    let frequency = parse_frequency(&schema.frequency)?;
    let roles = schema.roles()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().skip(1).map(|(i, h)| (h, i)).collect();
    let missing: Vec<&str> = roles
        .iter()
        .map(|(n, _)| n.as_str())
        .filter(|n| !index.contains_key(n))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!("missing column(s): {}", missing.join(", "))));
    }

    let mut stamps: Vec<NaiveDateTime> = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); roles.len()];
    let freq_secs = frequency.num_milliseconds() as f64 / 1000.0;
    let tolerance = freq_secs / 100.0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let raw = record.get(0).unwrap_or("");
        let ts = parse_timestamp(raw).ok_or_else(|| Error::Timestamp {
            row,
            value: raw.to_string(),
        })?;
        if let Some(&prev) = stamps.last() {
            if ts <= prev {
                return Err(Error::NonMonotoneTimestamps {
                    row,
                    previous: prev.to_string(),
                    current: ts.to_string(),
                });
            }
            let step = (ts - prev).num_milliseconds() as f64 / 1000.0;
            let periods = (step / freq_secs).round();
            if periods < 1.0 || (step - periods * freq_secs).abs() > tolerance {
                return Err(Error::FrequencyMismatch {
                    row,
                    step_secs: step,
                    frequency_secs: freq_secs,
                });
            }
            for _ in 1..periods as usize {
                stamps.push(prev);
                for col in &mut columns {
                    col.push(f64::NAN);
                }
            }
        }
        stamps.push(ts);
        for ((name, _), col) in roles.iter().zip(columns.iter_mut()) {
            col.push(parse_value(record.get(index[name.as_str()]).unwrap_or("")));
        }
    }
    let Some(&start) = stamps.first() else {
        return Err(Error::Empty(format!("{} has no data rows", path.display())));
    };
    let channels = roles
        .into_iter()
        .zip(columns)
        .map(|((name, role), values)| Channel::new(name, role, values))
        .collect();
    let frame = SeriesFrame::new(start, frequency, channels)?;
    let report = forward_fill(&frame, schema.max_gap);
    for gap in &report.unfilled {
        warn!(
            "{}: {} missing value(s) in {} at row {} left unfilled{}",
            path.display(),
            gap.len,
            gap.channel,
            gap.start,
            if gap.leading { " (leading)" } else { "" }
        );
    }
    Ok(report.frame)
}

/// Writes a frame in the format [`load_frame`] reads.
pub fn write_frame(frame: &SeriesFrame, path: &Path) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::from("timestamp");
    for c in frame.channels() {
        out.push(',');
        out.push_str(&c.name);
    }
    out.push('\n');
    for (row, ts) in frame.timestamps().enumerate() {
        out.push_str(&ts.format("%Y-%m-%dT%H:%M:%S").to_string());
        for c in frame.channels() {
            out.push(',');
            let v = c.values[row];
            if !v.is_nan() {
                out.push_str(&format!("{v}"));
            }
        }
        out.push('\n');
    }
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
