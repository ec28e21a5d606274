use std::borrow::Cow;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Utc, Weekday};
use serde::{Deserialize, Serialize};

use super::{fields, DatasetError};
use crate::features::{FieldSource, RawValue};

/// The four recommendable content kinds; each gets its own dataset and model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentType {
    Drug,
    DrugFamily,
    VideoChapter,
    VideoModule,
}

impl ContentType {
    pub const ALL: [ContentType; 4] =
        [ContentType::Drug, ContentType::DrugFamily, ContentType::VideoChapter, ContentType::VideoModule];

    pub fn as_str(self) -> &'static str {
        match self {
            ContentType::Drug => "drug",
            ContentType::DrugFamily => "drug_family",
            ContentType::VideoChapter => "video_chapter",
            ContentType::VideoModule => "video_module",
        }
    }

    /// Row label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ContentType::Drug => "Drug",
            ContentType::DrugFamily => "Drug family",
            ContentType::VideoChapter => "Video chapter",
            ContentType::VideoModule => "Video module",
        }
    }
}

impl fmt::Display for ContentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContentType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ContentType::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| format!("unknown content type `{s}`"))
    }
}

/// One behavioral-log row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionEvent {
    pub user_id: String,
    pub content_id: String,
    pub content_type: ContentType,
    pub timestamp: DateTime<Utc>,
}

impl InteractionEvent {
    pub fn date(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }
}

pub(crate) fn weekday_name(date: NaiveDate) -> &'static str {
    match date.weekday() {
        Weekday::Mon => "Mon",
        Weekday::Tue => "Tue",
        Weekday::Wed => "Wed",
        Weekday::Thu => "Thu",
        Weekday::Fri => "Fri",
        Weekday::Sat => "Sat",
        Weekday::Sun => "Sun",
    }
}

pub(crate) fn month_name(date: NaiveDate) -> &'static str {
    const MONTHS: [&str; 12] = ["01", "02", "03", "04", "05", "06", "07", "08", "09", "10", "11", "12"];
    MONTHS[date.month0() as usize]
}

impl FieldSource for InteractionEvent {
    fn raw(&self, field: &str) -> Option<RawValue<'_>> {
        fn text(s: &str) -> Option<RawValue<'_>> {
            Some(RawValue::Text(Cow::Borrowed(s)))
        }
        match field {
            fields::USER_ID => Some(RawValue::Text(Cow::Borrowed(&self.user_id))),
            fields::CONTENT_ID => Some(RawValue::Text(Cow::Borrowed(&self.content_id))),
            fields::CONTENT_TYPE => text(self.content_type.as_str()),
            fields::DAY => text(weekday_name(self.date())),
            fields::MONTH => text(month_name(self.date())),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Csv,
    Jsonl,
}

impl LogFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => LogFormat::Jsonl,
            _ => LogFormat::Csv,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IngestReport {
    pub events: Vec<InteractionEvent>,
    pub total_rows: usize,
    pub malformed_rows: usize,
    /// First few rejection reasons, for diagnostics.
    pub sample_errors: Vec<String>,
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .map(|n| n.and_utc())
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn parse_event(user: &str, content: &str, kind: &str, ts: &str) -> Result<InteractionEvent, String> {
    if user.trim().is_empty() || content.trim().is_empty() {
        return Err("empty user_id or content_id".into());
    }
    let content_type = kind.parse::<ContentType>()?;
    let timestamp = parse_timestamp(ts).ok_or_else(|| format!("bad timestamp `{ts}`"))?;
    Ok(InteractionEvent { user_id: user.trim().to_string(), content_id: content.trim().to_string(), content_type, timestamp })
}

/// Deterministic total order: timestamp, then user, type and content.
pub fn sort_events(events: &mut [InteractionEvent]) {
    events.sort_by(|a, b| {
        (a.timestamp, &a.user_id, a.content_type, &a.content_id).cmp(&(b.timestamp, &b.user_id, b.content_type, &b.content_id))
    });
}

#[derive(Deserialize)]
struct JsonEvent {
    user_id: serde_json::Value,
    content_id: serde_json::Value,
    content_type: String,
    timestamp: String,
}

fn json_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parses a log stream, sorting the accepted events and counting rejected rows.
pub fn read_events<R: Read>(reader: R, format: LogFormat, max_malformed_fraction: f64) -> Result<IngestReport, DatasetError> {
    let mut events = Vec::new();
    let mut total = 0usize;
    let mut errors: Vec<String> = Vec::new();
    let reject = |line: usize, msg: String, errors: &mut Vec<String>| {
        errors.push(format!("row {line}: {msg}"));
    };
    match format {
        LogFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
            let headers = rdr.headers().map_err(|e| DatasetError::BadHeader(e.to_string()))?.clone();
            let col = |name: &str| {
                headers.iter().position(|h| h == name).ok_or_else(|| DatasetError::BadHeader(format!("missing column `{name}`")))
            };
            let (cu, cc, ct, cts) = (col("user_id")?, col("content_id")?, col("content_type")?, col("timestamp")?);
            for (i, rec) in rdr.records().enumerate() {
                total += 1;
                let rec = match rec {
                    Ok(r) => r,
                    Err(e) => {
                        reject(i + 2, e.to_string(), &mut errors);
                        continue;
                    }
                };
                let get = |c: usize| rec.get(c);
                match (get(cu), get(cc), get(ct), get(cts)) {
                    (Some(u), Some(c), Some(k), Some(t)) => match parse_event(u, c, k, t) {
                        Ok(e) => events.push(e),
                        Err(msg) => reject(i + 2, msg, &mut errors),
                    },
                    _ => reject(i + 2, "wrong number of fields".into(), &mut errors),
                }
            }
        }
        LogFormat::Jsonl => {
            for (i, line) in BufReader::new(reader).lines().enumerate() {
                let line = line.map_err(|e| DatasetError::Io { path: "<stream>".into(), message: e.to_string() })?;
                if line.trim().is_empty() {
                    continue;
                }
                total += 1;
                match serde_json::from_str::<JsonEvent>(&line) {
                    Ok(j) => match parse_event(&json_string(&j.user_id), &json_string(&j.content_id), &j.content_type, &j.timestamp) {
                        Ok(e) => events.push(e),
                        Err(msg) => reject(i + 1, msg, &mut errors),
                    },
                    Err(e) => reject(i + 1, e.to_string(), &mut errors),
                }
            }
        }
    }
    let malformed = errors.len();
    if total > 0 && malformed as f64 / total as f64 > max_malformed_fraction {
        return Err(DatasetError::TooManyMalformed { malformed, total, threshold: max_malformed_fraction });
    }
    if malformed > 0 {
        log::warn!("skipped {malformed} malformed log rows out of {total}");
    }
    sort_events(&mut events);
    errors.truncate(10);
    Ok(IngestReport { events, total_rows: total, malformed_rows: malformed, sample_errors: errors })
}

/// Reads a CSV or JSONL log file (chosen by extension).
pub fn ingest_logs(path: &Path, max_malformed_fraction: f64) -> Result<IngestReport, DatasetError> {
    let file = File::open(path).map_err(|e| DatasetError::Io { path: path.display().to_string(), message: e.to_string() })?;
    read_events(BufReader::new(file), LogFormat::from_path(path), max_malformed_fraction)
}

pub fn write_events<W: Write>(writer: W, events: &[InteractionEvent], format: LogFormat) -> std::io::Result<()> {
    match format {
        LogFormat::Csv => {
            let mut w = csv::Writer::from_writer(writer);
            w.write_record(["user_id", "content_id", "content_type", "timestamp"])?;
            for e in events {
                w.write_record([e.user_id.as_str(), &e.content_id, e.content_type.as_str(), &format_timestamp(&e.timestamp)])?;
            }
            w.flush()
        }
        LogFormat::Jsonl => {
            let mut w = std::io::BufWriter::new(writer);
            for e in events {
                let line = serde_json::json!({
                    "user_id": e.user_id,
                    "content_id": e.content_id,
                    "content_type": e.content_type.as_str(),
                    "timestamp": format_timestamp(&e.timestamp),
                });
                writeln!(w, "{line}")?;
            }
            w.flush()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "user_id,content_id,content_type,timestamp\n\
        u2,drug_01,drug,2021-02-03T10:00:00Z\n\
        u1,drug_02,drug,2021-02-01T09:30:00Z\n\
        u1,family_00,drug_family,2021-02-02T08:00:00+00:00\n";

    #[test]
    fn parses_and_sorts() {
        let r = read_events(SAMPLE.as_bytes(), LogFormat::Csv, 0.05).unwrap();
        assert_eq!(r.events.len(), 3);
        assert_eq!(r.malformed_rows, 0);
        let days: Vec<u32> = r.events.iter().map(|e| e.date().day()).collect();
        assert_eq!(days, vec![1, 2, 3]);
        assert_eq!(r.events[1].content_type, ContentType::DrugFamily);
    }

    #[test]
    fn bad_date_is_skipped_and_counted() {
        let mut text = String::from(SAMPLE);
        text.push_str("u3,drug_01,drug,2021-13-45T00:00:00Z\n");
        let r = read_events(text.as_bytes(), LogFormat::Csv, 0.5).unwrap();
        assert_eq!(r.malformed_rows, 1);
        assert_eq!(r.events.len(), 3);
        assert!(r.sample_errors[0].contains("bad timestamp"));
    }

    #[test]
    fn too_many_malformed_rows_is_fatal() {
        let mut text = String::from(SAMPLE);
        text.push_str("u3,drug_01,podcast,2021-02-01T00:00:00Z\n");
        let err = read_events(text.as_bytes(), LogFormat::Csv, 0.05).unwrap_err();
        assert_eq!(err, DatasetError::TooManyMalformed { malformed: 1, total: 4, threshold: 0.05 });
    }

    #[test]
    fn missing_column_is_fatal() {
        let err = read_events("user_id,content_id\nu1,x\n".as_bytes(), LogFormat::Csv, 0.05).unwrap_err();
        assert!(matches!(err, DatasetError::BadHeader(_)));
    }

    #[test]
    fn jsonl_round_trip() {
        let r = read_events(SAMPLE.as_bytes(), LogFormat::Csv, 0.05).unwrap();
        let mut buf = Vec::new();
        write_events(&mut buf, &r.events, LogFormat::Jsonl).unwrap();
        let back = read_events(buf.as_slice(), LogFormat::Jsonl, 0.0).unwrap();
        assert_eq!(back.events, r.events);
    }

    #[test]
    fn calendar_fields() {
        let e = read_events(SAMPLE.as_bytes(), LogFormat::Csv, 0.05).unwrap().events.remove(0);
        assert_eq!(e.raw(fields::DAY), Some(RawValue::Text(Cow::Borrowed("Mon"))));
        assert_eq!(e.raw(fields::MONTH), Some(RawValue::Text(Cow::Borrowed("02"))));
        assert_eq!(e.raw(fields::CONNECTION_FREQUENCY), None);
    }
}
