use std::io::{Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::EvalError;

pub const RATINGS_HEADER: [&str; 5] = ["rater_id", "frame_id", "audio_id", "mos", "timestamp"];

/// One human judgment of a (frame, audio) pair on the 1..=5 MOS scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater_id: String,
    pub frame_id: String,
    pub audio_id: String,
    pub mos: u8,
    pub timestamp: DateTime<Utc>,
}

impl RatingRecord {
    pub fn new(
        rater_id: impl Into<String>,
        frame_id: impl Into<String>,
        audio_id: impl Into<String>,
        mos: u8,
        timestamp: DateTime<Utc>,
    ) -> Result<Self, EvalError> {
        if !(1..=5).contains(&mos) {
            return Err(EvalError::InvalidMos(mos as i64));
        }
        Ok(Self {
            rater_id: rater_id.into(),
            frame_id: frame_id.into(),
            audio_id: audio_id.into(),
            mos,
            timestamp,
        })
    }

    fn row(&self) -> [String; 5] {
        [
            self.rater_id.clone(),
            self.frame_id.clone(),
            self.audio_id.clone(),
            self.mos.to_string(),
            format_timestamp(&self.timestamp),
        ]
    }
}

/// ISO-8601 UTC with a `Z` suffix and only as many fraction digits as needed.
pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn parse_error(line: u64, message: impl Into<String>) -> EvalError {
    EvalError::Parse {
        line,
        message: message.into(),
    }
}

/// Reads a ratings CSV. Errors carry the 1-based line number.
pub fn read_ratings<R: Read>(reader: R) -> Result<Vec<RatingRecord>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_error(1, e.to_string()))?
        .clone();
    if header.iter().ne(RATINGS_HEADER) {
        return Err(parse_error(
            1,
            format!("expected header '{}'", RATINGS_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let mos: i64 = row[3]
            .trim()
            .parse()
            .map_err(|_| parse_error(line, format!("mos '{}' is not an integer", &row[3])))?;
        if !(1..=5).contains(&mos) {
            return Err(parse_error(line, format!("mos {mos} outside 1..=5")));
        }
        let timestamp = DateTime::parse_from_rfc3339(row[4].trim())
            .map_err(|e| parse_error(line, format!("timestamp '{}': {e}", &row[4])))?
            .with_timezone(&Utc);
        out.push(RatingRecord {
            rater_id: row[0].to_string(),
            frame_id: row[1].to_string(),
            audio_id: row[2].to_string(),
            mos: mos as u8,
            timestamp,
        });
    }
    Ok(out)
}

pub fn write_ratings<W: Write>(writer: W, ratings: &[RatingRecord]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RATINGS_HEADER)?;
    for r in ratings {
        w.write_record(r.row())?;
    }
    w.flush()?;
    Ok(())
}

/// Serializes a single data row (no header), newline-terminated.
pub fn rating_row(record: &RatingRecord) -> Result<Vec<u8>, EvalError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(record.row())?;
    w.into_inner().map_err(|e| EvalError::Io(e.to_string()))
}

pub fn header_row() -> Vec<u8> {
    format!("{}\n", RATINGS_HEADER.join(",")).into_bytes()
}
