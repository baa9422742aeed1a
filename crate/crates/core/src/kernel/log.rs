//! Line codec for the event log.
//!
//! Each record is one JSON object on its own line:
//! `{"seq":N,"item":"<id>","actor":"<id>","at":"<RFC3339>","reason":"...","payload":{...},"crc":"<hex>"}`.
//! The CRC-32 covers the record text with the `crc` member removed, i.e. the
//! line prefix up to the final `,"crc"` followed by a closing brace.

use std::io::BufRead;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::types::{ActorId, Event, ItemId, Payload, Seq};
use crate::error::{Error, Result};

const CRC_PREFIX: &str = ",\"crc\":\"";
// `,"crc":"` + 8 hex digits + `"}`
const CRC_SUFFIX_LEN: usize = CRC_PREFIX.len() + 8 + 2;

#[derive(Serialize)]
struct RecordRef<'a> {
    seq: Seq,
    item: &'a ItemId,
    actor: &'a ActorId,
    at: &'a DateTime<Utc>,
    reason: &'a str,
    payload: &'a Payload,
}

#[derive(Deserialize)]
struct Record {
    seq: Seq,
    item: ItemId,
    actor: ActorId,
    at: DateTime<Utc>,
    reason: String,
    payload: Payload,
}

/// Encodes an event as a log line, including the trailing newline.
pub fn encode(event: &Event) -> String {
    let body = serde_json::to_string(&RecordRef {
        seq: event.seq,
        item: &event.item,
        actor: &event.actor,
        at: &event.at,
        reason: &event.reason,
        payload: &event.payload,
    })
    .expect("event serializes");
    let crc = crc32fast::hash(body.as_bytes());
    let mut line = body;
    line.pop();
    line.push_str(CRC_PREFIX);
    line.push_str(&format!("{crc:08x}"));
    line.push_str("\"}\n");
    line
}

/// Decodes one log line (without its newline). `line_no` is 1-based and only
/// used for error reporting.
pub fn decode(line: &str, line_no: usize) -> Result<Event> {
    let corrupt = |reason: String| Error::CorruptLog {
        line: line_no,
        reason,
    };
    if line.len() < CRC_SUFFIX_LEN || !line.ends_with("\"}") {
        return Err(corrupt("truncated record".into()));
    }
    let split = line.len() - CRC_SUFFIX_LEN;
    let (body, suffix) = line.split_at(split);
    if !suffix.starts_with(CRC_PREFIX) {
        return Err(corrupt("missing checksum".into()));
    }
    let stored = u32::from_str_radix(&suffix[CRC_PREFIX.len()..CRC_PREFIX.len() + 8], 16)
        .map_err(|_| corrupt("malformed checksum".into()))?;
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(body.as_bytes());
    hasher.update(b"}");
    if hasher.finalize() != stored {
        return Err(corrupt("checksum mismatch".into()));
    }
    let mut text = String::with_capacity(body.len() + 1);
    text.push_str(body);
    text.push('}');
    let r: Record =
        serde_json::from_str(&text).map_err(|e| corrupt(format!("undecodable record: {e}")))?;
    Ok(Event {
        seq: r.seq,
        item: r.item,
        actor: r.actor,
        at: r.at,
        reason: r.reason,
        payload: r.payload,
    })
}

/// Reads a whole log, verifying checksums and seq contiguity.
pub fn read_all(reader: impl BufRead) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            return Err(Error::CorruptLog {
                line: i + 1,
                reason: "empty record".into(),
            });
        }
        let event = decode(&line, i + 1)?;
        let expected = events.len() as Seq + 1;
        if event.seq != expected {
            return Err(Error::CorruptLog {
                line: i + 1,
                reason: format!("seq gap: expected {expected}, found {}", event.seq),
            });
        }
        events.push(event);
    }
    Ok(events)
}
