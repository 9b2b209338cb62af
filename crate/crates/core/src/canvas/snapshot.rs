//! Line-delimited snapshot format.
//!
//! ```text
//! matscreen-canvas v1
//! entry {"key":"a","mode":"normal","creator":"user","created_seq":1,"updated_seq":1,"value":{"num":1.0}}
//! log {"seq":1,"timestamp_ms":0,"actor":"user","op":"write","key":"a","summary":"1"}
//! end entries=1 log=1
//! ```
//!
//! Entries appear in key order, log records in sequence order. The trailer
//! makes truncation detectable even at a line boundary. Identical canvas
//! states serialize to identical bytes.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AccessMode, Canvas, CanvasEntry, ChangeOp, ChangeRecord, Value};

pub const SNAPSHOT_HEADER: &str = "matscreen-canvas v1";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt snapshot at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

#[derive(Serialize, Deserialize)]
struct EntryLine {
    key: String,
    mode: String,
    creator: String,
    created_seq: u64,
    updated_seq: u64,
    value: Value,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    seq: u64,
    timestamp_ms: u64,
    actor: String,
    op: String,
    key: String,
    summary: String,
}

fn corrupt(line: usize, reason: impl Into<String>) -> SnapshotError {
    SnapshotError::Corrupt {
        line,
        reason: reason.into(),
    }
}

impl Canvas {
    pub fn to_snapshot_string(&self) -> String {
        let mut out = String::new();
        out.push_str(SNAPSHOT_HEADER);
        out.push('\n');
        for e in self.entries.values() {
            let line = EntryLine {
                key: e.key.clone(),
                mode: e.mode.to_string(),
                creator: e.creator.clone(),
                created_seq: e.created_seq,
                updated_seq: e.updated_seq,
                value: e.value.clone(),
            };
            out.push_str("entry ");
            out.push_str(&serde_json::to_string(&line).expect("canvas values are finite"));
            out.push('\n');
        }
        for r in &self.log {
            let line = LogLine {
                seq: r.seq,
                timestamp_ms: r.timestamp_ms,
                actor: r.actor.clone(),
                op: r.op.as_str().to_string(),
                key: r.key.clone(),
                summary: r.summary.clone(),
            };
            out.push_str("log ");
            out.push_str(&serde_json::to_string(&line).expect("log lines serialize"));
            out.push('\n');
        }
        out.push_str(&format!("end entries={} log={}\n", self.entries.len(), self.log.len()));
        out
    }

    pub fn from_snapshot_str(text: &str) -> Result<Canvas, SnapshotError> {
        let mut canvas = Canvas::new();
        let mut lines = text.split_inclusive('\n').enumerate();
        match lines.next() {
            Some((_, l)) if l.trim_end_matches('\n') == SNAPSHOT_HEADER => {}
            _ => return Err(corrupt(1, format!("expected header {SNAPSHOT_HEADER:?}"))),
        }
        let mut ended = false;
        for (idx, raw) in lines {
            let lineno = idx + 1;
            if ended {
                return Err(corrupt(lineno, "content after end marker"));
            }
            let line = raw
                .strip_suffix('\n')
                .ok_or_else(|| corrupt(lineno, "unterminated line"))?;
            if let Some(json) = line.strip_prefix("entry ") {
                let e: EntryLine =
                    serde_json::from_str(json).map_err(|err| corrupt(lineno, err.to_string()))?;
                let mode: AccessMode = e.mode.parse().map_err(|err: String| corrupt(lineno, err))?;
                if e.key.is_empty() {
                    return Err(corrupt(lineno, "empty key"));
                }
                if canvas.entries.contains_key(&e.key) {
                    return Err(corrupt(lineno, format!("duplicate key {:?}", e.key)));
                }
                canvas.entries.insert(
                    e.key.clone(),
                    CanvasEntry {
                        key: e.key,
                        value: e.value,
                        mode,
                        creator: e.creator,
                        created_seq: e.created_seq,
                        updated_seq: e.updated_seq,
                    },
                );
            } else if let Some(json) = line.strip_prefix("log ") {
                let r: LogLine =
                    serde_json::from_str(json).map_err(|err| corrupt(lineno, err.to_string()))?;
                let op = ChangeOp::parse(&r.op)
                    .ok_or_else(|| corrupt(lineno, format!("unknown op {:?}", r.op)))?;
                let expected = canvas.log.len() as u64 + 1;
                if r.seq != expected {
                    return Err(corrupt(lineno, format!("expected seq {expected}, found {}", r.seq)));
                }
                canvas.log.push(ChangeRecord {
                    seq: r.seq,
                    timestamp_ms: r.timestamp_ms,
                    actor: r.actor,
                    op,
                    key: r.key,
                    summary: r.summary,
                });
            } else if let Some(rest) = line.strip_prefix("end ") {
                let expected = format!("entries={} log={}", canvas.entries.len(), canvas.log.len());
                if rest != expected {
                    return Err(corrupt(lineno, format!("trailer {rest:?} does not match {expected:?}")));
                }
                ended = true;
            } else {
                return Err(corrupt(lineno, "unrecognized record"));
            }
        }
        if !ended {
            let last = text.lines().count().max(1);
            return Err(corrupt(last + 1, "missing end marker (truncated snapshot)"));
        }
        let max_seq = canvas.log.len() as u64;
        if let Some(e) = canvas.entries.values().find(|e| e.updated_seq > max_seq || e.created_seq > e.updated_seq) {
            return Err(corrupt(1, format!("entry {:?} references a missing log record", e.key)));
        }
        Ok(canvas)
    }

    pub fn snapshot(&self, path: impl AsRef<Path>) -> Result<(), SnapshotError> {
        fs::write(path, self.to_snapshot_string())?;
        Ok(())
    }

    pub fn restore(path: impl AsRef<Path>) -> Result<Canvas, SnapshotError> {
        let text = fs::read_to_string(path)?;
        Canvas::from_snapshot_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{frozen_clock, Schema};
    use super::*;

    fn sample() -> Canvas {
        let mut c = Canvas::with_clock(frozen_clock);
        c.write("user", "a", Value::Num(1.0), false).unwrap();
        c.write("dft", "lattice", Value::str("bcc"), false).unwrap();
        c.create("supervisor", "plan", Value::str("p"), AccessMode::Protected)
            .unwrap();
        c.create(
            "dft",
            "job_list",
            Value::str_list(["x.pwi"]),
            AccessMode::FormatRestricted(Schema::FilenameList),
        )
        .unwrap();
        let _ = c.write("dft", "a", Value::Num(2.0), false);
        c.write("dft", "a", Value::Num(0.1 + 0.2), true).unwrap();
        c.write(
            "dft",
            "rec",
            Value::record([("x", Value::Num(1e-300)), ("p", Value::path("w/o.pwo"))]),
            false,
        )
        .unwrap();
        c.write("user", "flag", Value::Bool(false), false).unwrap();
        c.write("user", "nested", Value::from(vec![Value::from(vec![1.0]), Value::str("é\t\"q\"")]), false)
            .unwrap();
        let _ = c.write("hpc", "plan", Value::str("no"), true);
        c
    }

    #[test]
    fn empty_round_trip() {
        let c = Canvas::with_clock(frozen_clock);
        let back = Canvas::from_snapshot_str(&c.to_snapshot_string()).unwrap();
        assert!(back.inspect().is_empty());
        assert!(back.log().is_empty());
    }

    #[test]
    fn mixed_round_trip_is_identical() {
        let c = sample();
        assert_eq!(c.log().len(), 10);
        let text = c.to_snapshot_string();
        let back = Canvas::from_snapshot_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.inspect(), c.inspect());
        assert_eq!(back.to_snapshot_string(), text);
    }

    #[test]
    fn truncation_is_detected_at_every_byte() {
        let text = sample().to_snapshot_string();
        for k in 0..text.len() {
            if !text.is_char_boundary(k) {
                continue;
            }
            match Canvas::from_snapshot_str(&text[..k]) {
                Err(SnapshotError::Corrupt { line, .. }) => assert!(line >= 1),
                other => panic!("truncation at {k} not detected: {other:?}"),
            }
        }
    }

    #[test]
    fn corrupt_record_reports_line() {
        let text = sample().to_snapshot_string();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[3] = "entry {not json";
        let broken = lines.join("\n") + "\n";
        match Canvas::from_snapshot_str(&broken) {
            Err(SnapshotError::Corrupt { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("canvas.snap");
        let c = sample();
        c.snapshot(&path).unwrap();
        assert_eq!(Canvas::restore(&path).unwrap(), c);
        assert!(matches!(
            Canvas::restore(dir.path().join("missing.snap")),
            Err(SnapshotError::Io(_))
        ));
    }
}
