//! Shared, audited key-value dashboard.
//!
//! Every agent, tool and the operator see the same canvas. Values are stored in
//! their native [`Value`] form (no text round trip), keys can carry access
//! constraints, and every mutation attempt, successful or not, is appended to
//! an audit log with a gap-free sequence number.
//!
//! All mutations go through `&mut Canvas`, so a single owner serializes them;
//! readers may share `&Canvas` between mutations.

mod mode;
mod snapshot;
mod value;

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

pub use mode::{AccessMode, Schema};
pub use snapshot::SnapshotError;
pub use value::Value;

/// Maximum length, in characters, of a change-record summary.
pub const SUMMARY_LIMIT: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CanvasError {
    #[error("key {0:?} not found on the canvas; run inspect to list the available keys, then read again")]
    KeyNotFound(String),
    #[error("key {0:?} already exists; pass overwrite=true only if you are certain it should be replaced")]
    AlreadyExists(String),
    #[error("key {key:?} is {mode}: {detail}")]
    ConstraintViolation {
        key: String,
        mode: AccessMode,
        detail: String,
    },
    #[error("canvas keys must be non-empty")]
    EmptyKey,
    #[error("value for key {0:?} contains a non-finite number")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanvasEntry {
    pub key: String,
    pub value: Value,
    pub mode: AccessMode,
    /// Actor that created the entry; the only one allowed to overwrite a protected key.
    pub creator: String,
    pub created_seq: u64,
    pub updated_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeOp {
    Write,
    Overwrite,
    Rejected,
}

impl ChangeOp {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChangeOp::Write => "write",
            ChangeOp::Overwrite => "overwrite",
            ChangeOp::Rejected => "rejected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "write" => Some(ChangeOp::Write),
            "overwrite" => Some(ChangeOp::Overwrite),
            "rejected" => Some(ChangeOp::Rejected),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeRecord {
    pub seq: u64,
    /// Milliseconds since the Unix epoch, from the canvas clock.
    pub timestamp_ms: u64,
    pub actor: String,
    pub op: ChangeOp,
    pub key: String,
    pub summary: String,
}

/// Acknowledgment returned by successful writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteAck {
    pub key: String,
    pub seq: u64,
    pub op: ChangeOp,
}

pub type Clock = fn() -> u64;

fn system_clock() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Clock that always reads zero; gives byte-identical snapshots across runs.
pub fn frozen_clock() -> u64 {
    0
}

#[derive(Debug, Clone)]
pub struct Canvas {
    entries: BTreeMap<String, CanvasEntry>,
    log: Vec<ChangeRecord>,
    clock: Clock,
}

impl Default for Canvas {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for Canvas {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.log == other.log
    }
}

fn truncate_chars(s: &str, limit: usize) -> String {
    match s.char_indices().nth(limit) {
        Some((idx, _)) => s[..idx].to_string(),
        None => s.to_string(),
    }
}

impl Canvas {
    pub fn new() -> Self {
        Self::with_clock(system_clock)
    }

    pub fn with_clock(clock: Clock) -> Self {
        Self {
            entries: BTreeMap::new(),
            log: Vec::new(),
            clock,
        }
    }

    pub fn set_clock(&mut self, clock: Clock) {
        self.clock = clock;
    }

    /// All keys in lexicographic order.
    pub fn inspect(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn read(&self, key: &str) -> Result<&Value, CanvasError> {
        self.entries
            .get(key)
            .map(|e| &e.value)
            .ok_or_else(|| CanvasError::KeyNotFound(key.to_string()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn entry(&self, key: &str) -> Option<&CanvasEntry> {
        self.entries.get(key)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CanvasEntry> {
        self.entries.values()
    }

    pub fn log(&self) -> &[ChangeRecord] {
        &self.log
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn next_seq(&self) -> u64 {
        self.log.len() as u64 + 1
    }

    fn append(&mut self, actor: &str, op: ChangeOp, key: &str, summary: String) -> u64 {
        let seq = self.next_seq();
        self.log.push(ChangeRecord {
            seq,
            timestamp_ms: (self.clock)(),
            actor: actor.to_string(),
            op,
            key: key.to_string(),
            summary: truncate_chars(&summary, SUMMARY_LIMIT),
        });
        seq
    }

    fn reject(&mut self, actor: &str, key: &str, err: CanvasError) -> CanvasError {
        self.append(actor, ChangeOp::Rejected, key, err.to_string());
        err
    }

    /// Write a normal entry. Existing keys are only replaced when `overwrite`
    /// is set and the entry's mode allows `actor` to do so.
    pub fn write(
        &mut self,
        actor: &str,
        key: &str,
        value: Value,
        overwrite: bool,
    ) -> Result<WriteAck, CanvasError> {
        if key.is_empty() {
            return Err(self.reject(actor, key, CanvasError::EmptyKey));
        }
        if !value.is_finite() {
            return Err(self.reject(actor, key, CanvasError::NonFinite(key.to_string())));
        }
        match self.entries.get(key) {
            None => Ok(self.insert(actor, key, value, AccessMode::Normal)),
            Some(_) if !overwrite => {
                Err(self.reject(actor, key, CanvasError::AlreadyExists(key.to_string())))
            }
            Some(existing) => {
                if let Err(detail) = check_mode(existing, actor, &value) {
                    let err = CanvasError::ConstraintViolation {
                        key: key.to_string(),
                        mode: existing.mode,
                        detail,
                    };
                    return Err(self.reject(actor, key, err));
                }
                let summary = value.to_string();
                let seq = self.append(actor, ChangeOp::Overwrite, key, summary);
                let entry = self.entries.get_mut(key).expect("checked above");
                entry.value = value;
                entry.updated_seq = seq;
                Ok(WriteAck {
                    key: key.to_string(),
                    seq,
                    op: ChangeOp::Overwrite,
                })
            }
        }
    }

    /// Create a new entry with an explicit access mode.
    pub fn create(
        &mut self,
        actor: &str,
        key: &str,
        value: Value,
        mode: AccessMode,
    ) -> Result<WriteAck, CanvasError> {
        if key.is_empty() {
            return Err(self.reject(actor, key, CanvasError::EmptyKey));
        }
        if !value.is_finite() {
            return Err(self.reject(actor, key, CanvasError::NonFinite(key.to_string())));
        }
        if self.entries.contains_key(key) {
            return Err(self.reject(actor, key, CanvasError::AlreadyExists(key.to_string())));
        }
        if let AccessMode::FormatRestricted(schema) = mode {
            if let Err(detail) = schema.validate(&value) {
                let err = CanvasError::ConstraintViolation {
                    key: key.to_string(),
                    mode,
                    detail,
                };
                return Err(self.reject(actor, key, err));
            }
        }
        Ok(self.insert(actor, key, value, mode))
    }

    /// Create the key with `mode` if absent, otherwise overwrite it.
    pub fn upsert(
        &mut self,
        actor: &str,
        key: &str,
        value: Value,
        mode: AccessMode,
    ) -> Result<WriteAck, CanvasError> {
        if self.contains(key) {
            self.write(actor, key, value, true)
        } else {
            self.create(actor, key, value, mode)
        }
    }

    fn insert(&mut self, actor: &str, key: &str, value: Value, mode: AccessMode) -> WriteAck {
        let seq = self.append(actor, ChangeOp::Write, key, value.to_string());
        self.entries.insert(
            key.to_string(),
            CanvasEntry {
                key: key.to_string(),
                value,
                mode,
                creator: actor.to_string(),
                created_seq: seq,
                updated_seq: seq,
            },
        );
        WriteAck {
            key: key.to_string(),
            seq,
            op: ChangeOp::Write,
        }
    }
}

fn check_mode(entry: &CanvasEntry, actor: &str, value: &Value) -> Result<(), String> {
    match entry.mode {
        AccessMode::Normal => Ok(()),
        AccessMode::ReadOnly => Err("read-only entries never change after creation".to_string()),
        AccessMode::Protected if entry.creator == actor => Ok(()),
        AccessMode::Protected => Err(format!(
            "only its creator {:?} may overwrite it, not {actor:?}",
            entry.creator
        )),
        AccessMode::FormatRestricted(schema) => schema
            .validate(value)
            .map_err(|e| format!("value does not match schema {}: {e}", schema.id())),
    }
}
