use crate::types::Strategy;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Interaction kinds every registry starts with.
pub const SEEDED_ACTION_KINDS: [&str; 13] = [
    "label_example",
    "load_more_examples",
    "create_rule",
    "edit_rule",
    "ask_synonyms",
    "toggle_variants",
    "create_prompt",
    "edit_prompt",
    "improve_prompt",
    "add_fewshot_example",
    "apply_classifier",
    "review_example",
    "filter_view",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub timestamp_ms: u64,
    pub session_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    pub kind: String,
    #[serde(default)]
    pub payload: Value,
    /// Backend wait that ended at `timestamp_ms`; excluded from active time.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub wait_ms: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

/// Append-only set of accepted event kinds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionRegistry {
    kinds: BTreeSet<String>,
}

impl Default for ActionRegistry {
    fn default() -> Self {
        Self::seeded()
    }
}

impl ActionRegistry {
    pub fn seeded() -> Self {
        ActionRegistry {
            kinds: SEEDED_ACTION_KINDS.iter().map(|k| k.to_string()).collect(),
        }
    }

    /// Returns false if the kind was already present.
    pub fn register(&mut self, kind: impl Into<String>) -> bool {
        self.kinds.insert(kind.into())
    }

    pub fn contains(&self, kind: &str) -> bool {
        self.kinds.contains(kind)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.kinds.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("unregistered action kind `{0}`")]
    UnknownKind(String),
    #[error("event at {timestamp_ms} ms precedes the previous event at {last_ms} ms")]
    OutOfOrder { timestamp_ms: u64, last_ms: u64 },
    #[error("malformed event on line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads a JSON-Lines event log. An unterminated final line is a write
/// that was never acknowledged and is skipped.
pub fn read_events(path: &Path) -> Result<Vec<ActionEvent>, LogError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LogError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Durable append-only event log for one session.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    registry: ActionRegistry,
    last_ms: Option<u64>,
    len: usize,
}

impl EventLog {
    pub fn open(path: &Path, registry: ActionRegistry) -> Result<Self, LogError> {
        let existing = read_events(path)?;
        if path.exists() {
            // drop a torn tail so new lines start cleanly
            let text = fs::read(path)?;
            let keep = text.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
            if keep != text.len() {
                OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(EventLog {
            path: path.to_owned(),
            file,
            registry,
            last_ms: existing.last().map(|e| e.timestamp_ms),
            len: existing.len(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn registry(&self) -> &ActionRegistry {
        &self.registry
    }

    /// Checks an event without writing it.
    pub fn check(&self, event: &ActionEvent) -> Result<(), LogError> {
        if !self.registry.contains(&event.kind) {
            return Err(LogError::UnknownKind(event.kind.clone()));
        }
        match self.last_ms {
            Some(last_ms) if event.timestamp_ms < last_ms => Err(LogError::OutOfOrder {
                timestamp_ms: event.timestamp_ms,
                last_ms,
            }),
            _ => Ok(()),
        }
    }

    /// Writes the event and syncs it to disk before returning.
    pub fn append(&mut self, event: &ActionEvent) -> Result<(), LogError> {
        self.check(event)?;
        let mut line = serde_json::to_vec(event).map_err(io::Error::from)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.last_ms = Some(event.timestamp_ms);
        self.len += 1;
        Ok(())
    }
}
