//! Append-only JSONL event log; replaying it rebuilds every session.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use penmentor::session::Method;
use serde::{Deserialize, Serialize};

use crate::wire::Sample;

pub const EVENT_SCHEMA: &str = "penmentor-events/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        session_id: String,
        character_id: String,
        method: Method,
        seed: u64,
        overrides: Option<serde_json::Value>,
    },
    /// Pre-test or evaluation writing.
    Writing { session_id: String, strokes: Vec<Vec<Sample>> },
    Guided {
        session_id: String,
        iteration: usize,
        strokes: Vec<Vec<Sample>>,
    },
}

impl Event {
    pub fn session_id(&self) -> &str {
        match self {
            Event::Created { session_id, .. } | Event::Writing { session_id, .. } | Event::Guided { session_id, .. } => {
                session_id
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    schema: String,
    seq: u64,
    #[serde(flatten)]
    event: Event,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("event log {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("event log {path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

pub struct EventLog {
    path: PathBuf,
    inner: Mutex<(BufWriter<File>, u64)>,
}

impl EventLog {
    /// Opens (or creates) the log and returns the events already in it.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<Event>), StoreError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let mut events = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: Line = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                if parsed.schema != EVENT_SCHEMA {
                    return Err(StoreError::Corrupt {
                        path: path.clone(),
                        line: i + 1,
                        message: format!("unsupported schema {:?}", parsed.schema),
                    });
                }
                events.push(parsed.event);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        let seq = events.len() as u64;
        Ok((
            Self {
                path,
                inner: Mutex::new((BufWriter::new(file), seq)),
            },
            events,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one event and flushes it to the operating system.
    pub fn append(&self, event: &Event) -> Result<(), StoreError> {
        let mut guard = self.inner.lock().expect("event log lock");
        let (writer, seq) = &mut *guard;
        let line = Line {
            schema: EVENT_SCHEMA.into(),
            seq: *seq,
            event: event.clone(),
        };
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        serde_json::to_writer(&mut *writer, &line).map_err(|e| io(e.into()))?;
        writer.write_all(b"\n").map_err(io)?;
        writer.flush().map_err(io)?;
        *seq += 1;
        Ok(())
    }

    /// Flushes and syncs the file to disk.
    pub fn sync(&self) -> Result<(), StoreError> {
        let mut guard = self.inner.lock().expect("event log lock");
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        guard.0.flush().map_err(io)?;
        guard.0.get_ref().sync_all().map_err(io)
    }
}
