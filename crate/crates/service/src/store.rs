//! Append-only files in the data directory.
//!
//! `sessions.jsonl` holds one line per created session and `events.jsonl` the
//! engine event log. Lines are flushed to disk before a request is answered.
//! A line cut short by a crash was never acknowledged and is dropped on open.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use echo_core::engine::EngineParams;
use echo_core::events::{EventLog, SessionEvent};
use echo_core::recommend::Catalog;
use echo_core::types::FeatureRegistry;
use echo_sim::run::{CATALOG_FILE, ENGINE_FILE, EVENTS_FILE, REGISTRY_FILE};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

pub const SESSIONS_FILE: &str = "sessions.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecord {
    pub session_id: String,
    pub user_id: String,
    pub created_ms: u64,
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    sessions: File,
    events: File,
}

/// Everything read back from a data directory.
#[derive(Debug, Default)]
pub struct Recovered {
    pub sessions: Vec<SessionRecord>,
    pub log: EventLog,
}

fn storage(path: &Path, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Storage(format!("{}: {e}", path.display()))
}

/// Opens `path` for appending and returns its complete lines, dropping a
/// trailing partial line.
fn open_lines(path: &Path) -> Result<(File, Vec<String>)> {
    let mut f = OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(path)
        .map_err(|e| storage(path, e))?;
    let mut text = String::new();
    f.read_to_string(&mut text).map_err(|e| storage(path, e))?;
    let keep = text.rfind('\n').map_or(0, |i| i + 1);
    if keep < text.len() {
        f.set_len(keep as u64).map_err(|e| storage(path, e))?;
        f.seek(SeekFrom::End(0)).map_err(|e| storage(path, e))?;
        text.truncate(keep);
    }
    Ok((f, text.lines().map(str::to_string).collect()))
}

impl Store {
    pub fn open(dir: &Path) -> Result<(Store, Recovered)> {
        std::fs::create_dir_all(dir).map_err(|e| storage(dir, e))?;
        let sessions_path = dir.join(SESSIONS_FILE);
        let events_path = dir.join(EVENTS_FILE);
        let (sessions, session_lines) = open_lines(&sessions_path)?;
        let (events, event_lines) = open_lines(&events_path)?;
        let mut rec = Recovered::default();
        for (i, line) in session_lines.iter().enumerate() {
            let s: SessionRecord =
                serde_json::from_str(line).map_err(|e| storage(&sessions_path, format!("line {}: {e}", i + 1)))?;
            rec.sessions.push(s);
        }
        for (i, line) in event_lines.iter().enumerate() {
            let e = SessionEvent::from_json_line(line)
                .map_err(|e| storage(&events_path, format!("line {}: {e}", i + 1)))?;
            rec.log
                .append(e)
                .map_err(|e| storage(&events_path, format!("line {}: {e}", i + 1)))?;
        }
        Ok((
            Store {
                dir: dir.to_path_buf(),
                sessions,
                events,
            },
            rec,
        ))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append_session(&mut self, s: &SessionRecord) -> Result<()> {
        let mut line = serde_json::to_string(s).expect("session record serializes");
        line.push('\n');
        self.sessions.write_all(line.as_bytes())?;
        self.sessions.sync_data()?;
        Ok(())
    }

    pub fn append_events<'a>(&mut self, events: impl IntoIterator<Item = &'a SessionEvent>) -> Result<()> {
        let mut buf = String::new();
        for e in events {
            buf.push_str(&e.to_json_line());
            buf.push('\n');
        }
        if buf.is_empty() {
            return Ok(());
        }
        self.events.write_all(buf.as_bytes())?;
        self.events.sync_data()?;
        Ok(())
    }

    /// Writes the registry, catalog and engine parameters next to the log so
    /// that `echo replay` can rebuild the run from the directory alone.
    pub fn write_replay_inputs(&self, registry: &FeatureRegistry, catalog: &Catalog<f64>, params: &EngineParams) -> Result<()> {
        std::fs::write(self.dir.join(REGISTRY_FILE), registry.to_jsonl())?;
        std::fs::write(self.dir.join(CATALOG_FILE), catalog.to_jsonl())?;
        std::fs::write(
            self.dir.join(ENGINE_FILE),
            toml::to_string(params).expect("engine params serialize"),
        )?;
        Ok(())
    }
}
