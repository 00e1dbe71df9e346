//! Append-only JSON-lines event log.
//!
//! Every state change is one line. A line is written and synced to disk
//! before the change is applied in memory or acknowledged, so replaying the
//! file reproduces every acknowledged judgment. A crash mid-write can leave
//! a final line without its newline; replay drops it and truncates the file
//! back to the last complete event.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{Result, StudyError};
use crate::protocol::{Source, Trial, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    StudyCreated {
        id: Uuid,
        name: String,
        sources: Vec<Source>,
        trials_per_session: usize,
        created_at: u64,
    },
    SessionOpened {
        id: Uuid,
        study: Uuid,
        alias: String,
        seed: u64,
        trials: Vec<Trial>,
    },
    Judged {
        session: Uuid,
        trial: Uuid,
        verdict: Verdict,
    },
}

pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    /// Opens or creates the log and returns it with every complete event.
    pub fn open(path: &Path) -> Result<(Self, Vec<Event>)> {
        let mut events = Vec::new();
        let mut good_len = 0u64;
        if path.exists() {
            let file = File::open(path).map_err(|e| StudyError::io(path, e))?;
            let mut reader = BufReader::new(file);
            let mut line = String::new();
            let mut n = 0;
            loop {
                line.clear();
                let read = reader.read_line(&mut line).map_err(|e| StudyError::io(path, e))?;
                if read == 0 {
                    break;
                }
                n += 1;
                if !line.ends_with('\n') {
                    log::warn!("{}: dropping incomplete final event ({read} bytes)", path.display());
                    break;
                }
                let event = serde_json::from_str(line.trim_end()).map_err(|e| StudyError::Log {
                    path: path.to_path_buf(),
                    line: n,
                    message: e.to_string(),
                })?;
                events.push(event);
                good_len += read as u64;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| StudyError::io(path, e))?;
        if file.metadata().map_err(|e| StudyError::io(path, e))?.len() != good_len {
            file.set_len(good_len).map_err(|e| StudyError::io(path, e))?;
            file.sync_all().map_err(|e| StudyError::io(path, e))?;
        }
        Ok((Self { path: path.to_path_buf(), file }, events))
    }

    /// Writes one event and waits for it to reach the disk.
    pub fn append(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| StudyError::io(&self.path, e))?;
        self.file.sync_data().map_err(|e| StudyError::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
