//! Append-only JSON-lines command journal. Replaying it through a fresh
//! machine restores the session after a restart.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::machine::{Command, ParadigmConfig, SessionMachine};
use super::plan::SessionPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum JournalLine {
    Header {
        plan: SessionPlan,
        config: ParadigmConfig,
    },
    Command {
        now_ms: f64,
        command: Command,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{0}: journal has no header")]
    NoHeader(PathBuf),
}

pub struct Journal {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Journal {
    /// Starts a new journal, replacing any file at `path`.
    pub fn create(
        path: &Path,
        plan: &SessionPlan,
        config: &ParadigmConfig,
    ) -> Result<Self, JournalError> {
        let io = |source| JournalError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io)?;
        let mut j = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        j.write(&JournalLine::Header {
            plan: plan.clone(),
            config: config.clone(),
        })?;
        Ok(j)
    }

    /// Reopens an existing journal for appending.
    pub fn open_append(path: &Path) -> Result<Self, JournalError> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|source| JournalError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write(&mut self, line: &JournalLine) -> Result<(), JournalError> {
        let io = |source| JournalError::Io {
            path: self.path.clone(),
            source,
        };
        let mut s = serde_json::to_string(line).expect("journal lines serialize");
        s.push('\n');
        self.out.write_all(s.as_bytes()).map_err(io)?;
        self.out.flush().map_err(io)
    }

    pub fn append(&mut self, now_ms: f64, command: &Command) -> Result<(), JournalError> {
        self.write(&JournalLine::Command {
            now_ms,
            command: command.clone(),
        })
    }
}

/// Rebuilds the machine by re-applying every journaled command. Commands
/// that were rejected originally are rejected again, so the outcome is the
/// same. A torn final line is dropped with a warning.
pub fn replay(path: &Path) -> Result<SessionMachine, JournalError> {
    let io = |source| JournalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let lines: Vec<String> = BufReader::new(File::open(path).map_err(io)?)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io)?;
    let mut machine: Option<SessionMachine> = None;
    for (i, text) in lines.iter().enumerate() {
        if text.trim().is_empty() {
            continue;
        }
        let line: JournalLine = match serde_json::from_str(text) {
            Ok(l) => l,
            Err(e) if i + 1 == lines.len() => {
                log::warn!(
                    "{}:{}: dropping torn final line ({e})",
                    path.display(),
                    i + 1
                );
                break;
            }
            Err(e) => {
                return Err(JournalError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                })
            }
        };
        match (line, machine.as_mut()) {
            (JournalLine::Header { plan, config }, None) => {
                machine = Some(SessionMachine::new(plan, config))
            }
            (JournalLine::Command { now_ms, command }, Some(m)) => {
                let _ = m.advance(now_ms, command);
            }
            (JournalLine::Header { .. }, Some(_)) => {
                return Err(JournalError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "second header".into(),
                })
            }
            (JournalLine::Command { .. }, None) => {
                return Err(JournalError::NoHeader(path.to_path_buf()))
            }
        }
    }
    machine.ok_or_else(|| JournalError::NoHeader(path.to_path_buf()))
}
