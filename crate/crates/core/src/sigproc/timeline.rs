//! Event markers shared by the session runner and the preprocessing chain.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TrialPrep,
    MusicOn,
    MusicOff,
    RatingOpen,
    Rest,
    BlockStart,
    ArtifactStart,
    ArtifactEnd,
    Arithmetic,
    SessionStart,
    SessionEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t_ms: f64,
    pub kind: EventKind,
    #[serde(default)]
    pub trial_id: Option<u32>,
}

impl Event {
    pub fn new(t_ms: f64, kind: EventKind, trial_id: Option<u32>) -> Self {
        Self {
            t_ms,
            kind,
            trial_id,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TimelineError {
    #[error("events out of order at index {index} ({prev_ms} ms then {t_ms} ms)")]
    Unsorted {
        index: usize,
        prev_ms: f64,
        t_ms: f64,
    },
    #[error("artifact marker at {t_ms} ms has no partner")]
    UnpairedArtifact { t_ms: f64 },
    #[error("non-finite timestamp at index {0}")]
    NonFinite(usize),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Time-ordered event list. Construction validates ordering.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventTimeline {
    events: Vec<Event>,
}

impl EventTimeline {
    pub fn new(events: Vec<Event>) -> Result<Self, TimelineError> {
        for (i, e) in events.iter().enumerate() {
            if !e.t_ms.is_finite() {
                return Err(TimelineError::NonFinite(i));
            }
            if i > 0 && e.t_ms < events[i - 1].t_ms {
                return Err(TimelineError::Unsorted {
                    index: i,
                    prev_ms: events[i - 1].t_ms,
                    t_ms: e.t_ms,
                });
            }
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// Appends an event; it must not precede the current last event.
    pub fn push(&mut self, event: Event) -> Result<(), TimelineError> {
        if !event.t_ms.is_finite() {
            return Err(TimelineError::NonFinite(self.events.len()));
        }
        if let Some(last) = self.events.last() {
            if event.t_ms < last.t_ms {
                return Err(TimelineError::Unsorted {
                    index: self.events.len(),
                    prev_ms: last.t_ms,
                    t_ms: event.t_ms,
                });
            }
        }
        self.events.push(event);
        Ok(())
    }

    /// First occurrence of `kind` for each trial id.
    pub fn trial_times(&self, kind: EventKind) -> BTreeMap<u32, f64> {
        let mut out = BTreeMap::new();
        for e in &self.events {
            if e.kind == kind {
                if let Some(id) = e.trial_id {
                    out.entry(id).or_insert(e.t_ms);
                }
            }
        }
        out
    }

    /// Artifact spans as `[start, end)` in ms. Markers nest; the union of the
    /// outermost pairs is returned.
    pub fn artifact_intervals(&self) -> Result<Vec<(f64, f64)>, TimelineError> {
        let mut depth = 0usize;
        let mut open = 0.0;
        let mut spans = Vec::new();
        for e in &self.events {
            match e.kind {
                EventKind::ArtifactStart => {
                    if depth == 0 {
                        open = e.t_ms;
                    }
                    depth += 1;
                }
                EventKind::ArtifactEnd => {
                    if depth == 0 {
                        return Err(TimelineError::UnpairedArtifact { t_ms: e.t_ms });
                    }
                    depth -= 1;
                    if depth == 0 {
                        spans.push((open, e.t_ms));
                    }
                }
                _ => {}
            }
        }
        if depth > 0 {
            return Err(TimelineError::UnpairedArtifact { t_ms: open });
        }
        Ok(spans)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), TimelineError> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, TimelineError> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Event = serde_json::from_str(&line).map_err(|source| TimelineError::Parse {
                line: i + 1,
                source,
            })?;
            events.push(e);
        }
        Self::new(events)
    }
}
