//! HTTP session API for the listening paradigm.
//!
//! Each session owns one state machine. Commands that change it are
//! serialized through that session's lock and journaled when a data
//! directory is configured. Sample ingestion uses a separate lock, so
//! devices can stream while the paradigm advances. State polling reads a
//! published snapshot and never blocks on either lock.

mod error;
mod routes;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use musemo::quadrant::EmotionQuadrant;
use musemo::session::{
    replay, Command, Journal, ParadigmConfig, SampleStore, SessionMachine, SessionPlan, StateView,
};

pub use error::ApiError;
pub use routes::{router, CreateSession, Created, Exported};

/// Milliseconds on the timebase shared with device sample timestamps.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> f64;
}

/// Wall clock in Unix milliseconds.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> f64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0.0, |d| d.as_millis() as f64)
    }
}

/// Clock moved by hand, for tests and scripted runs.
#[derive(Debug, Default)]
pub struct ManualClock(Mutex<f64>);

impl ManualClock {
    pub fn new(start_ms: f64) -> Self {
        Self(Mutex::new(start_ms))
    }

    pub fn set(&self, t_ms: f64) {
        *self.0.lock().unwrap() = t_ms;
    }

    pub fn advance(&self, dt_ms: f64) {
        *self.0.lock().unwrap() += dt_ms;
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> f64 {
        *self.0.lock().unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Selected clip ids per quadrant that plans draw from.
    pub library: BTreeMap<EmotionQuadrant, Vec<String>>,
    /// Directory holding `<clip_id>.wav`.
    pub clip_dir: Option<PathBuf>,
    /// Journals and raw recordings, one subdirectory per session. Sessions
    /// found here are restored on startup.
    pub data_dir: Option<PathBuf>,
    /// Root that exported bundles are written under.
    pub export_dir: PathBuf,
    pub paradigm: ParadigmConfig,
    pub seed: u64,
}

pub(crate) struct Commands {
    pub machine: SessionMachine,
    pub journal: Option<Journal>,
}

pub(crate) struct Entry {
    pub commands: Mutex<Commands>,
    pub samples: Mutex<SampleStore>,
    snapshot: RwLock<Arc<SessionMachine>>,
}

impl Entry {
    fn new(machine: SessionMachine, journal: Option<Journal>, samples: SampleStore) -> Self {
        let snapshot = RwLock::new(Arc::new(machine.clone()));
        Self {
            commands: Mutex::new(Commands { machine, journal }),
            samples: Mutex::new(samples),
            snapshot,
        }
    }

    fn publish(&self, machine: &SessionMachine) {
        *self.snapshot.write().unwrap() = Arc::new(machine.clone());
    }

    /// Applies `command` at the current time. Accepted commands are
    /// journaled; rejected ones are not, since replaying them would be
    /// rejected again anyway.
    pub fn apply(&self, clock: &dyn Clock, command: Command) -> Result<StateView, ApiError> {
        let mut c = self.commands.lock().unwrap();
        self.apply_locked(&mut c, clock, command)
    }

    pub fn apply_locked(
        &self,
        c: &mut Commands,
        clock: &dyn Clock,
        command: Command,
    ) -> Result<StateView, ApiError> {
        // A wall clock stepping backwards must not look like a regression.
        let now = c
            .machine
            .now_ms()
            .map_or(clock.now_ms(), |last| clock.now_ms().max(last));
        let res = c.machine.advance(now, command.clone());
        self.publish(&c.machine);
        res?;
        if let Some(j) = c.journal.as_mut() {
            j.append(now, &command)?;
        }
        Ok(c.machine.view())
    }

    /// Current state without taking the command lock.
    pub fn view(&self, clock: &dyn Clock) -> StateView {
        let snap = self.snapshot.read().unwrap().clone();
        let mut m = (*snap).clone();
        let now = m
            .now_ms()
            .map_or(clock.now_ms(), |last| clock.now_ms().max(last));
        let _ = m.tick(now);
        m.view()
    }
}

pub(crate) struct Inner {
    pub config: ServerConfig,
    pub clock: Arc<dyn Clock>,
    pub sessions: RwLock<HashMap<String, Arc<Entry>>>,
}

/// Shared application state handed to the router.
#[derive(Clone)]
pub struct AppState(pub(crate) Arc<Inner>);

impl AppState {
    pub fn new(config: ServerConfig, clock: Arc<dyn Clock>) -> Self {
        Self(Arc::new(Inner {
            config,
            clock,
            sessions: RwLock::new(HashMap::new()),
        }))
    }

    /// Builds the state and restores every journaled session under the
    /// data directory.
    pub fn restore(config: ServerConfig, clock: Arc<dyn Clock>) -> Result<Self, ApiError> {
        let state = Self::new(config, clock);
        let Some(dir) = state.0.config.data_dir.clone() else {
            return Ok(state);
        };
        if !dir.exists() {
            return Ok(state);
        }
        let mut found = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(ApiError::io)? {
            let path = entry.map_err(ApiError::io)?.path();
            if path.join(JOURNAL_FILE).is_file() {
                found.push(path);
            }
        }
        found.sort();
        let mut sessions = state.0.sessions.write().unwrap();
        for path in found {
            let id = path.file_name().unwrap().to_string_lossy().into_owned();
            let machine = replay(&path.join(JOURNAL_FILE))?;
            let journal = Journal::open_append(&path.join(JOURNAL_FILE))?;
            let samples = SampleStore::recover(&path)?;
            log::info!(
                "restored session {id} in phase {}",
                machine.phase().as_str()
            );
            sessions.insert(id, Arc::new(Entry::new(machine, Some(journal), samples)));
        }
        drop(sessions);
        Ok(state)
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.0.sessions.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub(crate) fn entry(&self, id: &str) -> Result<Arc<Entry>, ApiError> {
        self.0
            .sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("session {id}")))
    }

    pub(crate) fn insert(
        &self,
        id: &str,
        plan: SessionPlan,
        paradigm: ParadigmConfig,
    ) -> Result<(), ApiError> {
        let mut sessions = self.0.sessions.write().unwrap();
        if sessions.contains_key(id) {
            return Err(ApiError::Conflict(format!("session {id} already exists")));
        }
        let (journal, samples) = match &self.0.config.data_dir {
            Some(root) => {
                let dir = root.join(id);
                if dir.join(JOURNAL_FILE).exists() {
                    return Err(ApiError::Conflict(format!(
                        "session {id} already has a journal"
                    )));
                }
                let samples = SampleStore::with_sink(&dir).map_err(ApiError::io)?;
                (
                    Some(Journal::create(&dir.join(JOURNAL_FILE), &plan, &paradigm)?),
                    samples,
                )
            }
            None => (None, SampleStore::new()),
        };
        let machine = SessionMachine::new(plan, paradigm);
        sessions.insert(
            id.to_string(),
            Arc::new(Entry::new(machine, journal, samples)),
        );
        Ok(())
    }
}

const JOURNAL_FILE: &str = "journal.jsonl";

/// Ids double as directory names, so only a conservative character set is
/// allowed.
pub(crate) fn safe_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

pub(crate) fn clip_path(dir: &Path, clip_id: &str) -> Option<PathBuf> {
    safe_id(clip_id).then(|| dir.join(format!("{clip_id}.wav")))
}

/// Serves until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
