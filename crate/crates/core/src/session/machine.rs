//! Clock-driven paradigm state machine. The clock is supplied by the caller
//! on every call, so tests and simulations run without waiting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plan::{
    trial_id, SessionPlan, BLOCKS_PER_SESSION, SESSIONS, TOTAL_TRIALS, TRIALS_PER_BLOCK,
};
use crate::analysis::{derive_label, RatingRangeError, RatingTriple, TrialRecord};
use crate::quadrant::EmotionQuadrant;
use crate::sigproc::{Event, EventKind, EventTimeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Preparation,
    Playback,
    Rating,
    Rest,
    Arithmetic,
    Finished,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Preparation => "preparation",
            Phase::Playback => "playback",
            Phase::Rating => "rating",
            Phase::Rest => "rest",
            Phase::Arithmetic => "arithmetic",
            Phase::Finished => "finished",
        }
    }
}

/// Whether the machine may move directly from `from` to `to`.
pub fn is_legal(from: Phase, to: Phase) -> bool {
    use Phase::*;
    matches!(
        (from, to),
        (Idle, Preparation)
            | (Preparation, Playback)
            | (Playback, Rating)
            | (Rating, Rest)
            | (Rest, Preparation)
            | (Rest, Arithmetic)
            | (Arithmetic, Preparation)
            | (Arithmetic, Idle)
            | (Arithmetic, Finished)
    ) || (to == Finished && from != Finished)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParadigmConfig {
    pub preparation_ms: f64,
    pub music_ms: f64,
    pub rest_ms: f64,
    /// `None` waits for a rating indefinitely.
    pub rating_timeout_ms: Option<f64>,
    pub arithmetic_problems: usize,
}

impl Default for ParadigmConfig {
    fn default() -> Self {
        Self {
            preparation_ms: 5_000.0,
            music_ms: 60_000.0,
            rest_ms: 15_000.0,
            rating_timeout_ms: Some(30_000.0),
            arithmetic_problems: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    Start,
    Rating {
        trial_id: u32,
        valence: i64,
        arousal: i64,
        liking: i64,
    },
    Arithmetic {
        block_id: u32,
        answers: Vec<i64>,
    },
    /// Ends the study early; later sessions are not run.
    Close,
    /// Lets time pass without input.
    Tick,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("clock went backwards: {now_ms} ms after {last_ms} ms")]
    ClockRegression { now_ms: f64, last_ms: f64 },
    #[error("clock value {0} is not finite")]
    BadClock(f64),
    #[error("rating for trial {trial_id} is outside its rating window (phase {phase})")]
    OutOfWindow { trial_id: u32, phase: &'static str },
    #[error("trial {0} already has a rating")]
    DuplicateRating(u32),
    #[error(transparent)]
    Validation(#[from] RatingRangeError),
    #[error("unknown trial {0}")]
    UnknownTrial(u32),
    #[error("arithmetic answers for block {block_id} not expected (phase {phase})")]
    ArithmeticOutOfWindow { block_id: u32, phase: &'static str },
    #[error("cannot start from phase {0}")]
    NotStartable(&'static str),
    #[error("timeline: {0}")]
    Timeline(String),
}

impl SessionError {
    /// Client errors that leave the machine untouched, as opposed to
    /// consistency failures.
    pub fn is_rejection(&self) -> bool {
        !matches!(
            self,
            SessionError::ClockRegression { .. }
                | SessionError::BadClock(_)
                | SessionError::Timeline(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "-")]
    Sub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub a: i64,
    pub op: Op,
    pub b: i64,
}

impl Problem {
    pub fn answer(&self) -> i64 {
        match self.op {
            Op::Add => self.a + self.b,
            Op::Sub => self.a - self.b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithmeticRecord {
    /// Global block index 0..8.
    pub block_id: u32,
    pub t_ms: f64,
    pub problems: Vec<Problem>,
    pub answers: Option<Vec<i64>>,
    pub correct: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseChange {
    pub from: Phase,
    pub to: Phase,
    pub t_ms: f64,
}

/// Snapshot for polling clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub participant_id: String,
    pub phase: Phase,
    pub now_ms: Option<f64>,
    /// 1-based session number of the current (or next) session.
    pub session: usize,
    pub block: usize,
    pub trial: usize,
    pub trial_id: Option<u32>,
    pub clip_id: Option<String>,
    pub quadrant: Option<EmotionQuadrant>,
    pub phase_started_ms: Option<f64>,
    pub deadline_ms: Option<f64>,
    pub remaining_ms: Option<f64>,
    pub collected_ratings: usize,
    pub total_trials: usize,
    pub arithmetic: Option<ArithmeticView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithmeticView {
    pub block_id: u32,
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionMachine {
    plan: SessionPlan,
    config: ParadigmConfig,
    phase: Phase,
    session: usize,
    block: usize,
    trial: usize,
    phase_started_ms: Option<f64>,
    deadline: Option<f64>,
    now_ms: Option<f64>,
    timeline: EventTimeline,
    records: Vec<TrialRecord>,
    arithmetic: Vec<ArithmeticRecord>,
    phase_log: Vec<PhaseChange>,
    timed_out: Vec<u32>,
    closed: bool,
    aborted_session: Option<usize>,
}

impl SessionMachine {
    pub fn new(plan: SessionPlan, config: ParadigmConfig) -> Self {
        let records = plan
            .slots()
            .map(|s| TrialRecord {
                participant_id: plan.participant_id.clone(),
                session: s.session as u8 + 1,
                block: (s.session * BLOCKS_PER_SESSION + s.block) as u8,
                trial_id: s.trial_id,
                clip_id: s.clip_id,
                music_quadrant: s.quadrant,
                t_prep: None,
                t_music_on: None,
                t_music_off: None,
                t_rating: None,
                t_rest: None,
                rating: None,
                derived_label: None,
            })
            .collect();
        Self {
            plan,
            config,
            phase: Phase::Idle,
            session: 0,
            block: 0,
            trial: 0,
            phase_started_ms: None,
            deadline: None,
            now_ms: None,
            timeline: EventTimeline::default(),
            records,
            arithmetic: Vec::new(),
            phase_log: Vec::new(),
            timed_out: Vec::new(),
            closed: false,
            aborted_session: None,
        }
    }

    pub fn plan(&self) -> &SessionPlan {
        &self.plan
    }

    pub fn config(&self) -> &ParadigmConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Clock value of the last accepted call.
    pub fn now_ms(&self) -> Option<f64> {
        self.now_ms
    }

    pub fn deadline(&self) -> Option<f64> {
        self.deadline
    }

    pub fn timeline(&self) -> &EventTimeline {
        &self.timeline
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn arithmetic(&self) -> &[ArithmeticRecord] {
        &self.arithmetic
    }

    pub fn phase_log(&self) -> &[PhaseChange] {
        &self.phase_log
    }

    pub fn timed_out(&self) -> &[u32] {
        &self.timed_out
    }

    pub fn closed(&self) -> bool {
        self.closed
    }

    /// 0-based session that a close cut short.
    pub fn aborted_session(&self) -> Option<usize> {
        self.aborted_session
    }

    pub fn collected_ratings(&self) -> usize {
        self.records.iter().filter(|r| r.rating.is_some()).count()
    }

    pub fn current_trial_id(&self) -> Option<u32> {
        matches!(
            self.phase,
            Phase::Preparation | Phase::Playback | Phase::Rating | Phase::Rest
        )
        .then(|| trial_id(self.session, self.block, self.trial))
    }

    fn global_block(&self) -> u32 {
        (self.session * BLOCKS_PER_SESSION + self.block) as u32
    }

    pub fn view(&self) -> StateView {
        let tid = self.current_trial_id();
        let slot = tid.and_then(|t| self.plan.slot(t));
        let arithmetic = (self.phase == Phase::Arithmetic).then(|| {
            let rec = self
                .arithmetic
                .last()
                .expect("arithmetic phase has a record");
            ArithmeticView {
                block_id: rec.block_id,
                problems: rec
                    .problems
                    .iter()
                    .map(|p| {
                        format!(
                            "{} {} {}",
                            p.a,
                            if p.op == Op::Add { "+" } else { "-" },
                            p.b
                        )
                    })
                    .collect(),
            }
        });
        StateView {
            participant_id: self.plan.participant_id.clone(),
            phase: self.phase,
            now_ms: self.now_ms,
            session: self.session.min(SESSIONS - 1) + 1,
            block: self.block,
            trial: self.trial,
            trial_id: tid,
            clip_id: slot.as_ref().map(|s| s.clip_id.clone()),
            quadrant: slot.map(|s| s.quadrant),
            phase_started_ms: self.phase_started_ms,
            deadline_ms: self.deadline,
            remaining_ms: self
                .deadline
                .zip(self.now_ms)
                .map(|(d, n)| (d - n).max(0.0)),
            collected_ratings: self.collected_ratings(),
            total_trials: TOTAL_TRIALS,
            arithmetic,
        }
    }

    /// Moves the clock to `now_ms`, firing every deadline on the way at its
    /// exact time, then applies `command`. Deadlines that elapse are
    /// processed even when the command is rejected.
    pub fn advance(&mut self, now_ms: f64, command: Command) -> Result<Vec<Event>, SessionError> {
        if !now_ms.is_finite() {
            return Err(SessionError::BadClock(now_ms));
        }
        if let Some(last_ms) = self.now_ms.filter(|&l| now_ms < l) {
            return Err(SessionError::ClockRegression { now_ms, last_ms });
        }
        let before = self.timeline.events().len();
        while let Some(d) = self.deadline {
            if d > now_ms {
                break;
            }
            self.on_deadline(d)?;
        }
        self.now_ms = Some(now_ms);
        self.apply(now_ms, command)?;
        Ok(self.timeline.events()[before..].to_vec())
    }

    /// Advances time only.
    pub fn tick(&mut self, now_ms: f64) -> Result<Vec<Event>, SessionError> {
        self.advance(now_ms, Command::Tick)
    }

    fn emit(&mut self, t: f64, kind: EventKind, trial: Option<u32>) -> Result<(), SessionError> {
        self.timeline
            .push(Event::new(t, kind, trial))
            .map_err(|e| SessionError::Timeline(e.to_string()))
    }

    fn set_phase(&mut self, to: Phase, t: f64, deadline: Option<f64>) {
        debug_assert!(is_legal(self.phase, to), "{:?} -> {:?}", self.phase, to);
        self.phase_log.push(PhaseChange {
            from: self.phase,
            to,
            t_ms: t,
        });
        self.phase = to;
        self.phase_started_ms = Some(t);
        self.deadline = deadline;
    }

    fn record(&mut self) -> &mut TrialRecord {
        let id = trial_id(self.session, self.block, self.trial) as usize;
        &mut self.records[id]
    }

    fn begin_trial(&mut self, t: f64) -> Result<(), SessionError> {
        let id = trial_id(self.session, self.block, self.trial);
        self.emit(t, EventKind::TrialPrep, Some(id))?;
        self.record().t_prep = Some(t);
        self.set_phase(Phase::Preparation, t, Some(t + self.config.preparation_ms));
        Ok(())
    }

    fn enter_rest(&mut self, t: f64) -> Result<(), SessionError> {
        let id = trial_id(self.session, self.block, self.trial);
        self.emit(t, EventKind::Rest, Some(id))?;
        self.record().t_rest = Some(t);
        self.set_phase(Phase::Rest, t, Some(t + self.config.rest_ms));
        Ok(())
    }

    fn problems(&self, block_id: u32) -> Vec<Problem> {
        let seed = self.plan.seed ^ (block_id as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.config.arithmetic_problems)
            .map(|_| {
                let (x, y) = (rng.random_range(1..=9), rng.random_range(1..=9));
                if rng.random() {
                    Problem {
                        a: x,
                        op: Op::Add,
                        b: y,
                    }
                } else {
                    Problem {
                        a: x.max(y),
                        op: Op::Sub,
                        b: x.min(y),
                    }
                }
            })
            .collect()
    }

    fn on_deadline(&mut self, t: f64) -> Result<(), SessionError> {
        let id = trial_id(self.session, self.block, self.trial);
        match self.phase {
            Phase::Preparation => {
                self.emit(t, EventKind::MusicOn, Some(id))?;
                self.record().t_music_on = Some(t);
                self.set_phase(Phase::Playback, t, Some(t + self.config.music_ms));
            }
            Phase::Playback => {
                self.emit(t, EventKind::MusicOff, Some(id))?;
                self.emit(t, EventKind::RatingOpen, Some(id))?;
                self.record().t_music_off = Some(t);
                let deadline = self.config.rating_timeout_ms.map(|d| t + d);
                self.set_phase(Phase::Rating, t, deadline);
            }
            Phase::Rating => {
                self.timed_out.push(id);
                self.enter_rest(t)?;
            }
            Phase::Rest => {
                if self.trial + 1 < TRIALS_PER_BLOCK {
                    self.trial += 1;
                    self.begin_trial(t)?;
                } else {
                    let block_id = self.global_block();
                    self.emit(t, EventKind::Arithmetic, None)?;
                    let problems = self.problems(block_id);
                    self.arithmetic.push(ArithmeticRecord {
                        block_id,
                        t_ms: t,
                        problems,
                        answers: None,
                        correct: 0,
                    });
                    self.set_phase(Phase::Arithmetic, t, None);
                }
            }
            Phase::Idle | Phase::Arithmetic | Phase::Finished => self.deadline = None,
        }
        Ok(())
    }

    fn apply(&mut self, now: f64, command: Command) -> Result<(), SessionError> {
        match command {
            Command::Tick => Ok(()),
            Command::Start => {
                if self.phase != Phase::Idle {
                    return Err(SessionError::NotStartable(self.phase.as_str()));
                }
                self.emit(now, EventKind::SessionStart, None)?;
                self.emit(now, EventKind::BlockStart, None)?;
                self.begin_trial(now)
            }
            Command::Rating {
                trial_id: tid,
                valence,
                arousal,
                liking,
            } => {
                let rating = RatingTriple::new(valence, arousal, liking)?;
                let idx = tid as usize;
                if idx >= self.records.len() {
                    return Err(SessionError::UnknownTrial(tid));
                }
                if self.records[idx].rating.is_some() {
                    return Err(SessionError::DuplicateRating(tid));
                }
                if self.phase != Phase::Rating || self.current_trial_id() != Some(tid) {
                    return Err(SessionError::OutOfWindow {
                        trial_id: tid,
                        phase: self.phase.as_str(),
                    });
                }
                let rec = &mut self.records[idx];
                rec.rating = Some(rating);
                rec.derived_label = Some(derive_label(rating, rec.music_quadrant));
                rec.t_rating = Some(now);
                self.enter_rest(now)
            }
            Command::Arithmetic { block_id, answers } => {
                if self.phase != Phase::Arithmetic || block_id != self.global_block() {
                    return Err(SessionError::ArithmeticOutOfWindow {
                        block_id,
                        phase: self.phase.as_str(),
                    });
                }
                let rec = self.arithmetic.last_mut().expect("arithmetic record");
                rec.correct = rec
                    .problems
                    .iter()
                    .zip(&answers)
                    .filter(|(p, a)| p.answer() == **a)
                    .count();
                rec.answers = Some(answers);
                if self.block + 1 < BLOCKS_PER_SESSION {
                    self.block += 1;
                    self.trial = 0;
                    self.emit(now, EventKind::BlockStart, None)?;
                    self.begin_trial(now)
                } else {
                    self.emit(now, EventKind::SessionEnd, None)?;
                    if self.session + 1 < SESSIONS {
                        self.session += 1;
                        self.block = 0;
                        self.trial = 0;
                        self.set_phase(Phase::Idle, now, None);
                    } else {
                        self.set_phase(Phase::Finished, now, None);
                    }
                    Ok(())
                }
            }
            Command::Close => {
                if self.phase == Phase::Finished {
                    return Ok(());
                }
                if self.phase != Phase::Idle {
                    self.emit(now, EventKind::SessionEnd, None)?;
                    self.aborted_session = Some(self.session);
                }
                self.closed = true;
                self.set_phase(Phase::Finished, now, None);
                Ok(())
            }
        }
    }
}
