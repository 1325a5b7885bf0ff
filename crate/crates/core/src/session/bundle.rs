//! On-disk dataset bundle, one directory per participant session:
//! `participant/<id>/session<k>/{manifest.json, events.jsonl, eeg.csv,
//! fnirs.csv, ratings.csv, clips.json}`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ingest::{Discontinuity, SampleStore};
use super::machine::{ArithmeticRecord, ParadigmConfig, SessionMachine};
use super::plan::{BLOCKS_PER_SESSION, TRIALS_PER_SESSION};
use crate::analysis::{LabelSource, RatingTriple, TrialLabel, TrialRecord};
use crate::quadrant::EmotionQuadrant;
use crate::sigproc::io::{
    read_eeg_csv, read_fnirs_csv, write_eeg_csv, write_fnirs_csv, StreamIoError,
};
use crate::sigproc::{EegRecording, EventKind, EventTimeline, FnirsRecording, TimelineError};

pub const BUNDLE_FORMAT: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("session {0} has not been started")]
    NotStarted(usize),
    #[error("session {0} is still running; finish or close it first")]
    NotFinished(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Stream(#[from] StreamIoError),
    #[error(transparent)]
    Timeline(#[from] TimelineError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn fmt_err(path: &Path, msg: impl ToString) -> BundleError {
    BundleError::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub participant_id: String,
    /// 1-based.
    pub session: usize,
    pub plan_seed: u64,
    pub block_quadrants: Vec<EmotionQuadrant>,
    pub start_ms: f64,
    pub end_ms: Option<f64>,
    /// Every scheduled trial ran all phases and was rated.
    pub complete: bool,
    /// Closed before the schedule ran out.
    pub aborted: bool,
    pub n_trials: usize,
    /// Started trials missing a phase or a rating.
    pub incomplete_trials: Vec<u32>,
    pub unrated_trials: Vec<u32>,
    pub eeg_samples: usize,
    pub fnirs_samples: usize,
    pub discontinuities: Vec<Discontinuity>,
    pub arithmetic: Vec<ArithmeticRecord>,
    pub paradigm: ParadigmConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipAssignment {
    pub trial_id: u32,
    pub block: usize,
    pub trial: usize,
    pub clip_id: String,
    pub quadrant: EmotionQuadrant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionBundle {
    pub manifest: Manifest,
    pub timeline: EventTimeline,
    pub eeg: EegRecording,
    pub fnirs: FnirsRecording,
    pub trials: Vec<TrialRecord>,
    pub clips: Vec<ClipAssignment>,
}

pub fn session_dir(root: &Path, participant_id: &str, session: usize) -> PathBuf {
    root.join("participant")
        .join(participant_id)
        .join(format!("session{session}"))
}

/// Event index range and times of the 0-based session `k`.
fn session_span(timeline: &EventTimeline, k: usize) -> Option<(usize, f64, Option<(usize, f64)>)> {
    let ev = timeline.events();
    let starts: Vec<usize> = ev
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == EventKind::SessionStart)
        .map(|(i, _)| i)
        .collect();
    let ends: Vec<usize> = ev
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == EventKind::SessionEnd)
        .map(|(i, _)| i)
        .collect();
    let s = *starts.get(k)?;
    let end = ends
        .iter()
        .copied()
        .find(|&e| e > s)
        .map(|e| (e, ev[e].t_ms));
    Some((s, ev[s].t_ms, end))
}

/// Builds the bundle for the 0-based session `k` without touching disk.
pub fn collect_session(
    machine: &SessionMachine,
    store: &SampleStore,
    k: usize,
) -> Result<SessionBundle, BundleError> {
    let tl = machine.timeline();
    let (s_idx, start_ms, end) = session_span(tl, k).ok_or(BundleError::NotStarted(k + 1))?;
    let Some((e_idx, end_ms)) = end else {
        return Err(BundleError::NotFinished(k + 1));
    };
    // Samples recorded between two sessions are split at the midpoint of
    // the gap, so each session keeps its own lead-in and tail.
    let lo = match k.checked_sub(1).and_then(|j| session_span(tl, j)) {
        Some((_, _, Some((_, prev_end)))) => 0.5 * (prev_end + start_ms),
        _ => f64::NEG_INFINITY,
    };
    let hi = session_span(tl, k + 1).map_or(f64::INFINITY, |(_, next_start, _)| {
        0.5 * (end_ms + next_start)
    });
    let timeline = EventTimeline::new(tl.events()[s_idx..=e_idx].to_vec())?;
    let eeg = store.eeg(lo, hi);
    let fnirs = store.fnirs(lo, hi);
    let first = k * TRIALS_PER_SESSION;
    let scheduled = &machine.records()[first..first + TRIALS_PER_SESSION];
    let trials: Vec<TrialRecord> = scheduled
        .iter()
        .filter(|r| r.t_prep.is_some())
        .cloned()
        .collect();
    let incomplete_trials: Vec<u32> = trials
        .iter()
        .filter(|r| !r.is_complete())
        .map(|r| r.trial_id)
        .collect();
    let unrated_trials: Vec<u32> = trials
        .iter()
        .filter(|r| r.rating.is_none())
        .map(|r| r.trial_id)
        .collect();
    let plan = machine.plan();
    let clips = plan
        .slots()
        .filter(|s| s.session == k)
        .map(|s| ClipAssignment {
            trial_id: s.trial_id,
            block: s.block,
            trial: s.trial,
            clip_id: s.clip_id,
            quadrant: s.quadrant,
        })
        .collect();
    let blocks = (k * BLOCKS_PER_SESSION) as u32..((k + 1) * BLOCKS_PER_SESSION) as u32;
    let aborted = machine.aborted_session() == Some(k);
    let manifest = Manifest {
        format_version: BUNDLE_FORMAT,
        participant_id: plan.participant_id.clone(),
        session: k + 1,
        plan_seed: plan.seed,
        block_quadrants: plan.block_quadrants[k * BLOCKS_PER_SESSION..(k + 1) * BLOCKS_PER_SESSION]
            .to_vec(),
        start_ms,
        end_ms: Some(end_ms),
        complete: trials.len() == TRIALS_PER_SESSION && incomplete_trials.is_empty(),
        aborted,
        n_trials: trials.len(),
        incomplete_trials,
        unrated_trials,
        eeg_samples: eeg.len(),
        fnirs_samples: fnirs.len(),
        discontinuities: store
            .discontinuities()
            .iter()
            .filter(|d| d.next_ms >= lo && d.next_ms < hi)
            .cloned()
            .collect(),
        arithmetic: machine
            .arithmetic()
            .iter()
            .filter(|a| blocks.contains(&a.block_id))
            .cloned()
            .collect(),
        paradigm: machine.config().clone(),
    };
    Ok(SessionBundle {
        manifest,
        timeline,
        eeg,
        fnirs,
        trials,
        clips,
    })
}

/// Writes every session that has ended. Returns the session directories.
pub fn export_dataset(
    machine: &SessionMachine,
    store: &SampleStore,
    root: &Path,
) -> Result<Vec<PathBuf>, BundleError> {
    let mut out = Vec::new();
    for k in 0..super::plan::SESSIONS {
        match collect_session(machine, store, k) {
            Ok(b) => out.push(write_bundle(root, &b)?),
            Err(BundleError::NotStarted(_)) => break,
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(BundleError::NotStarted(1));
    }
    Ok(out)
}

pub const RATINGS_HEADER: [&str; 16] = [
    "participant_id",
    "session",
    "block",
    "trial_id",
    "clip_id",
    "music_quadrant",
    "t_prep",
    "t_music_on",
    "t_music_off",
    "t_rating",
    "t_rest",
    "valence",
    "arousal",
    "liking",
    "label",
    "label_source",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_ratings_csv<W: Write>(w: W, trials: &[TrialRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(RATINGS_HEADER)?;
    for r in trials {
        w.write_record([
            r.participant_id.clone(),
            r.session.to_string(),
            r.block.to_string(),
            r.trial_id.to_string(),
            r.clip_id.clone(),
            r.music_quadrant.to_string(),
            opt(r.t_prep),
            opt(r.t_music_on),
            opt(r.t_music_off),
            opt(r.t_rating),
            opt(r.t_rest),
            opt(r.rating.map(|x| x.valence)),
            opt(r.rating.map(|x| x.arousal)),
            opt(r.rating.map(|x| x.liking)),
            opt(r.derived_label.map(|l| l.quadrant)),
            opt(r.derived_label.map(|l| l.source.as_str())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ratings_csv(path: &Path) -> Result<Vec<TrialRecord>, BundleError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| fmt_err(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| fmt_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    if header != RATINGS_HEADER {
        return Err(fmt_err(
            path,
            format!("unexpected header {}", header.join(",")),
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| fmt_err(path, e))?;
        let bad = |col: usize| {
            fmt_err(
                path,
                format!("row {}: bad {} {:?}", i + 1, RATINGS_HEADER[col], &rec[col]),
            )
        };
        let req = |col: usize| -> Result<&str, BundleError> {
            rec.get(col)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| bad(col))
        };
        let optf = |col: usize| -> Result<Option<f64>, BundleError> {
            match &rec[col] {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(col)),
            }
        };
        let opti = |col: usize| -> Result<Option<i64>, BundleError> {
            match &rec[col] {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(col)),
            }
        };
        let music: EmotionQuadrant = req(5)?.parse().map_err(|_| bad(5))?;
        let rating = match (opti(11)?, opti(12)?, opti(13)?) {
            (Some(v), Some(a), Some(l)) => Some(RatingTriple::new(v, a, l).map_err(|_| bad(11))?),
            (None, None, None) => None,
            _ => return Err(bad(11)),
        };
        let derived_label = match (&rec[14], &rec[15]) {
            ("", "") => None,
            (q, src) => {
                let q: EmotionQuadrant = q.parse().map_err(|_| bad(14))?;
                let source = [
                    LabelSource::SelfReport,
                    LabelSource::MusicFallbackValence,
                    LabelSource::MusicFallbackArousal,
                    LabelSource::MusicFallbackBoth,
                ]
                .into_iter()
                .find(|s| s.as_str() == src)
                .ok_or_else(|| bad(15))?;
                Some(TrialLabel {
                    quadrant: q,
                    valence_high: q.valence_high(),
                    arousal_high: q.arousal_high(),
                    source,
                })
            }
        };
        out.push(TrialRecord {
            participant_id: req(0)?.to_string(),
            session: req(1)?.parse().map_err(|_| bad(1))?,
            block: req(2)?.parse().map_err(|_| bad(2))?,
            trial_id: req(3)?.parse().map_err(|_| bad(3))?,
            clip_id: req(4)?.to_string(),
            music_quadrant: music,
            t_prep: optf(6)?,
            t_music_on: optf(7)?,
            t_music_off: optf(8)?,
            t_rating: optf(9)?,
            t_rest: optf(10)?,
            rating,
            derived_label,
        });
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>, BundleError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BundleError> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| fmt_err(path, e))?;
    f.write_all(b"\n").map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

pub fn write_bundle(root: &Path, b: &SessionBundle) -> Result<PathBuf, BundleError> {
    let dir = session_dir(root, &b.manifest.participant_id, b.manifest.session);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_json(&dir.join("manifest.json"), &b.manifest)?;
    write_json(&dir.join("clips.json"), &b.clips)?;
    let p = dir.join("events.jsonl");
    let mut f = create(&p)?;
    b.timeline.write_jsonl(&mut f)?;
    f.flush().map_err(io_err(&p))?;
    write_eeg_csv(create(&dir.join("eeg.csv"))?, &b.eeg)?;
    write_fnirs_csv(create(&dir.join("fnirs.csv"))?, &b.fnirs)?;
    let p = dir.join("ratings.csv");
    write_ratings_csv(create(&p)?, &b.trials).map_err(|e| fmt_err(&p, e))?;
    Ok(dir)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BundleError> {
    let f = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| fmt_err(path, e))
}

pub fn read_bundle(dir: &Path) -> Result<SessionBundle, BundleError> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    if manifest.format_version != BUNDLE_FORMAT {
        return Err(fmt_err(
            &dir.join("manifest.json"),
            format!("unsupported format {}", manifest.format_version),
        ));
    }
    let clips = read_json(&dir.join("clips.json"))?;
    let p = dir.join("events.jsonl");
    let timeline = EventTimeline::read_jsonl(BufReader::new(File::open(&p).map_err(io_err(&p))?))?;
    let p = dir.join("eeg.csv");
    let eeg = read_eeg_csv(BufReader::new(File::open(&p).map_err(io_err(&p))?))?;
    let p = dir.join("fnirs.csv");
    let fnirs = read_fnirs_csv(BufReader::new(File::open(&p).map_err(io_err(&p))?))?;
    let trials = read_ratings_csv(&dir.join("ratings.csv"))?;
    Ok(SessionBundle {
        manifest,
        timeline,
        eeg,
        fnirs,
        trials,
        clips,
    })
}

/// All session directories under `root`, sorted by path.
pub fn find_bundles(root: &Path) -> Result<Vec<PathBuf>, BundleError> {
    let base = root.join("participant");
    let mut out = Vec::new();
    let list = |p: &Path| -> Result<Vec<PathBuf>, BundleError> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(p)
            .map_err(io_err(p))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        v.sort();
        Ok(v)
    };
    if !base.is_dir() {
        return Ok(out);
    }
    for participant in list(&base)? {
        for session in list(&participant)? {
            if session.join("manifest.json").is_file() {
                out.push(session);
            }
        }
    }
    Ok(out)
}
