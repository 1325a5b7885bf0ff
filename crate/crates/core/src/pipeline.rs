//! Dataset-level stages chained by the command line: preprocess bundles,
//! analyze the preprocessed sessions, classify the feature table.
//!
//! Directory contract, all under one output root:
//! `dataset/participant/<id>/session<k>/` (bundles),
//! `preprocessed/participant/<id>/session<k>/`, `analysis/`, `classify/`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::FnirsFeatureVector;
use crate::analysis::{
    one_way_anova, pearson, rating_report, AnovaResult, RatingReport, TrialRecord, TukeyPair,
    BAND_NAMES,
};
use crate::config::PipelineConfig;
use crate::quadrant::EmotionQuadrant;
use crate::recognition::{
    ablation_report, build_features, read_feature_csv, write_feature_csv, AblationReport,
    TrialFeatures, TrialInputs,
};
use crate::session::{
    build_plan, export_dataset, read_bundle, read_ratings_csv, simulate_device, synthetic_library,
    write_ratings_csv, SessionBundle,
};
use crate::sigproc::io::{
    epoch_path, read_epoch_csv, read_hemodynamic_csv, read_ppg_csv, write_epochs,
    write_hemodynamic_csv, write_ppg_csv,
};
use crate::sigproc::{
    epoch_eeg, exclude_artifacts, extract_ppg, filter_eeg, fnirs_baseline_correct, intensity_to_od,
    mbll, systemic_filter, EegEpoch, EventKind, EventTimeline, HemodynamicSeries, PpgSeries,
    SkipReason,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {msg}")]
    Stage { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no {what} found under {path}")]
    Empty { what: &'static str, path: PathBuf },
}

fn stage(path: &Path, e: impl ToString) -> PipelineError {
    PipelineError::Stage {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(io(d))?;
    }
    File::create(path).map(BufWriter::new).map_err(io(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| stage(path, e))?;
    f.write_all(b"\n").map_err(io(path))?;
    f.flush().map_err(io(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let f = File::open(path).map_err(io(path))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| stage(path, e))
}

/// Session directories (`participant/<id>/session<k>`) below `root` that
/// contain `marker`, sorted.
fn session_dirs(root: &Path, marker: &str) -> Result<Vec<PathBuf>, PipelineError> {
    let list = |p: &Path| -> Result<Vec<PathBuf>, PipelineError> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(p)
            .map_err(io(p))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        v.sort();
        Ok(v)
    };
    let base = root.join("participant");
    let mut out = Vec::new();
    if base.is_dir() {
        for participant in list(&base)? {
            out.extend(
                list(&participant)?
                    .into_iter()
                    .filter(|s| s.join(marker).is_file()),
            );
        }
    }
    Ok(out)
}

/// Simulates `cfg.simulation.subjects` participants (`sim01`, `sim02`, ...)
/// and exports their bundles under `dataset`.
pub fn simulate_dataset(
    dataset: &Path,
    cfg: &PipelineConfig,
) -> Result<Vec<PathBuf>, PipelineError> {
    let library = synthetic_library(cfg.simulation.clips_per_quadrant);
    let per_subject: Vec<Vec<PathBuf>> = (0..cfg.simulation.subjects)
        .into_par_iter()
        .map(|i| {
            let pid = format!("sim{:02}", i + 1);
            let plan = build_plan(&pid, &library, cfg.seed).map_err(|e| stage(dataset, e))?;
            let sim = simulate_device(
                &plan,
                &cfg.paradigm,
                &cfg.simulation.profile,
                &cfg.fnirs.constants,
                cfg.seed,
            );
            export_dataset(&sim.machine, &sim.store, dataset).map_err(|e| stage(dataset, e))
        })
        .collect::<Result<_, _>>()?;
    Ok(per_subject.into_iter().flatten().collect())
}

/// Per-session bookkeeping written next to the preprocessed streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPreprocess {
    pub participant_id: String,
    pub session: usize,
    pub epochs: Vec<u32>,
    pub skipped_epochs: Vec<(u32, SkipReason)>,
    /// Trials whose fNIRS baseline window was not covered.
    pub fnirs_flagged: Vec<u32>,
    pub hbt_residual: f64,
    pub warnings: Vec<String>,
}

pub struct Preprocessed {
    pub summary: SessionPreprocess,
    pub epochs: Vec<EegEpoch>,
    pub ppg: Option<PpgSeries>,
    pub hb: Option<HemodynamicSeries>,
}

/// EEG: band-pass, artifact masking, epoching. fNIRS: optical density,
/// PPG, MBLL, pre-stimulus baseline, systemic band-pass.
pub fn preprocess_bundle(
    b: &SessionBundle,
    cfg: &PipelineConfig,
    path: &Path,
) -> Result<Preprocessed, PipelineError> {
    let mut warnings = Vec::new();
    let (epochs, skipped) = if b.eeg.is_empty() {
        warnings.push("no EEG samples".to_string());
        (Vec::new(), Vec::new())
    } else {
        let (lo, hi) = cfg.eeg.band_hz;
        let filtered =
            filter_eeg(&b.eeg, lo, hi).map_err(|e| stage(path, format!("EEG filter: {e}")))?;
        let masked = exclude_artifacts(&filtered, &b.timeline)
            .map_err(|e| stage(path, format!("EEG artifacts: {e}")))?;
        let set = epoch_eeg(&masked, &b.timeline, &cfg.eeg.epoch);
        (set.epochs, set.skipped)
    };
    let (ppg, hb, flagged) = if b.fnirs.is_empty() {
        warnings.push("no fNIRS samples".to_string());
        (None, None, Vec::new())
    } else {
        let f = &cfg.fnirs;
        let err = |what: &str, e: &dyn std::fmt::Display| stage(path, format!("fNIRS {what}: {e}"));
        let od =
            intensity_to_od(&b.fnirs, f.i0_window_ms).map_err(|e| err("optical density", &e))?;
        let ppg = extract_ppg(&od, f.ppg_source, f.ppg_band_hz).map_err(|e| err("PPG", &e))?;
        let raw = mbll(&od, &f.constants).map_err(|e| err("MBLL", &e))?;
        let corrected = fnirs_baseline_correct(&raw, &b.timeline, f.baseline_s, f.default_task_s);
        let hb = systemic_filter(&corrected.series, f.systemic_band_hz)
            .map_err(|e| err("systemic filter", &e))?;
        (Some(ppg), Some(hb), corrected.flagged)
    };
    let summary = SessionPreprocess {
        participant_id: b.manifest.participant_id.clone(),
        session: b.manifest.session,
        epochs: epochs.iter().map(|e| e.trial_id).collect(),
        skipped_epochs: skipped,
        fnirs_flagged: flagged,
        hbt_residual: hb.as_ref().map_or(0.0, HemodynamicSeries::hbt_residual),
        warnings,
    };
    Ok(Preprocessed {
        summary,
        epochs,
        ppg,
        hb,
    })
}

fn relative(dir: &Path, root: &Path) -> PathBuf {
    dir.strip_prefix(root)
        .map(Path::to_path_buf)
        .unwrap_or_else(|_| dir.to_path_buf())
}

/// Preprocesses every bundle under `dataset` into `out`, mirroring the
/// participant/session layout. Sessions run in parallel.
pub fn preprocess_dataset(
    dataset: &Path,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<Vec<SessionPreprocess>, PipelineError> {
    let dirs = session_dirs(dataset, "manifest.json")?;
    if dirs.is_empty() {
        return Err(PipelineError::Empty {
            what: "session bundles",
            path: dataset.to_path_buf(),
        });
    }
    dirs.par_iter()
        .map(|dir| {
            let b = read_bundle(dir).map_err(|e| stage(dir, e))?;
            let pre = preprocess_bundle(&b, cfg, dir)?;
            let dst = out.join(relative(dir, dataset));
            write_epochs(&dst.join("epochs"), &pre.epochs).map_err(|e| stage(&dst, e))?;
            if let Some(ppg) = &pre.ppg {
                let p = dst.join("ppg.csv");
                write_ppg_csv(create(&p)?, ppg).map_err(|e| stage(&p, e))?;
            }
            if let Some(hb) = &pre.hb {
                let p = dst.join("hemodynamics.csv");
                write_hemodynamic_csv(create(&p)?, hb).map_err(|e| stage(&p, e))?;
            }
            let p = dst.join("events.jsonl");
            let mut f = create(&p)?;
            b.timeline.write_jsonl(&mut f).map_err(|e| stage(&p, e))?;
            f.flush().map_err(io(&p))?;
            let p = dst.join("ratings.csv");
            write_ratings_csv(create(&p)?, &b.trials).map_err(|e| stage(&p, e))?;
            write_json(&dst.join("preprocess.json"), &pre.summary)?;
            Ok(pre.summary)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub participant_id: String,
    pub session: usize,
    pub trial_id: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyRow {
    pub a: EmotionQuadrant,
    pub b: EmotionQuadrant,
    pub diff: f64,
    pub q: f64,
    pub p: f64,
    pub significant: bool,
}

/// One band's comparison across derived-label groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandTest {
    pub band: String,
    pub group_means: BTreeMap<EmotionQuadrant, f64>,
    pub group_sizes: BTreeMap<EmotionQuadrant, usize>,
    pub anova: Option<AnovaResult>,
    pub tukey: Vec<TukeyRow>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCorrelation {
    pub feature: String,
    /// `valence_high` or `arousal_high`, coded 1/0.
    pub target: String,
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub significant: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub n_sessions: usize,
    pub n_trials: usize,
    pub n_features: usize,
    pub ratings: RatingReport,
    pub band_power: Vec<BandTest>,
    pub fnirs_correlations: Vec<FeatureCorrelation>,
    pub exclusions: Vec<Exclusion>,
    pub warnings: Vec<String>,
}

/// Channel-averaged relative band powers of a feature row.
pub fn mean_band_power(f: &TrialFeatures) -> [f64; 5] {
    std::array::from_fn(|b| 0.5 * (f.eeg[b] + f.eeg[5 + b]))
}

/// ANOVA and Tukey HSD across derived-label groups for each band. Groups
/// with fewer than two trials are left out.
pub fn band_power_tests(features: &[TrialFeatures], alpha: f64) -> Vec<BandTest> {
    (0..5)
        .map(|b| {
            let mut groups: BTreeMap<EmotionQuadrant, Vec<f64>> = BTreeMap::new();
            for f in features {
                groups
                    .entry(f.label.quadrant)
                    .or_default()
                    .push(mean_band_power(f)[b]);
            }
            let group_sizes = groups.iter().map(|(q, v)| (*q, v.len())).collect();
            let group_means = groups
                .iter()
                .map(|(q, v)| (*q, v.iter().sum::<f64>() / v.len() as f64))
                .collect();
            let kept: Vec<(EmotionQuadrant, Vec<f64>)> =
                groups.into_iter().filter(|(_, v)| v.len() >= 2).collect();
            let values: Vec<&Vec<f64>> = kept.iter().map(|(_, v)| v).collect();
            let mut test = BandTest {
                band: BAND_NAMES[b].to_string(),
                group_means,
                group_sizes,
                anova: None,
                tukey: Vec::new(),
                error: None,
            };
            match one_way_anova(&values)
                .and_then(|a| crate::analysis::tukey_hsd(&values, alpha).map(|t| (a, t)))
            {
                Ok((a, pairs)) => {
                    test.anova = Some(a);
                    test.tukey = pairs
                        .into_iter()
                        .map(
                            |TukeyPair {
                                 i,
                                 j,
                                 diff,
                                 q,
                                 p,
                                 significant,
                             }| TukeyRow {
                                a: kept[i].0,
                                b: kept[j].0,
                                diff,
                                q,
                                p,
                                significant,
                            },
                        )
                        .collect();
                }
                Err(e) => test.error = Some(e.to_string()),
            }
            test
        })
        .collect()
}

/// Pearson correlation of every hemodynamic feature with the binary
/// valence and arousal labels.
pub fn fnirs_label_correlations(features: &[TrialFeatures], alpha: f64) -> Vec<FeatureCorrelation> {
    let names = FnirsFeatureVector::names();
    let targets: [(&str, Vec<f64>); 2] = [
        (
            "valence_high",
            features
                .iter()
                .map(|f| f.label.valence_high as u8 as f64)
                .collect(),
        ),
        (
            "arousal_high",
            features
                .iter()
                .map(|f| f.label.arousal_high as u8 as f64)
                .collect(),
        ),
    ];
    let mut out = Vec::new();
    for (target, y) in &targets {
        for (k, name) in names.iter().enumerate() {
            let x: Vec<f64> = features.iter().map(|f| f.hb.0[k]).collect();
            let cell = match pearson(&x, y) {
                Ok(c) => FeatureCorrelation {
                    feature: name.clone(),
                    target: target.to_string(),
                    r: Some(c.r),
                    p: Some(c.p),
                    significant: c.p < alpha,
                    error: None,
                },
                Err(e) => FeatureCorrelation {
                    feature: name.clone(),
                    target: target.to_string(),
                    r: None,
                    p: None,
                    significant: false,
                    error: Some(e.to_string()),
                },
            };
            out.push(cell);
        }
    }
    out
}

struct SessionInputs {
    participant_id: String,
    session: usize,
    records: Vec<TrialRecord>,
    epochs: BTreeMap<u32, EegEpoch>,
    ppg: Option<PpgSeries>,
    hb: Option<HemodynamicSeries>,
}

fn load_preprocessed(dir: &Path) -> Result<SessionInputs, PipelineError> {
    let summary: SessionPreprocess = read_json(&dir.join("preprocess.json"))?;
    let p = dir.join("events.jsonl");
    let timeline = EventTimeline::read_jsonl(BufReader::new(File::open(&p).map_err(io(&p))?))
        .map_err(|e| stage(&p, e))?;
    let records = read_ratings_csv(&dir.join("ratings.csv")).map_err(|e| stage(dir, e))?;
    let onsets = timeline.trial_times(EventKind::MusicOn);
    let mut epochs = BTreeMap::new();
    for id in &summary.epochs {
        let p = epoch_path(&dir.join("epochs"), *id);
        let onset = onsets
            .get(id)
            .copied()
            .ok_or_else(|| stage(&p, "epoch without a music_on event"))?;
        let e = read_epoch_csv(BufReader::new(File::open(&p).map_err(io(&p))?), *id, onset)
            .map_err(|e| stage(&p, e))?;
        epochs.insert(*id, e);
    }
    let optional = |name: &str| -> Option<PathBuf> { Some(dir.join(name)).filter(|p| p.is_file()) };
    let ppg = optional("ppg.csv")
        .map(|p| {
            read_ppg_csv(BufReader::new(File::open(&p).map_err(io(&p))?)).map_err(|e| stage(&p, e))
        })
        .transpose()?;
    let hb = optional("hemodynamics.csv")
        .map(|p| {
            read_hemodynamic_csv(BufReader::new(File::open(&p).map_err(io(&p))?))
                .map_err(|e| stage(&p, e))
        })
        .transpose()?;
    Ok(SessionInputs {
        participant_id: summary.participant_id,
        session: summary.session,
        records,
        epochs,
        ppg,
        hb,
    })
}

/// Builds the trial feature table and the summary statistics from a
/// preprocessed tree. Writes `features.csv`, `band_power.csv` and
/// `analysis.json` into `out`.
pub fn analyze_dataset(
    pre: &Path,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<AnalysisReport, PipelineError> {
    let dirs = session_dirs(pre, "preprocess.json")?;
    if dirs.is_empty() {
        return Err(PipelineError::Empty {
            what: "preprocessed sessions",
            path: pre.to_path_buf(),
        });
    }
    let per_session: Vec<(Vec<TrialRecord>, Vec<TrialFeatures>, Vec<Exclusion>)> = dirs
        .par_iter()
        .map(|dir| {
            let s = load_preprocessed(dir)?;
            let (mut feats, mut excl) = (Vec::new(), Vec::new());
            for r in &s.records {
                let inputs = TrialInputs {
                    subject: &s.participant_id,
                    record: r,
                    eeg: s.epochs.get(&r.trial_id),
                    ppg: s.ppg.as_ref(),
                    hb: s.hb.as_ref(),
                };
                match build_features(&inputs, &cfg.features) {
                    Ok(f) => feats.push(f),
                    Err(e) => excl.push(Exclusion {
                        participant_id: s.participant_id.clone(),
                        session: s.session,
                        trial_id: r.trial_id,
                        reason: e.to_string(),
                    }),
                }
            }
            Ok((s.records, feats, excl))
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut records = Vec::new();
    let mut features = Vec::new();
    let mut exclusions = Vec::new();
    for (r, f, e) in per_session {
        records.extend(r);
        features.extend(f);
        exclusions.extend(e);
    }
    features.sort_by(|a, b| a.subject.cmp(&b.subject).then(a.trial_id.cmp(&b.trial_id)));
    let mut warnings = Vec::new();
    if !exclusions.is_empty() {
        warnings.push(format!(
            "{} trial(s) excluded from the feature table",
            exclusions.len()
        ));
    }
    let undefined_hr = features.iter().filter(|f| !f.hr_defined).count();
    if undefined_hr > 0 {
        warnings.push(format!(
            "{undefined_hr} trial(s) with too few beats for a heart rate"
        ));
    }

    let p = out.join("features.csv");
    write_feature_csv(create(&p)?, &features).map_err(|e| stage(&p, e))?;
    let p = out.join("band_power.csv");
    let mut w = csv::Writer::from_writer(create(&p)?);
    let mut header = vec!["subject", "trial_id", "label"];
    header.extend(BAND_NAMES);
    w.write_record(&header).map_err(|e| stage(&p, e))?;
    for f in &features {
        let mut row = vec![
            f.subject.clone(),
            f.trial_id.to_string(),
            f.label.quadrant.to_string(),
        ];
        row.extend(mean_band_power(f).iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(|e| stage(&p, e))?;
    }
    w.flush().map_err(io(&p))?;

    let report = AnalysisReport {
        n_sessions: dirs.len(),
        n_trials: records.len(),
        n_features: features.len(),
        ratings: rating_report(&records),
        band_power: band_power_tests(&features, cfg.stats.alpha),
        fnirs_correlations: fnirs_label_correlations(&features, cfg.stats.alpha),
        exclusions,
        warnings,
    };
    write_json(&out.join("analysis.json"), &report)?;
    Ok(report)
}

/// Runs the ablation grid on a feature table. Writes `ablation.json` and
/// `ablation.md` into `out`.
pub fn classify_features(
    features_csv: &Path,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<AblationReport, PipelineError> {
    let f = File::open(features_csv).map_err(io(features_csv))?;
    let data = read_feature_csv(BufReader::new(f)).map_err(|e| stage(features_csv, e))?;
    let report = ablation_report(&data, &cfg.recognition).map_err(|e| stage(features_csv, e))?;
    write_json(&out.join("ablation.json"), &report)?;
    let p = out.join("ablation.md");
    let mut w = create(&p)?;
    w.write_all(report.to_markdown().as_bytes())
        .map_err(io(&p))?;
    w.flush().map_err(io(&p))?;
    Ok(report)
}
