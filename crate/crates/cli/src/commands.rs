use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::Context;
use musemo::audio::{
    extract_corpus, feature_group_anova, scale_features, write_feature_csv, ClipFeatures,
};
use musemo::config::PipelineConfig;
use musemo::pipeline::{
    analyze_dataset, classify_features, preprocess_dataset, simulate_dataset, write_json,
};
use musemo::promptgen::{
    enumerate_prompts_with, generate_batch, validate_template, write_manifest, GenerationClient,
    HttpGenerationClient, ManifestEntry, PromptLexicon, PromptSpec, StubGenerationClient,
};
use musemo::quadrant::EmotionQuadrant;
use musemo::screening::{
    load_library, read_ratings_csv, screen_library, LibraryEntry, ScreeningReport,
};
use musemo::session::synthetic_library;
use musemo_server::{AppState, ServerConfig, SystemClock};
use serde_json::{json, Value};

use crate::{
    AnalyzeArgs, ClassifyArgs, CliError, MusicFeaturesArgs, PreprocessArgs, PromptsArgs,
    ScreenArgs, ServeArgs, SimulateArgs,
};

type Outcome = Result<Value, CliError>;

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} {} not found",
            path.display()
        )))
    }
}

fn secs(d: Duration) -> f64 {
    (d.as_secs_f64() * 1000.0).round() / 1000.0
}

pub fn prompts(cfg: &mut PipelineConfig, out: &Path, a: PromptsArgs) -> Outcome {
    let quadrants: Vec<EmotionQuadrant> = if a.all_quadrants {
        EmotionQuadrant::ALL.to_vec()
    } else if a.quadrant.is_empty() {
        return Err(CliError::Usage(
            "pass --all-quadrants or at least one --quadrant".into(),
        ));
    } else {
        a.quadrant
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    };
    if let Some(c) = a.count {
        cfg.prompts.count_per_quadrant = c;
    }
    if let Some(t) = a.template {
        cfg.prompts.template = t;
    }
    if let Some(p) = a.lexicon {
        cfg.prompts.lexicon = Some(p);
    }
    if let Some(d) = a.duration_s {
        cfg.prompts.clip_duration_s = d;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    validate_template(&cfg.prompts.template).map_err(|e| CliError::Usage(e.to_string()))?;
    let lexicon = match &cfg.prompts.lexicon {
        Some(p) => {
            require(p, "lexicon")?;
            PromptLexicon::load(p).map_err(|e| CliError::Usage(e.to_string()))?
        }
        None => PromptLexicon::default(),
    };

    let mut specs: Vec<PromptSpec> = Vec::new();
    for q in &quadrants {
        let batch = enumerate_prompts_with(
            &lexicon,
            *q,
            cfg.prompts.count_per_quadrant,
            cfg.seed,
            &cfg.prompts.template,
        )
        .map_err(|e| CliError::Usage(e.to_string()))?;
        specs.extend(batch);
    }
    let dir = out.join("prompts");
    std::fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
    let manifest = dir.join("prompts.jsonl");
    let mut w =
        BufWriter::new(File::create(&manifest).with_context(|| manifest.display().to_string())?);
    write_manifest(&mut w, &specs).context("writing prompt manifest")?;
    w.flush()?;
    let per_quadrant: BTreeMap<String, usize> = quadrants
        .iter()
        .map(|q| {
            (
                q.to_string(),
                specs.iter().filter(|s| s.quadrant == *q).count(),
            )
        })
        .collect();
    log::info!("wrote {} prompts to {}", specs.len(), manifest.display());

    let client: Option<Box<dyn GenerationClient>> = match (a.stub_dir, a.endpoint) {
        (Some(d), _) => {
            require(&d, "stub directory")?;
            Some(Box::new(StubGenerationClient::new(d)))
        }
        (None, Some(url)) => Some(Box::new(HttpGenerationClient::new(
            url,
            Duration::from_secs(600),
        ))),
        (None, None) => None,
    };
    let mut summary = json!({
        "total": specs.len(),
        "per_quadrant": per_quadrant,
        "manifest": manifest,
    });
    if let Some(client) = client {
        let (library, failed) =
            render_clips(&dir, &specs, cfg.prompts.clip_duration_s, client.as_ref())?;
        summary["library"] = json!(library);
        summary["rendered"] = json!(specs.len() - failed.len());
        if !failed.is_empty() {
            return Err(CliError::Failed(anyhow::anyhow!(
                "{} of {} clips failed to render: {}",
                failed.len(),
                specs.len(),
                failed.join("; ")
            )));
        }
    }
    Ok(summary)
}

/// Renders every prompt and writes `clips/<id>.wav` plus a library
/// manifest for the clips that succeeded.
fn render_clips(
    dir: &Path,
    specs: &[PromptSpec],
    duration_s: f64,
    client: &dyn GenerationClient,
) -> Result<(PathBuf, Vec<String>), CliError> {
    let mut ordinals: BTreeMap<EmotionQuadrant, usize> = BTreeMap::new();
    let entries: Vec<ManifestEntry> = specs
        .iter()
        .map(|s| {
            let k = ordinals.entry(s.quadrant).or_default();
            *k += 1;
            ManifestEntry::new(s, *k - 1)
        })
        .collect();
    let texts: Vec<String> = specs.iter().map(|s| s.rendered.clone()).collect();
    let results = generate_batch(&texts, duration_s, client, rayon::current_num_threads());
    let clips = dir.join("clips");
    std::fs::create_dir_all(&clips).with_context(|| clips.display().to_string())?;
    let mut library = Vec::new();
    let mut failed = Vec::new();
    for (entry, res) in entries.iter().zip(results) {
        match res {
            Ok(audio) => {
                let rel = PathBuf::from("clips").join(format!("{}.wav", entry.id));
                audio
                    .write_wav(&dir.join(&rel))
                    .with_context(|| rel.display().to_string())?;
                library.push(LibraryEntry {
                    clip_id: entry.id.clone(),
                    quadrant: entry.quadrant,
                    prompt: Some(entry.rendered.clone()),
                    audio: rel,
                });
            }
            Err(e) => failed.push(format!("{}: {e}", entry.id)),
        }
    }
    let path = dir.join("library.json");
    write_json(&path, &library).map_err(|e| CliError::Failed(e.into()))?;
    Ok((path, failed))
}

pub fn screen(cfg: &PipelineConfig, out: &Path, a: ScreenArgs) -> Outcome {
    require(&a.library, "library manifest")?;
    require(&a.ratings, "ratings file")?;
    let clips = load_library(&a.library)?;
    let ratings = read_ratings_csv(BufReader::new(
        File::open(&a.ratings).context("opening ratings")?,
    ))?;
    let report = screen_library(&clips, &ratings, &cfg.screening)?;
    let path = out.join("screening").join("report.json");
    write_json(&path, &report).map_err(anyhow::Error::from)?;
    let counts: BTreeMap<String, usize> = report
        .counts()
        .into_iter()
        .map(|(q, n)| (q.to_string(), n))
        .collect();
    log::info!(
        "selected {} of {} clips",
        report.total_selected(),
        clips.len()
    );
    Ok(json!({
        "clips": clips.len(),
        "retained_technical": report.retained_technical.len(),
        "selected": counts,
        "rejected": report.rejected.len(),
        "report": path,
    }))
}

pub fn music_features(out: &Path, a: MusicFeaturesArgs) -> Outcome {
    require(&a.library, "library manifest")?;
    let mut clips = load_library(&a.library)?;
    if let Some(sel) = &a.selected {
        require(sel, "screening report")?;
        let report: ScreeningReport = serde_json::from_reader(BufReader::new(File::open(sel)?))
            .with_context(|| sel.display().to_string())?;
        let keep: BTreeSet<&String> = report.selected.values().flatten().collect();
        clips.retain(|c| keep.contains(&c.clip_id));
    }
    if clips.is_empty() {
        return Err(CliError::Usage("no clips to analyze".into()));
    }
    let input: Vec<_> = clips
        .into_iter()
        .map(|c| (c.clip_id, c.quadrant, c.audio))
        .collect();
    let mut rows: Vec<ClipFeatures> = Vec::new();
    let mut failed = Vec::new();
    for (id, res) in extract_corpus(&input) {
        match res {
            Ok(r) => rows.push(r),
            Err(e) => failed.push(json!({"clip_id": id, "error": e.to_string()})),
        }
    }
    let mut feats: Vec<_> = rows.iter().map(|r| r.features.clone()).collect();
    scale_features(&mut feats);
    for (r, f) in rows.iter_mut().zip(feats) {
        r.features = f;
    }
    let mut groups: BTreeMap<EmotionQuadrant, Vec<[f64; 5]>> = BTreeMap::new();
    for r in &rows {
        groups
            .entry(r.quadrant)
            .or_default()
            .push(r.features.scaled.expect("scaled above"));
    }
    let dir = out.join("music_features");
    std::fs::create_dir_all(&dir)?;
    let csv_path = dir.join("features.csv");
    write_feature_csv(BufWriter::new(File::create(&csv_path)?), &rows)
        .context("writing features.csv")?;
    let (anova, anova_error) = match feature_group_anova(&groups) {
        Ok(a) => (Some(a), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let stats = json!({
        "n_clips": rows.len(),
        "group_sizes": groups.iter().map(|(q, v)| (q.to_string(), v.len())).collect::<BTreeMap<_, _>>(),
        "anova": anova,
        "anova_error": anova_error,
        "failed": failed,
        "clips": rows,
    });
    let stats_path = dir.join("stats.json");
    write_json(&stats_path, &stats).map_err(anyhow::Error::from)?;
    Ok(json!({
        "clips": rows.len(),
        "failed": failed.len(),
        "anova": stats["anova"],
        "features": csv_path,
        "stats": stats_path,
    }))
}

pub fn simulate(cfg: &mut PipelineConfig, out: &Path, a: SimulateArgs) -> Outcome {
    if let Some(n) = a.subjects {
        if n == 0 {
            return Err(CliError::Usage("--subjects must be at least 1".into()));
        }
        cfg.simulation.subjects = n;
    }
    let dataset = out.join("dataset");
    let t = Instant::now();
    let bundles = simulate_dataset(&dataset, cfg).map_err(anyhow::Error::from)?;
    log::info!(
        "simulated {} participant(s), {} bundles",
        cfg.simulation.subjects,
        bundles.len()
    );
    Ok(json!({
        "subjects": cfg.simulation.subjects,
        "bundles": bundles.len(),
        "dataset": dataset,
        "seconds": secs(t.elapsed()),
    }))
}

pub fn preprocess(cfg: &PipelineConfig, out: &Path, a: PreprocessArgs) -> Outcome {
    let dataset = a.dataset.unwrap_or_else(|| out.join("dataset"));
    require(&dataset, "dataset")?;
    let dest = out.join("preprocessed");
    let t = Instant::now();
    let sessions = preprocess_dataset(&dataset, &dest, cfg).map_err(anyhow::Error::from)?;
    let epochs: usize = sessions.iter().map(|s| s.epochs.len()).sum();
    let skipped: usize = sessions.iter().map(|s| s.skipped_epochs.len()).sum();
    let flagged: usize = sessions.iter().map(|s| s.fnirs_flagged.len()).sum();
    log::info!(
        "preprocessed {} session(s): {epochs} epochs, {skipped} skipped",
        sessions.len()
    );
    Ok(json!({
        "sessions": sessions.len(),
        "epochs": epochs,
        "skipped_epochs": skipped,
        "fnirs_flagged": flagged,
        "preprocessed": dest,
        "seconds": secs(t.elapsed()),
    }))
}

pub fn analyze(cfg: &PipelineConfig, out: &Path, a: AnalyzeArgs) -> Outcome {
    let pre = a.preprocessed.unwrap_or_else(|| out.join("preprocessed"));
    require(&pre, "preprocessed tree")?;
    let dest = out.join("analysis");
    let t = Instant::now();
    let report = analyze_dataset(&pre, &dest, cfg).map_err(anyhow::Error::from)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(json!({
        "sessions": report.n_sessions,
        "trials": report.n_trials,
        "features": report.n_features,
        "excluded": report.exclusions.len(),
        "analysis": dest,
        "seconds": secs(t.elapsed()),
    }))
}

pub fn classify(cfg: &PipelineConfig, out: &Path, a: ClassifyArgs) -> Outcome {
    let features = a
        .features
        .unwrap_or_else(|| out.join("analysis").join("features.csv"));
    require(&features, "feature table")?;
    let dest = out.join("classify");
    let t = Instant::now();
    let report = classify_features(&features, &dest, cfg).map_err(anyhow::Error::from)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let cells: Vec<Value> = report
        .cells
        .iter()
        .map(|c| {
            json!({
                "protocol": c.protocol,
                "target": c.target,
                "combo": c.combo,
                "acc": format!("{:.3}±{:.3}", c.acc_mean, c.acc_sd),
                "mf1": format!("{:.3}±{:.3}", c.mf1_mean, c.mf1_sd),
            })
        })
        .collect();
    Ok(json!({
        "trials": report.n_trials,
        "subjects": report.n_subjects,
        "cells": cells,
        "classify": dest,
        "seconds": secs(t.elapsed()),
    }))
}

pub fn serve(cfg: &PipelineConfig, out: &Path, a: ServeArgs) -> Outcome {
    let library = match &a.library {
        Some(p) => {
            require(p, "screening report")?;
            let report: ScreeningReport = serde_json::from_reader(BufReader::new(File::open(p)?))
                .with_context(|| p.display().to_string())?;
            report.selected
        }
        None => synthetic_library(cfg.simulation.clips_per_quadrant),
    };
    if let Some(c) = &a.clips {
        require(c, "clip directory")?;
    }
    let config = ServerConfig {
        library,
        clip_dir: a.clips,
        data_dir: a.data_dir,
        export_dir: out.join("dataset"),
        paradigm: cfg.paradigm.clone(),
        seed: cfg.seed,
    };
    let state =
        AppState::restore(config, Arc::new(SystemClock)).map_err(|e| CliError::Failed(e.into()))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting runtime")?;
    let addr = a.addr.clone();
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        musemo_server::serve(listener, state)
            .await
            .context("serving")
    })?;
    Ok(json!({ "stopped": a.addr }))
}
