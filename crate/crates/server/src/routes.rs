use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use musemo::session::{
    build_plan, export_dataset, Command, IngestAck, ParadigmConfig, SessionPlan, StateView,
    StreamKind,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{clip_path, safe_id, ApiError, AppState};

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/session", post(create))
        .route("/api/session/{id}/start", post(start))
        .route("/api/session/{id}/state", get(state_of))
        .route("/api/session/{id}/rating", post(rating))
        .route("/api/session/{id}/arithmetic", post(arithmetic))
        .route("/api/session/{id}/samples/{stream}", post(samples))
        .route("/api/session/{id}/export", post(export))
        .route("/api/clip/{clip_id}/audio", get(clip_audio))
        .with_state(state)
}

/// Body of `POST /api/session`. Without an explicit plan one is drawn
/// from the server's clip library.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub participant_id: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub plan: Option<SessionPlan>,
    #[serde(default)]
    pub paradigm: Option<ParadigmConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub plan: SessionPlan,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Exported {
    pub sessions: Vec<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RatingBody {
    trial_id: u32,
    valence: i64,
    arousal: i64,
    liking: i64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArithmeticBody {
    block_id: u32,
    answers: Vec<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportBody {
    /// Ends a running study before exporting.
    #[serde(default)]
    close: bool,
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::Validation(format!("request body: {e}")))
}

async fn create(
    State(app): State<AppState>,
    body: Bytes,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let req: CreateSession = parse(&body)?;
    if !safe_id(&req.participant_id) {
        return Err(ApiError::Validation(format!(
            "participant id {:?} must be [A-Za-z0-9_.-]+",
            req.participant_id
        )));
    }
    let cfg = &app.0.config;
    let plan = match req.plan {
        Some(plan) => {
            if plan.participant_id != req.participant_id {
                return Err(ApiError::Validation(
                    "plan participant_id does not match".into(),
                ));
            }
            plan.validate()?;
            plan
        }
        None => build_plan(
            &req.participant_id,
            &cfg.library,
            req.seed.unwrap_or(cfg.seed),
        )?,
    };
    let id = req.participant_id.clone();
    app.insert(
        &id,
        plan.clone(),
        req.paradigm.unwrap_or_else(|| cfg.paradigm.clone()),
    )?;
    log::info!("created session {id}");
    Ok((StatusCode::CREATED, Json(Created { id, plan })))
}

async fn start(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<StateView>, ApiError> {
    Ok(Json(
        app.entry(&id)?
            .apply(app.0.clock.as_ref(), Command::Start)?,
    ))
}

async fn state_of(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<StateView>, ApiError> {
    Ok(Json(app.entry(&id)?.view(app.0.clock.as_ref())))
}

async fn rating(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<StateView>, ApiError> {
    let entry = app.entry(&id)?;
    let r: RatingBody = parse(&body)?;
    let cmd = Command::Rating {
        trial_id: r.trial_id,
        valence: r.valence,
        arousal: r.arousal,
        liking: r.liking,
    };
    Ok(Json(entry.apply(app.0.clock.as_ref(), cmd)?))
}

async fn arithmetic(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<StateView>, ApiError> {
    let entry = app.entry(&id)?;
    let a: ArithmeticBody = parse(&body)?;
    Ok(Json(entry.apply(
        app.0.clock.as_ref(),
        Command::Arithmetic {
            block_id: a.block_id,
            answers: a.answers,
        },
    )?))
}

async fn samples(
    State(app): State<AppState>,
    Path((id, stream)): Path<(String, String)>,
    body: Bytes,
) -> Result<Json<IngestAck>, ApiError> {
    let entry = app.entry(&id)?;
    let stream: StreamKind = stream.parse().map_err(ApiError::NotFound)?;
    let ack = entry.samples.lock().unwrap().ingest_csv(stream, &body)?;
    Ok(Json(ack))
}

async fn export(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Exported>, ApiError> {
    let entry = app.entry(&id)?;
    let req: ExportBody = if body.iter().all(u8::is_ascii_whitespace) {
        ExportBody::default()
    } else {
        parse(&body)?
    };
    let mut c = entry.commands.lock().unwrap();
    if req.close && !c.machine.closed() && c.machine.phase() != musemo::session::Phase::Finished {
        entry.apply_locked(&mut c, app.0.clock.as_ref(), Command::Close)?;
    } else {
        // Let elapsed deadlines fire so the export sees the current phase.
        entry.apply_locked(&mut c, app.0.clock.as_ref(), Command::Tick)?;
    }
    if !c.machine.closed() && c.machine.phase() != musemo::session::Phase::Finished {
        return Err(ApiError::Conflict(format!(
            "session {id} is in phase {}; finish it or export with {{\"close\": true}}",
            c.machine.phase().as_str()
        )));
    }
    let store = entry.samples.lock().unwrap();
    let sessions = export_dataset(&c.machine, &store, &app.0.config.export_dir)?;
    log::info!("exported session {id} to {} bundle(s)", sessions.len());
    Ok(Json(Exported { sessions }))
}

async fn clip_audio(
    State(app): State<AppState>,
    Path(clip_id): Path<String>,
) -> Result<Response, ApiError> {
    let dir = app
        .0
        .config
        .clip_dir
        .as_ref()
        .ok_or_else(|| ApiError::NotFound("no clip directory configured".into()))?;
    let path =
        clip_path(dir, &clip_id).ok_or_else(|| ApiError::NotFound(format!("clip {clip_id}")))?;
    match std::fs::read(&path) {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(ApiError::NotFound(format!("clip {clip_id}")))
        }
        Err(e) => Err(ApiError::io(e)),
    }
}
