use std::path::Path;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use musemo::audio::AudioClip;
use musemo::session::{chunk_csv, read_bundle, synthetic_library, ParadigmConfig, StreamKind};
use musemo_server::{router, AppState, ManualClock, ServerConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Harness {
    app: Router,
    clock: Arc<ManualClock>,
    dir: tempfile::TempDir,
}

fn config(dir: &Path, journaled: bool) -> ServerConfig {
    ServerConfig {
        library: synthetic_library(5),
        clip_dir: Some(dir.join("clips")),
        data_dir: journaled.then(|| dir.join("data")),
        export_dir: dir.join("export"),
        paradigm: ParadigmConfig::default(),
        seed: 3,
    }
}

fn harness(journaled: bool) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(0.0));
    let state = AppState::new(config(dir.path(), journaled), clock.clone());
    Harness {
        app: router(state),
        clock,
        dir,
    }
}

impl Harness {
    async fn raw(
        &self,
        method: Method,
        uri: &str,
        body: impl Into<Body>,
    ) -> (StatusCode, Vec<u8>, Option<String>) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .body(body.into())
            .unwrap();
        let res = self.app.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let ctype = res
            .headers()
            .get(header::CONTENT_TYPE)
            .map(|v| v.to_str().unwrap().to_string());
        let bytes = to_bytes(res.into_body(), usize::MAX)
            .await
            .unwrap()
            .to_vec();
        (status, bytes, ctype)
    }

    async fn call(&self, method: Method, uri: &str, body: Value) -> (StatusCode, Value) {
        let body = if body.is_null() {
            Body::empty()
        } else {
            Body::from(body.to_string())
        };
        let (status, bytes, _) = self.raw(method, uri, body).await;
        let v = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap()
        };
        (status, v)
    }

    async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, body).await
    }

    async fn state(&self, id: &str) -> Value {
        let (s, v) = self
            .call(
                Method::GET,
                &format!("/api/session/{id}/state"),
                Value::Null,
            )
            .await;
        assert_eq!(s, StatusCode::OK, "{v}");
        v
    }

    async fn rate(&self, id: &str, trial: u64, v: i64, a: i64) -> (StatusCode, Value) {
        self.post(
            &format!("/api/session/{id}/rating"),
            json!({"trial_id": trial, "valence": v, "arousal": a, "liking": 5}),
        )
        .await
    }
}

fn eeg_chunk(t0: f64, n: usize, cols: usize) -> Vec<u8> {
    let ts: Vec<f64> = (0..n).map(|i| t0 + i as f64 * 4.0).collect();
    let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
    let mut c: Vec<&[f64]> = vec![&ts];
    c.extend(std::iter::repeat_n(v.as_slice(), cols));
    chunk_csv(StreamKind::Eeg, &c)
}

fn fnirs_chunk(t0: f64, n: usize) -> Vec<u8> {
    let ts: Vec<f64> = (0..n).map(|i| t0 + i as f64 * 40.0).collect();
    let v = vec![1500.0; n];
    let mut c: Vec<&[f64]> = vec![&ts];
    c.extend(std::iter::repeat_n(v.as_slice(), 16));
    chunk_csv(StreamKind::Fnirs, &c)
}

#[tokio::test]
async fn create_validates_and_rejects_duplicates() {
    let h = harness(false);
    let (s, v) = h
        .post("/api/session", json!({"participant_id": "p01"}))
        .await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["id"], "p01");
    assert_eq!(v["plan"]["block_quadrants"].as_array().unwrap().len(), 8);

    assert_eq!(
        h.post("/api/session", json!({"participant_id": "p01"}))
            .await
            .0,
        StatusCode::CONFLICT
    );
    assert_eq!(
        h.post("/api/session", json!({"participant_id": "../x"}))
            .await
            .0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    assert_eq!(
        h.post("/api/session", json!({"participant": "p02"}))
            .await
            .0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let (s, _, _) = h.raw(Method::POST, "/api/session", "{not json").await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    // An explicit plan is used as given.
    let plan = v["plan"].clone();
    let mut other = plan.clone();
    other["participant_id"] = json!("p02");
    let (s, v2) = h
        .post(
            "/api/session",
            json!({"participant_id": "p02", "plan": other}),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v2["plan"]["trial_clips"], plan["trial_clips"]);

    // A plan that breaks block homogeneity is refused.
    let mut broken = other.clone();
    broken["participant_id"] = json!("p03");
    broken["block_quadrants"][0] = broken["block_quadrants"][1].clone();
    assert_eq!(
        h.post(
            "/api/session",
            json!({"participant_id": "p03", "plan": broken})
        )
        .await
        .0,
        StatusCode::UNPROCESSABLE_ENTITY
    );

    assert_eq!(
        h.call(Method::GET, "/api/session/nobody/state", Value::Null)
            .await
            .0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn phases_follow_the_clock_and_ratings_need_an_open_window() {
    let h = harness(false);
    h.post("/api/session", json!({"participant_id": "p01"}))
        .await;
    assert_eq!(h.state("p01").await["phase"], "idle");
    let (s, v) = h.post("/api/session/p01/start", Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["phase"], "preparation");
    assert_eq!(v["deadline_ms"], 5000.0);
    assert_eq!(
        h.post("/api/session/p01/start", Value::Null).await.0,
        StatusCode::CONFLICT
    );

    h.clock.set(4_999.0);
    assert_eq!(h.state("p01").await["phase"], "preparation");
    h.clock.set(5_000.0);
    let st = h.state("p01").await;
    assert_eq!(st["phase"], "playback");
    assert_eq!(st["deadline_ms"], 65_000.0);

    h.clock.set(30_000.0);
    let (s, v) = h.rate("p01", 0, 7, 8).await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
    assert_eq!(v["error"], "conflict");

    h.clock.set(70_000.0);
    assert_eq!(h.state("p01").await["phase"], "rating");
    assert_eq!(
        h.rate("p01", 0, 0, 5).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    assert_eq!(h.rate("p01", 1, 7, 8).await.0, StatusCode::CONFLICT);
    assert_eq!(
        h.rate("p01", 99, 7, 8).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let (s, v) = h.rate("p01", 0, 7, 8).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["phase"], "rest");
    assert_eq!(v["deadline_ms"], 85_000.0);
    assert_eq!(v["collected_ratings"], 1);
    assert_eq!(h.rate("p01", 0, 7, 8).await.0, StatusCode::CONFLICT);

    h.clock.set(85_000.0);
    let st = h.state("p01").await;
    assert_eq!(st["phase"], "preparation");
    assert_eq!(st["trial_id"], 1);
}

#[tokio::test]
async fn state_polling_does_not_move_the_machine() {
    let h = harness(false);
    h.post("/api/session", json!({"participant_id": "p01"}))
        .await;
    h.post("/api/session/p01/start", Value::Null).await;
    h.clock.set(66_000.0);
    assert_eq!(h.state("p01").await["phase"], "rating");
    // The rating timeout is 30 s after music off; polling past it shows the
    // rest phase, and a late rating is refused.
    h.clock.set(95_001.0);
    let st = h.state("p01").await;
    assert_eq!(st["phase"], "rest");
    assert_eq!(h.rate("p01", 0, 5, 5).await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn arithmetic_interlude_between_blocks() {
    let h = harness(false);
    h.post("/api/session", json!({"participant_id": "p01"}))
        .await;
    h.post("/api/session/p01/start", Value::Null).await;
    let mut t = 0.0;
    for trial in 0..5u64 {
        t += 65_000.0;
        h.clock.set(t);
        assert_eq!(h.rate("p01", trial, 3, 7).await.0, StatusCode::OK);
        t += 15_000.0;
    }
    h.clock.set(t);
    let st = h.state("p01").await;
    assert_eq!(st["phase"], "arithmetic");
    assert_eq!(st["arithmetic"]["block_id"], 0);
    assert_eq!(st["arithmetic"]["problems"].as_array().unwrap().len(), 3);
    let (s, _) = h
        .post(
            "/api/session/p01/arithmetic",
            json!({"block_id": 1, "answers": [1, 2, 3]}),
        )
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = h
        .post(
            "/api/session/p01/arithmetic",
            json!({"block_id": 0, "answers": "x"}),
        )
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, v) = h
        .post(
            "/api/session/p01/arithmetic",
            json!({"block_id": 0, "answers": [1, 2, 3]}),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["phase"], "preparation");
    assert_eq!(v["block"], 1);
    assert_eq!(v["trial_id"], 5);
}

#[tokio::test]
async fn sample_ingestion_checks_schema_and_order() {
    let h = harness(false);
    h.post("/api/session", json!({"participant_id": "p01"}))
        .await;
    let (s, b, _) = h
        .raw(
            Method::POST,
            "/api/session/p01/samples/eeg",
            eeg_chunk(0.0, 250, 2),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    let ack: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(
        (ack["accepted"].as_u64(), ack["total"].as_u64()),
        (Some(250), Some(250))
    );

    let (s, b, _) = h
        .raw(
            Method::POST,
            "/api/session/p01/samples/fnirs",
            fnirs_chunk(0.0, 25),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&b).unwrap()["accepted"], 25);

    let three_cols = "timestamp_ms,fp1_uv,fp2_uv,a1_uv\n1000,1,2,3\n1004,1,2,3\n";
    let (s, b, _) = h
        .raw(Method::POST, "/api/session/p01/samples/eeg", three_cols)
        .await;
    assert_eq!(
        s,
        StatusCode::UNPROCESSABLE_ENTITY,
        "{}",
        String::from_utf8_lossy(&b)
    );
    // Timestamps must continue after the last accepted sample.
    let (s, _, _) = h
        .raw(
            Method::POST,
            "/api/session/p01/samples/eeg",
            eeg_chunk(500.0, 10, 2),
        )
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _, _) = h
        .raw(
            Method::POST,
            "/api/session/p01/samples/ppg",
            eeg_chunk(2000.0, 10, 2),
        )
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    // A gap of more than two periods is accepted and counted.
    let (s, b, _) = h
        .raw(
            Method::POST,
            "/api/session/p01/samples/eeg",
            eeg_chunk(2000.0, 10, 2),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    let ack: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(
        (ack["total"].as_u64(), ack["discontinuities"].as_u64()),
        (Some(260), Some(1))
    );
}

#[tokio::test]
async fn clip_audio_is_served_as_wav() {
    let h = harness(false);
    let clips = h.dir.path().join("clips");
    std::fs::create_dir_all(&clips).unwrap();
    let clip = AudioClip::new(vec![0.0, 0.25, -0.25, 0.5], 8000).unwrap();
    clip.write_wav(&clips.join("sim_hahv_00.wav")).unwrap();

    let (s, bytes, ctype) = h
        .raw(Method::GET, "/api/clip/sim_hahv_00/audio", Body::empty())
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("audio/wav"));
    assert_eq!(bytes, std::fs::read(clips.join("sim_hahv_00.wav")).unwrap());
    assert_eq!(AudioClip::from_wav_bytes(&bytes).unwrap().sample_rate, 8000);

    assert_eq!(
        h.raw(Method::GET, "/api/clip/missing/audio", Body::empty())
            .await
            .0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        h.raw(Method::GET, "/api/clip/..%2Fsecret/audio", Body::empty())
            .await
            .0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn export_requires_an_ended_study() {
    let h = harness(false);
    h.post("/api/session", json!({"participant_id": "p01"}))
        .await;
    assert_eq!(
        h.post("/api/session/p01/export", Value::Null).await.0,
        StatusCode::CONFLICT
    );
    h.post("/api/session/p01/start", Value::Null).await;
    h.clock.set(65_000.0);
    h.rate("p01", 0, 7, 7).await;
    assert_eq!(
        h.post("/api/session/p01/export", Value::Null).await.0,
        StatusCode::CONFLICT
    );
    h.clock.set(90_000.0);
    let (s, v) = h
        .post("/api/session/p01/export", json!({"close": true}))
        .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let dirs = v["sessions"].as_array().unwrap();
    assert_eq!(dirs.len(), 1);
    let b = read_bundle(Path::new(dirs[0].as_str().unwrap())).unwrap();
    assert!(b.manifest.aborted);
    assert_eq!(b.manifest.n_trials, 2);
    assert_eq!(b.manifest.incomplete_trials, vec![1]);
    assert!(b.trials[0].is_complete());
    // Closing is final; later commands are refused.
    assert_eq!(
        h.post("/api/session/p01/start", Value::Null).await.0,
        StatusCode::CONFLICT
    );
}

/// Drives a whole study over HTTP on a shortened paradigm while streaming
/// device samples, then checks the exported bundles.
#[tokio::test]
async fn full_study_over_http_exports_complete_bundles() {
    let h = harness(true);
    let paradigm = json!({"preparation_ms": 200.0, "music_ms": 2000.0, "rest_ms": 400.0});
    let (s, _) = h
        .post(
            "/api/session",
            json!({"participant_id": "p01", "paradigm": paradigm}),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED);

    let mut t = 0.0;
    let (mut eeg_t, mut fnirs_t) = (0.0, 0.0);
    let mut stream_until = |h: &Harness, until: f64| {
        let mut chunks = Vec::new();
        while eeg_t + 1000.0 <= until {
            chunks.push((StreamKind::Eeg, eeg_chunk(eeg_t, 250, 2)));
            chunks.push((StreamKind::Fnirs, fnirs_chunk(fnirs_t, 25)));
            eeg_t += 1000.0;
            fnirs_t += 1000.0;
        }
        let app = h.app.clone();
        async move {
            for (k, body) in chunks {
                let req = Request::post(format!("/api/session/p01/samples/{}", k.as_str()))
                    .body(Body::from(body))
                    .unwrap();
                assert_eq!(
                    app.clone().oneshot(req).await.unwrap().status(),
                    StatusCode::OK
                );
            }
        }
    };
    let mut rated = 0;
    let mut sessions_started = 0;
    for _ in 0..10_000 {
        let st = h.state("p01").await;
        match st["phase"].as_str().unwrap() {
            "finished" => break,
            "idle" => {
                if sessions_started == 1 {
                    t += 5_000.0;
                    h.clock.set(t);
                }
                stream_until(&h, t).await;
                assert_eq!(
                    h.post("/api/session/p01/start", Value::Null).await.0,
                    StatusCode::OK
                );
                sessions_started += 1;
            }
            "rating" => {
                t += 300.0;
                h.clock.set(t);
                let trial = st["trial_id"].as_u64().unwrap();
                let (v, a) = if trial % 2 == 0 { (7, 7) } else { (3, 2) };
                assert_eq!(h.rate("p01", trial, v, a).await.0, StatusCode::OK);
                rated += 1;
            }
            "arithmetic" => {
                t += 1_000.0;
                h.clock.set(t);
                let block = st["arithmetic"]["block_id"].clone();
                let (s, _) = h
                    .post(
                        "/api/session/p01/arithmetic",
                        json!({"block_id": block, "answers": [1, 2, 3]}),
                    )
                    .await;
                assert_eq!(s, StatusCode::OK);
            }
            _ => {
                t = st["deadline_ms"].as_f64().unwrap();
                h.clock.set(t);
            }
        }
        stream_until(&h, t).await;
    }
    assert_eq!((rated, sessions_started), (40, 2));
    stream_until(&h, t + 3_000.0).await;

    let (s, v) = h.post("/api/session/p01/export", Value::Null).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let dirs: Vec<&str> = v["sessions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d.as_str().unwrap())
        .collect();
    assert_eq!(dirs.len(), 2);
    let mut eeg_total = 0;
    for (k, d) in dirs.iter().enumerate() {
        let b = read_bundle(Path::new(d)).unwrap();
        assert!(
            b.manifest.complete && !b.manifest.aborted,
            "{:?}",
            b.manifest
        );
        assert_eq!(b.manifest.session, k + 1);
        assert_eq!(b.trials.len(), 20);
        assert!(b.trials.iter().all(|r| r.is_complete()));
        for r in &b.trials {
            assert_eq!(r.t_music_off.unwrap() - r.t_music_on.unwrap(), 2000.0);
            assert_eq!(r.t_music_on.unwrap() - r.t_prep.unwrap(), 200.0);
            assert_eq!(r.t_rest.unwrap() - r.t_rating.unwrap(), 0.0);
        }
        eeg_total += b.eeg.len();
    }
    assert_eq!(eeg_total as f64, eeg_t / 4.0);

    // The raw recordings and the journal survive a restart.
    let restored = AppState::restore(config(h.dir.path(), true), h.clock.clone()).unwrap();
    assert_eq!(restored.session_ids(), vec!["p01".to_string()]);
    let app2 = router(restored);
    let req = Request::get("/api/session/p01/state")
        .body(Body::empty())
        .unwrap();
    let res = app2.clone().oneshot(req).await.unwrap();
    let st: Value =
        serde_json::from_slice(&to_bytes(res.into_body(), usize::MAX).await.unwrap()).unwrap();
    assert_eq!(st, h.state("p01").await);
    let req = Request::post("/api/session/p01/export")
        .body(Body::empty())
        .unwrap();
    let res = app2.oneshot(req).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    for d in dirs {
        let again = read_bundle(Path::new(d)).unwrap();
        assert_eq!(again.manifest.eeg_samples, again.eeg.len());
    }
}

#[tokio::test]
async fn restart_resumes_mid_trial() {
    let h = harness(true);
    h.post("/api/session", json!({"participant_id": "p01"}))
        .await;
    h.post("/api/session/p01/start", Value::Null).await;
    h.clock.set(66_000.0);
    h.rate("p01", 0, 8, 2).await;
    h.clock.set(70_000.0);
    let before = h.state("p01").await;

    let restored = AppState::restore(config(h.dir.path(), true), h.clock.clone()).unwrap();
    let app2 = router(restored);
    let req = Request::get("/api/session/p01/state")
        .body(Body::empty())
        .unwrap();
    let res = app2.clone().oneshot(req).await.unwrap();
    let after: Value =
        serde_json::from_slice(&to_bytes(res.into_body(), usize::MAX).await.unwrap()).unwrap();
    assert_eq!(after, before);
    assert_eq!(after["collected_ratings"], 1);
    // The restored session refuses the same rating twice.
    let req = Request::post("/api/session/p01/rating")
        .body(Body::from(
            json!({"trial_id": 0, "valence": 8, "arousal": 2, "liking": 5}).to_string(),
        ))
        .unwrap();
    assert_eq!(
        app2.oneshot(req).await.unwrap().status(),
        StatusCode::CONFLICT
    );
}
