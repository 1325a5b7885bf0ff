//! Clients for the external text-to-music service.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::audio::{AudioClip, AudioError};

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("duration must be positive, got {0} s")]
    InvalidDuration(f64),
    #[error("generation backend unavailable: {message}")]
    Transport { message: String, retryable: bool },
    #[error("no audio registered for prompt (key {key})")]
    NotFound { key: String },
    #[error("backend returned undecodable audio: {0}")]
    Decode(#[from] AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GenerationError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            GenerationError::Transport {
                retryable: true,
                ..
            }
        )
    }
}

/// Something that turns a prompt sentence into mono PCM audio.
pub trait GenerationClient: Sync {
    fn generate(&self, prompt: &str, duration_s: f64) -> Result<AudioClip, GenerationError>;
}

/// Content key used by the stub to locate a prompt's audio file.
pub fn prompt_key(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

pub fn request_generation(
    prompt: &str,
    duration_s: f64,
    client: &dyn GenerationClient,
) -> Result<AudioClip, GenerationError> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(GenerationError::InvalidDuration(duration_s));
    }
    client.generate(prompt, duration_s)
}

/// Issues requests with at most `parallelism` in flight. Results keep the
/// order of `prompts`.
pub fn generate_batch(
    prompts: &[String],
    duration_s: f64,
    client: &dyn GenerationClient,
    parallelism: usize,
) -> Vec<Result<AudioClip, GenerationError>> {
    let workers = parallelism.clamp(1, prompts.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<AudioClip, GenerationError>>>> =
        prompts.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= prompts.len() {
                    break;
                }
                let res = request_generation(&prompts[i], duration_s, client);
                *slots[i].lock().unwrap() = Some(res);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

/// Offline stand-in for the generation service: prompts resolve to
/// `<dir>/<sha256(prompt)>.wav`.
#[derive(Debug, Clone)]
pub struct StubGenerationClient {
    dir: PathBuf,
}

impl StubGenerationClient {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, prompt: &str) -> PathBuf {
        self.dir.join(format!("{}.wav", prompt_key(prompt)))
    }

    pub fn register(&self, prompt: &str, audio: &AudioClip) -> Result<PathBuf, GenerationError> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.path_for(prompt);
        audio.write_wav(&path)?;
        Ok(path)
    }
}

impl GenerationClient for StubGenerationClient {
    fn generate(&self, prompt: &str, _duration_s: f64) -> Result<AudioClip, GenerationError> {
        let path = self.path_for(prompt);
        if !path.is_file() {
            return Err(GenerationError::NotFound {
                key: prompt_key(prompt),
            });
        }
        Ok(AudioClip::read_wav(&path)?)
    }
}

#[derive(Serialize)]
struct GenerationRequest<'a> {
    prompt: &'a str,
    duration_s: f64,
}

/// POSTs `{"prompt", "duration_s"}` as JSON to `endpoint` and expects WAV
/// bytes back.
pub struct HttpGenerationClient {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpGenerationClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            endpoint: endpoint.into(),
            agent: config.into(),
        }
    }
}

impl GenerationClient for HttpGenerationClient {
    fn generate(&self, prompt: &str, duration_s: f64) -> Result<AudioClip, GenerationError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(GenerationRequest { prompt, duration_s })
            .map_err(|e| GenerationError::Transport {
                message: e.to_string(),
                retryable: true,
            })?;
        let status = resp.status().as_u16();
        if status == 404 {
            return Err(GenerationError::NotFound {
                key: prompt_key(prompt),
            });
        }
        if !(200..300).contains(&status) {
            return Err(GenerationError::Transport {
                message: format!("HTTP {status}"),
                retryable: status >= 500 || status == 429,
            });
        }
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(1 << 30)
            .read_to_vec()
            .map_err(|e| GenerationError::Transport {
                message: e.to_string(),
                retryable: true,
            })?;
        Ok(AudioClip::from_wav_bytes(&bytes)?)
    }
}
