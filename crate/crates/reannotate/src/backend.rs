//! Annotator backends.
//!
//! A backend turns one request into the model's raw text. The HTTP contract
//! is a JSON POST of [`AnnotateRequest`] answered by [`AnnotateResponse`].

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const API_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateRequest {
    pub schema_version: u32,
    pub video_id: String,
    pub duration: f64,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateResponse {
    pub schema_version: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {0}")]
    Status(u16),
    #[error("bad response: {0}")]
    Protocol(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::Transport(_) => true,
            BackendError::Status(code) => *code == 429 || *code >= 500,
            BackendError::Protocol(_) => false,
        }
    }
}

pub trait AnnotatorBackend: Send + Sync {
    fn name(&self) -> &str;
    fn annotate(&self, request: &AnnotateRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub backoff_multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 500,
            backoff_multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn no_wait(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_backoff_ms: 0,
            backoff_multiplier: 1.0,
        }
    }

    /// Delay before retry number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.backoff_multiplier.powi(attempt.saturating_sub(1) as i32);
        Duration::from_millis(ms as u64)
    }

    /// Calls `f` until it succeeds, fails with a non-retryable error, or
    /// attempts run out. Returns the result and the number of attempts.
    pub fn run<T>(&self, mut f: impl FnMut() -> Result<T, BackendError>) -> (Result<T, BackendError>, u32) {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match f() {
                Ok(v) => return (Ok(v), attempt),
                Err(e) if e.is_retryable() && attempt < max => {
                    std::thread::sleep(self.backoff(attempt));
                    attempt += 1;
                }
                Err(e) => return (Err(e), attempt),
            }
        }
    }
}

const MOCK_SUBJECTS: [&str; 8] = ["a man", "a woman", "a child", "a dog", "a chef", "a cyclist", "a girl", "an old man"];
const MOCK_ACTIONS: [&str; 10] = [
    "opens a red door",
    "pours water into a glass",
    "picks up a blue backpack",
    "ties a shoelace",
    "waves at a passing car",
    "slices a loaf of bread",
    "climbs a short ladder",
    "throws a tennis ball",
    "folds a striped towel",
    "writes on a whiteboard",
];

/// Deterministic stand-in for a model: events spread over the video, with
/// text derived from the seed and the video id only.
#[derive(Debug, Clone, PartialEq)]
pub struct MockBackend {
    pub seed: u64,
    pub events_per_video: usize,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            events_per_video: 3,
        }
    }
}

impl AnnotatorBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn annotate(&self, request: &AnnotateRequest) -> Result<String, BackendError> {
        let mut h = DefaultHasher::new();
        request.video_id.hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ h.finish());
        let k = self.events_per_video.max(1);
        let slot = request.duration / k as f64;
        let mut lines = Vec::with_capacity(k);
        let mut used = Vec::new();
        for i in 0..k {
            let lo = slot * i as f64;
            let start = lo + rng.random_range(0.0..0.4) * slot;
            let end = (start + rng.random_range(0.2..0.55) * slot).min(request.duration);
            let (s, e) = ((start * 10.0).round() / 10.0, (end * 10.0).round() / 10.0);
            // distinct subject/action pairs within a video
            let mut pick;
            loop {
                pick = (rng.random_range(0..MOCK_SUBJECTS.len()), rng.random_range(0..MOCK_ACTIONS.len()));
                if !used.contains(&pick) {
                    break;
                }
            }
            used.push(pick);
            lines.push(format!("{s:.1}-{e:.1}: {} {}", MOCK_SUBJECTS[pick.0], MOCK_ACTIONS[pick.1]));
        }
        Ok(lines.join("\n"))
    }
}

type Script = (usize, Vec<Result<String, BackendError>>);

/// Replays canned replies per video, in order; the last reply repeats.
/// Videos without a script get an empty reply.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    scripts: Mutex<HashMap<String, Script>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(self, video_id: &str, replies: Vec<Result<String, BackendError>>) -> Self {
        self.scripts
            .lock()
            .expect("script lock")
            .insert(video_id.to_string(), (0, replies));
        self
    }

    /// Number of calls seen for a video.
    pub fn calls(&self, video_id: &str) -> usize {
        self.scripts
            .lock()
            .expect("script lock")
            .get(video_id)
            .map_or(0, |(n, _)| *n)
    }
}

impl AnnotatorBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn annotate(&self, request: &AnnotateRequest) -> Result<String, BackendError> {
        let mut scripts = self.scripts.lock().expect("script lock");
        let Some((calls, replies)) = scripts.get_mut(&request.video_id) else {
            return Ok(String::new());
        };
        let reply = replies
            .get(*calls)
            .or_else(|| replies.last())
            .cloned()
            .unwrap_or_else(|| Ok(String::new()));
        *calls += 1;
        reply
    }
}

/// JSON-over-HTTP backend. The endpoint receives [`AnnotateRequest`] and
/// must answer with [`AnnotateResponse`].
pub struct HttpBackend {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            token,
            agent,
        }
    }
}

impl AnnotatorBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn annotate(&self, request: &AnnotateRequest) -> Result<String, BackendError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(request).map_err(|e| match e {
            ureq::Error::StatusCode(code) => BackendError::Status(code),
            ureq::Error::Timeout(_) => BackendError::Timeout,
            other => BackendError::Transport(other.to_string()),
        })?;
        let body: AnnotateResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        if body.schema_version != API_SCHEMA_VERSION {
            return Err(BackendError::Protocol(format!(
                "unsupported schema_version {}",
                body.schema_version
            )));
        }
        Ok(body.text)
    }
}
