//! HTTP client for an external rating service.
//!
//! Wire convention: `POST {base_url}/score` with the WAV bytes as body
//! (`Content-Type: audio/wav`), answered by a JSON object with numeric
//! `CE`, `CU`, `PC` and `PQ` fields.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{AestheticScores, RolloutInput, ScoreError, Scorer};
use crate::render::write_wav;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub base_url: String,
    /// Per-attempt timeout. The whole call, retries and backoff included,
    /// never exceeds `timeout_ms * (max_retries + 1)`.
    pub timeout_ms: u64,
    pub max_retries: usize,
    pub max_in_flight: usize,
    /// First backoff delay; doubles after every failed attempt.
    pub backoff_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bearer_token: Option<String>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "http://127.0.0.1:8080".into(),
            timeout_ms: 30_000,
            max_retries: 2,
            max_in_flight: 4,
            backoff_ms: 250,
            bearer_token: None,
        }
    }
}

pub struct RemoteScorer {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteScorer").field("config", &self.config).finish()
    }
}

enum Attempt {
    Done(Result<AestheticScores, ScoreError>),
    Transient(ScoreError),
}

impl RemoteScorer {
    pub fn new(config: RemoteConfig) -> Result<Self, ScoreError> {
        if !(config.base_url.starts_with("http://") || config.base_url.starts_with("https://")) {
            return Err(ScoreError::Config(format!("base_url {:?} is not an http(s) URL", config.base_url)));
        }
        if config.timeout_ms == 0 || config.max_in_flight == 0 {
            return Err(ScoreError::Config("timeout_ms and max_in_flight must be positive".into()));
        }
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Ok(RemoteScorer { config, agent })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/score", self.config.base_url.trim_end_matches('/'))
    }

    /// Scores one WAV payload, returning the ratings and the number of HTTP
    /// attempts made.
    pub fn score_wav(&self, wav: &[u8]) -> Result<(AestheticScores, usize), ScoreError> {
        let cfg = &self.config;
        let start = Instant::now();
        let timeout = Duration::from_millis(cfg.timeout_ms);
        let deadline = start + timeout * (cfg.max_retries as u32 + 1);
        let attempts_allowed = cfg.max_retries + 1;
        let mut last = None;
        for attempt in 1..=attempts_allowed {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                break;
            }
            match self.attempt(wav, timeout.min(remaining), attempt) {
                Attempt::Done(r) => return r.map(|s| (s, attempt)),
                Attempt::Transient(e) => {
                    log::warn!("scorer attempt {attempt}/{attempts_allowed} failed: {e}");
                    last = Some(e);
                }
            }
            if attempt < attempts_allowed {
                let backoff = Duration::from_millis(cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16)));
                std::thread::sleep(backoff.min(deadline.saturating_duration_since(Instant::now())));
            }
        }
        Err(last.unwrap_or(ScoreError::Timeout {
            elapsed_ms: start.elapsed().as_millis() as u64,
            attempts: 0,
        }))
    }

    fn attempt(&self, wav: &[u8], timeout: Duration, attempt: usize) -> Attempt {
        let started = Instant::now();
        let mut req = self.agent.post(self.endpoint()).header("Content-Type", "audio/wav");
        if let Some(token) = &self.config.bearer_token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let result = req.config().timeout_global(Some(timeout)).build().send(wav);
        let mut resp = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Transient(ScoreError::Timeout {
                    elapsed_ms: started.elapsed().as_millis() as u64,
                    attempts: attempt,
                })
            }
            Err(e) => {
                return Attempt::Transient(ScoreError::Transport {
                    message: e.to_string(),
                    attempts: attempt,
                })
            }
        };
        let status = resp.status().as_u16();
        let body = match resp.body_mut().read_to_string() {
            Ok(b) => b,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Transient(ScoreError::Timeout {
                    elapsed_ms: started.elapsed().as_millis() as u64,
                    attempts: attempt,
                })
            }
            Err(e) => {
                return Attempt::Transient(ScoreError::Transport {
                    message: e.to_string(),
                    attempts: attempt,
                })
            }
        };
        if (200..300).contains(&status) {
            return Attempt::Done(parse_scores(&body));
        }
        let err = ScoreError::Status {
            status,
            attempts: attempt,
            body: body.chars().take(200).collect(),
        };
        if status >= 500 || status == 429 || status == 408 {
            Attempt::Transient(err)
        } else {
            Attempt::Done(Err(err))
        }
    }
}

/// Parses and range-checks a four-axis rating object.
pub fn parse_scores(body: &str) -> Result<AestheticScores, ScoreError> {
    let scores: AestheticScores = serde_json::from_str(body).map_err(|e| ScoreError::Malformed(e.to_string()))?;
    scores.validate()?;
    Ok(scores)
}

impl Scorer for RemoteScorer {
    fn score(&self, input: &RolloutInput<'_>) -> Result<AestheticScores, ScoreError> {
        let (scores, attempts) = self.score_wav(&write_wav(input.audio))?;
        log::debug!("remote score after {attempts} attempt(s): {scores:?}");
        Ok(scores)
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight
    }
}
