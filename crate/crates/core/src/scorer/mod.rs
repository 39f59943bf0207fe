//! Aesthetic rewards for rendered rollouts.
//!
//! [`RemoteScorer`] talks to an external rating service over HTTP;
//! [`ProxyScorer`] is a deterministic offline stand-in built from symbolic
//! features and an audio silence gate.

mod compare;
mod mock;
mod remote;

use serde::{Deserialize, Serialize};

pub use compare::{compare_renderers, RendererRow, RendererTable};
pub use mock::{MockReply, MockRequest, MockScorerServer};
pub use remote::{parse_scores, RemoteConfig, RemoteScorer};

use crate::features::extract_features;
use crate::midi::Score;
use crate::render::AudioClip;

pub const RATING_MIN: f64 = 0.0;
pub const RATING_MAX: f64 = 10.0;
/// Audio below this RMS level counts as silence for the proxy.
pub const SILENCE_RMS: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("scorer timed out after {elapsed_ms} ms ({attempts} attempts)")]
    Timeout { elapsed_ms: u64, attempts: usize },
    #[error("scorer returned HTTP {status} after {attempts} attempts: {body}")]
    Status { status: u16, attempts: usize, body: String },
    #[error("scorer transport error after {attempts} attempts: {message}")]
    Transport { message: String, attempts: usize },
    #[error("malformed scorer response: {0}")]
    Malformed(String),
    #[error("rating out of range: {0}")]
    OutOfRange(String),
    #[error("scorer configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    #[default]
    #[serde(alias = "CE")]
    ContentEnjoyment,
    #[serde(alias = "CU")]
    ContentUsefulness,
    #[serde(alias = "PC")]
    ProductionComplexity,
    #[serde(alias = "PQ")]
    ProductionQuality,
}

impl Axis {
    pub const ALL: [Axis; 4] = [
        Axis::ContentEnjoyment,
        Axis::ContentUsefulness,
        Axis::ProductionComplexity,
        Axis::ProductionQuality,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Axis::ContentEnjoyment => "CE",
            Axis::ContentUsefulness => "CU",
            Axis::ProductionComplexity => "PC",
            Axis::ProductionQuality => "PQ",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Axis::ALL
            .into_iter()
            .find(|a| {
                a.code().eq_ignore_ascii_case(s)
                    || serde_json::to_value(a).ok().and_then(|v| v.as_str().map(|n| n == s)).unwrap_or(false)
            })
            .ok_or_else(|| format!("unknown axis {s:?}; expected CE, CU, PC or PQ"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AestheticScores {
    #[serde(rename = "CE")]
    pub content_enjoyment: f64,
    #[serde(rename = "CU")]
    pub content_usefulness: f64,
    #[serde(rename = "PC")]
    pub production_complexity: f64,
    #[serde(rename = "PQ")]
    pub production_quality: f64,
}

impl AestheticScores {
    pub fn uniform(v: f64) -> Self {
        AestheticScores {
            content_enjoyment: v,
            content_usefulness: v,
            production_complexity: v,
            production_quality: v,
        }
    }

    pub fn get(&self, axis: Axis) -> f64 {
        match axis {
            Axis::ContentEnjoyment => self.content_enjoyment,
            Axis::ContentUsefulness => self.content_usefulness,
            Axis::ProductionComplexity => self.production_complexity,
            Axis::ProductionQuality => self.production_quality,
        }
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        for axis in Axis::ALL {
            let v = self.get(axis);
            if !v.is_finite() || !(RATING_MIN..=RATING_MAX).contains(&v) {
                return Err(ScoreError::OutOfRange(format!("{} = {v}", axis.code())));
            }
        }
        Ok(())
    }

    /// Axis-wise arithmetic mean; `None` for an empty slice.
    pub fn mean(all: &[AestheticScores]) -> Option<AestheticScores> {
        if all.is_empty() {
            return None;
        }
        let n = all.len() as f64;
        let avg = |f: fn(&AestheticScores) -> f64| all.iter().map(f).sum::<f64>() / n;
        Some(AestheticScores {
            content_enjoyment: avg(|s| s.content_enjoyment),
            content_usefulness: avg(|s| s.content_usefulness),
            production_complexity: avg(|s| s.production_complexity),
            production_quality: avg(|s| s.production_quality),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    Proxy,
    Remote(RemoteConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RewardSpec {
    #[serde(default)]
    pub axis: Axis,
    #[serde(default)]
    pub scorer: ScorerKind,
}

impl RewardSpec {
    pub fn build_scorer(&self) -> Result<Box<dyn Scorer>, ScoreError> {
        Ok(match &self.scorer {
            ScorerKind::Proxy => Box::new(ProxyScorer),
            ScorerKind::Remote(cfg) => Box::new(RemoteScorer::new(cfg.clone())?),
        })
    }
}

/// A symbolic score with its rendered (and cropped) audio.
#[derive(Debug, Clone, Copy)]
pub struct RolloutInput<'a> {
    pub score: &'a Score,
    pub audio: &'a AudioClip,
}

pub trait Scorer: Send + Sync {
    fn score(&self, input: &RolloutInput<'_>) -> Result<AestheticScores, ScoreError>;

    /// Upper bound on concurrent `score` calls.
    fn max_in_flight(&self) -> usize {
        usize::MAX
    }
}

/// Projects the configured axis.
pub fn reward_of(scores: &AestheticScores, spec: &RewardSpec) -> f64 {
    scores.get(spec.axis)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ProxyScorer;

impl Scorer for ProxyScorer {
    fn score(&self, input: &RolloutInput<'_>) -> Result<AestheticScores, ScoreError> {
        Ok(score_proxy(input))
    }
}

/// Returns the same ratings for every input.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub AestheticScores);

impl Scorer for ConstantScorer {
    fn score(&self, _: &RolloutInput<'_>) -> Result<AestheticScores, ScoreError> {
        Ok(self.0)
    }
}

/// The five normalized proxy inputs `f1..f5` of a score.
pub fn proxy_inputs(score: &Score) -> [f64; 5] {
    let f = extract_features(score);
    [
        (f.n_notes as f64 / 70.0).min(1.0),
        f.polyphony_rate,
        1.0 - f.empty_beat_rate,
        (f.pitch_range as f64 / 48.0).min(1.0),
        (f.velocity_range as f64 / 40.0).min(1.0),
    ]
}

/// Proxy content enjoyment from the normalized inputs.
pub fn proxy_enjoyment(f: [f64; 5]) -> f64 {
    (1.0 + 9.0 * (0.30 * f[0] + 0.20 * f[1] + 0.20 * f[2] + 0.15 * f[3] + 0.15 * f[4])).clamp(1.0, 10.0)
}

pub fn score_proxy(input: &RolloutInput<'_>) -> AestheticScores {
    if input.audio.rms() < SILENCE_RMS {
        return AestheticScores::uniform(1.0);
    }
    let f = proxy_inputs(input.score);
    let ce = proxy_enjoyment(f);
    AestheticScores {
        content_enjoyment: ce,
        content_usefulness: (0.5 + ce * 0.9).clamp(RATING_MIN, RATING_MAX),
        production_complexity: 1.0 + 2.0 * f[1],
        production_quality: 7.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::Note;
    use crate::render::render_builtin;

    #[test]
    fn silence_gets_ones() {
        let s = Score::empty(480);
        let audio = AudioClip::silent(22_050, 0);
        assert_eq!(score_proxy(&RolloutInput { score: &s, audio: &audio }), AestheticScores::uniform(1.0));
    }

    #[test]
    fn saturated_inputs_give_ten() {
        assert_eq!(proxy_enjoyment([1.0; 5]), 10.0);
        assert_eq!(proxy_enjoyment([0.0; 5]), 1.0);
    }

    #[test]
    fn sounding_score_rated_by_features() {
        let mut s = Score::empty(480);
        s.notes.push(Note::new(60, 100, 0, 480).unwrap());
        s.notes.push(Note::new(64, 60, 0, 480).unwrap());
        let audio = render_builtin(&s, 22_050).unwrap();
        let out = score_proxy(&RolloutInput { score: &s, audio: &audio });
        let expect = 1.0 + 9.0 * (0.30 * 2.0 / 70.0 + 0.20 + 0.20 + 0.15 * 4.0 / 48.0 + 0.15);
        assert!((out.content_enjoyment - expect).abs() < 1e-12);
        assert_eq!(out.production_complexity, 3.0);
        out.validate().unwrap();
    }

    #[test]
    fn reward_projects_axis() {
        let silence = AestheticScores {
            content_enjoyment: 3.24,
            content_usefulness: 6.45,
            production_complexity: 1.7,
            production_quality: 6.74,
        };
        let mut spec = RewardSpec::default();
        assert_eq!(reward_of(&silence, &spec), 3.24);
        spec.axis = Axis::ProductionQuality;
        assert_eq!(reward_of(&silence, &spec), 6.74);
    }

    #[test]
    fn axis_parsing() {
        assert_eq!("CE".parse::<Axis>().unwrap(), Axis::ContentEnjoyment);
        assert_eq!("production-quality".parse::<Axis>().unwrap(), Axis::ProductionQuality);
        assert!("XX".parse::<Axis>().is_err());
        let a: Axis = serde_json::from_str("\"PC\"").unwrap();
        assert_eq!(a, Axis::ProductionComplexity);
    }
}
