use serde::{Deserialize, Serialize};

use super::{AestheticScores, Axis, RolloutInput, ScoreError, Scorer};
use crate::midi::Score;
use crate::render::{render_cropped, RendererChoice};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RendererRow {
    pub renderer: String,
    /// Mean over the cells that rendered and scored successfully.
    pub mean: Option<AestheticScores>,
    pub scored: usize,
    /// `(sample index, error)` for every failed cell.
    pub failures: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RendererTable {
    pub samples: usize,
    pub rows: Vec<RendererRow>,
}

impl RendererTable {
    /// Axes as rows and renderers as columns; renderers without a single
    /// successful cell show `failed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis");
        for r in &self.rows {
            out.push(',');
            out.push_str(&r.renderer);
        }
        out.push('\n');
        for axis in Axis::ALL {
            out.push_str(axis.code());
            for r in &self.rows {
                out.push(',');
                match &r.mean {
                    Some(m) => out.push_str(&format!("{:.3}", m.get(axis))),
                    None => out.push_str("failed"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Renders every sample with every renderer, scores the cropped audio and
/// averages per renderer.
pub fn compare_renderers(
    samples: &[Score],
    renderers: &[RendererChoice],
    scorer: &dyn Scorer,
    sample_rate: u32,
    crop_seconds: f64,
) -> Result<RendererTable, ScoreError> {
    if samples.is_empty() || renderers.is_empty() {
        return Err(ScoreError::Config("need at least one sample and one renderer".into()));
    }
    let rows = renderers
        .iter()
        .map(|choice| {
            let mut ok = Vec::new();
            let mut failures = Vec::new();
            for (i, score) in samples.iter().enumerate() {
                let cell = render_cropped(score, choice, sample_rate, crop_seconds)
                    .map_err(|e| e.to_string())
                    .and_then(|audio| scorer.score(&RolloutInput { score, audio: &audio }).map_err(|e| e.to_string()));
                match cell {
                    Ok(s) => ok.push(s),
                    Err(e) => failures.push((i, e)),
                }
            }
            RendererRow {
                renderer: choice.label(),
                mean: AestheticScores::mean(&ok),
                scored: ok.len(),
                failures,
            }
        })
        .collect();
    Ok(RendererTable {
        samples: samples.len(),
        rows,
    })
}
