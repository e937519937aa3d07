//! Scene/caption alignment scores.
//!
//! The score of a pair is the dot product of its scene and caption
//! embeddings. Under [`ScorePolicy::Cosine`] both vectors are L2-normalized
//! first. All accumulation happens in f64.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::sample::{validate_loss, EmbeddingTable, JoinedSample, SampleId};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorePolicy {
    /// Bare dot product; for exporters that already normalize.
    Raw,
    #[default]
    Cosine,
}

/// One sample's position in (alignment score, caption loss) space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityPoint {
    pub sample_id: SampleId,
    pub scene_id: SampleId,
    pub clip_score: f64,
    pub caption_loss: f64,
}

impl QualityPoint {
    pub fn validate(&self) -> Result<()> {
        if !self.clip_score.is_finite() {
            return Err(CoreError::Integrity(alloc::format!(
                "clip score of {} is not finite",
                self.sample_id
            )));
        }
        validate_loss(self.caption_loss)
    }
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if norm == 0.0 || !norm.is_finite() {
        return Err(CoreError::Degenerate("cannot normalize a zero or non-finite vector"));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Alignment score of a single pair. This is the reference path: plain
/// sequential accumulation, explicit normalization.
pub fn clip_score(scene_vec: &[f32], text_vec: &[f32], policy: ScorePolicy) -> Result<f64> {
    if scene_vec.len() != text_vec.len() {
        return Err(CoreError::DimensionMismatch {
            left: scene_vec.len(),
            right: text_vec.len(),
        });
    }
    let scene: Vec<f64> = scene_vec.iter().map(|&x| x as f64).collect();
    let text: Vec<f64> = text_vec.iter().map(|&x| x as f64).collect();
    if scene.iter().chain(&text).any(|x| !x.is_finite()) {
        return Err(CoreError::NonFinite("score input vector"));
    }
    let (scene, text) = match policy {
        ScorePolicy::Raw => (scene, text),
        ScorePolicy::Cosine => (l2_normalize(&scene)?, l2_normalize(&text)?),
    };
    Ok(scene.iter().zip(&text).map(|(a, b)| a * b).sum())
}

const LANES: usize = 8;

/// Dot product with eight independent f64 accumulators; vectorizes well.
#[inline]
fn dot_lanes(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let a_chunks = a.chunks_exact(LANES);
    let b_chunks = b.chunks_exact(LANES);
    let (a_tail, b_tail) = (a_chunks.remainder(), b_chunks.remainder());
    for (ca, cb) in a_chunks.zip(b_chunks) {
        for lane in 0..LANES {
            acc[lane] += ca[lane] as f64 * cb[lane] as f64;
        }
    }
    let mut tail = 0.0;
    for (x, y) in a_tail.iter().zip(b_tail) {
        tail += *x as f64 * *y as f64;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn row_norms(table: &EmbeddingTable) -> Vec<f64> {
    (0..table.count())
        .map(|i| {
            let row = table.row(i);
            libm::sqrt(dot_lanes(row, row))
        })
        .collect()
}

/// Scores every joined sample, preserving order.
///
/// Cosine scores are computed as `dot / (|a| |b|)` with row norms computed
/// once per table, so results agree with [`clip_score`] to rounding only.
pub fn score_all(
    scene_emb: &EmbeddingTable,
    text_emb: &EmbeddingTable,
    samples: &[JoinedSample],
    policy: ScorePolicy,
) -> Result<Vec<QualityPoint>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    if scene_emb.dim() != text_emb.dim() {
        return Err(CoreError::DimensionMismatch {
            left: scene_emb.dim(),
            right: text_emb.dim(),
        });
    }
    let norms = match policy {
        ScorePolicy::Raw => None,
        ScorePolicy::Cosine => Some((row_norms(scene_emb), row_norms(text_emb))),
    };

    let mut out = Vec::with_capacity(samples.len());
    for sample in samples {
        if sample.scene_row >= scene_emb.count() {
            return Err(CoreError::RowOutOfRange {
                row: sample.scene_row,
                count: scene_emb.count(),
            });
        }
        if sample.text_row >= text_emb.count() {
            return Err(CoreError::RowOutOfRange {
                row: sample.text_row,
                count: text_emb.count(),
            });
        }
        validate_loss(sample.caption_loss)?;
        let dot = dot_lanes(scene_emb.row(sample.scene_row), text_emb.row(sample.text_row));
        let clip_score = match &norms {
            None => dot,
            Some((scene_norms, text_norms)) => {
                let denom = scene_norms[sample.scene_row] * text_norms[sample.text_row];
                if denom == 0.0 {
                    return Err(CoreError::Degenerate("zero embedding under cosine policy"));
                }
                dot / denom
            }
        };
        out.push(QualityPoint {
            sample_id: sample.sample_id.clone(),
            scene_id: sample.scene_id.clone(),
            clip_score,
            caption_loss: sample.caption_loss,
        });
    }
    Ok(out)
}
