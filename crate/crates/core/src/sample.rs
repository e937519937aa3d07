//! Sample identity, raw records, embedding tables and the dataset join.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::borrow::Borrow;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Maximum encoded length of an identifier, in bytes.
pub const MAX_ID_BYTES: usize = 256;

/// Allowed deviation from unit L2 norm for rows of a normalized table.
pub const NORM_TOLERANCE: f64 = 1e-4;

/// Identifier of a caption sample (also used for scene ids).
///
/// Non-empty, at most 256 bytes of UTF-8, no control characters. Ordering is
/// byte-wise, which is the tie-break order used everywhere in the crate.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SampleId(String);

impl SampleId {
    pub fn new(value: impl Into<String>) -> Result<Self> {
        let value = value.into();
        if value.is_empty() {
            return Err(CoreError::InvalidId {
                id: value,
                reason: "empty",
            });
        }
        if value.len() > MAX_ID_BYTES {
            return Err(CoreError::InvalidId {
                id: value,
                reason: "longer than 256 bytes",
            });
        }
        if value.chars().any(char::is_control) {
            return Err(CoreError::InvalidId {
                id: value,
                reason: "contains a control character",
            });
        }
        Ok(SampleId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SampleId {
    type Error = CoreError;

    fn try_from(value: String) -> Result<Self> {
        SampleId::new(value)
    }
}

impl TryFrom<&str> for SampleId {
    type Error = CoreError;

    fn try_from(value: &str) -> Result<Self> {
        SampleId::new(value)
    }
}

impl From<SampleId> for String {
    fn from(id: SampleId) -> String {
        id.0
    }
}

impl Borrow<str> for SampleId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for SampleId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&self.0, f)
    }
}

/// One line of the caption index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub sample_id: SampleId,
    pub scene_id: SampleId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_ids: Option<Vec<u32>>,
}

/// Externally measured caption loss, in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub sample_id: SampleId,
    pub loss: f64,
}

impl LossRecord {
    pub fn new(sample_id: SampleId, loss: f64) -> Result<Self> {
        let record = LossRecord { sample_id, loss };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        validate_loss(self.loss)
    }
}

pub(crate) fn validate_loss(loss: f64) -> Result<()> {
    if !loss.is_finite() {
        return Err(CoreError::Integrity(alloc::format!("loss {loss} is not finite")));
    }
    if loss < 0.0 {
        return Err(CoreError::Integrity(alloc::format!("loss {loss} is negative")));
    }
    Ok(())
}

/// Dense `count × dim` f32 matrix with one identifier per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<SampleId>,
    rows: Vec<f32>,
    normalized: bool,
    index: BTreeMap<SampleId, usize>,
}

impl EmbeddingTable {
    /// Builds a table, checking shape, finiteness, id uniqueness and, when
    /// `normalized` is set, unit norm of every row.
    pub fn new(dim: usize, ids: Vec<SampleId>, rows: Vec<f32>, normalized: bool) -> Result<Self> {
        if dim == 0 {
            return Err(CoreError::InvalidArgument("embedding dim must be positive".into()));
        }
        if rows.len() != ids.len() * dim {
            return Err(CoreError::DimensionMismatch {
                left: rows.len(),
                right: ids.len() * dim,
            });
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("embedding rows"));
        }
        let mut index = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(CoreError::Integrity(alloc::format!("duplicate embedding id {id}")));
            }
        }
        let table = EmbeddingTable {
            dim,
            ids,
            rows,
            normalized,
            index,
        };
        if normalized {
            for i in 0..table.count() {
                let norm = libm::sqrt(table.row(i).iter().map(|&x| x as f64 * x as f64).sum());
                if libm::fabs(norm - 1.0) > NORM_TOLERANCE {
                    return Err(CoreError::Integrity(alloc::format!(
                        "row {} ({}) has norm {norm}, table is flagged normalized",
                        i,
                        table.ids[i]
                    )));
                }
            }
        }
        Ok(table)
    }

    pub fn empty(dim: usize) -> Result<Self> {
        EmbeddingTable::new(dim, Vec::new(), Vec::new(), false)
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    /// Row-major payload.
    pub fn rows(&self) -> &[f32] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }
}

/// A caption resolved against both embedding tables and the loss log.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinedSample {
    pub sample_id: SampleId,
    pub scene_id: SampleId,
    /// Row of the scene embedding in the scene table.
    pub scene_row: usize,
    /// Row of the caption embedding in the text table.
    pub text_row: usize,
    pub caption_loss: f64,
}

/// Per-cause drop counts of [`join_dataset`]. Each dropped caption is
/// counted under exactly one cause, checked in field order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinReport {
    pub joined: usize,
    pub duplicate_sample_id: usize,
    pub missing_text_embedding: usize,
    pub missing_scene_embedding: usize,
    pub missing_loss: usize,
}

impl JoinReport {
    pub fn dropped(&self) -> usize {
        self.duplicate_sample_id
            + self.missing_text_embedding
            + self.missing_scene_embedding
            + self.missing_loss
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinOutcome {
    pub samples: Vec<JoinedSample>,
    pub report: JoinReport,
}

/// Joins captions with their embeddings and losses, in caption order.
///
/// Later loss records override earlier ones for the same id. Captions that
/// cannot be resolved are dropped and counted, never treated as errors.
pub fn join_dataset(
    captions: &[CaptionRecord],
    scene_emb: &EmbeddingTable,
    text_emb: &EmbeddingTable,
    losses: &[LossRecord],
) -> JoinOutcome {
    let mut latest: BTreeMap<&str, f64> = BTreeMap::new();
    for record in losses {
        latest.insert(record.sample_id.as_str(), record.loss);
    }

    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut report = JoinReport::default();
    let mut samples = Vec::with_capacity(captions.len());
    for caption in captions {
        if !seen.insert(caption.sample_id.as_str()) {
            report.duplicate_sample_id += 1;
            continue;
        }
        let Some(text_row) = text_emb.position(caption.sample_id.as_str()) else {
            report.missing_text_embedding += 1;
            continue;
        };
        let Some(scene_row) = scene_emb.position(caption.scene_id.as_str()) else {
            report.missing_scene_embedding += 1;
            continue;
        };
        let Some(&loss) = latest.get(caption.sample_id.as_str()) else {
            report.missing_loss += 1;
            continue;
        };
        samples.push(JoinedSample {
            sample_id: caption.sample_id.clone(),
            scene_id: caption.scene_id.clone(),
            scene_row,
            text_row,
            caption_loss: loss,
        });
    }
    report.joined = samples.len();
    JoinOutcome { samples, report }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn id(s: &str) -> SampleId {
        SampleId::new(s).unwrap()
    }

    fn caption(sample: &str, scene: &str) -> CaptionRecord {
        CaptionRecord {
            sample_id: id(sample),
            scene_id: id(scene),
            text: None,
            token_ids: None,
        }
    }

    fn table(ids: &[&str], dim: usize) -> EmbeddingTable {
        let mut rows = Vec::new();
        for i in 0..ids.len() {
            for d in 0..dim {
                rows.push(if d == i % dim { 1.0 } else { 0.0 });
            }
        }
        EmbeddingTable::new(dim, ids.iter().map(|s| id(s)).collect(), rows, true).unwrap()
    }

    #[test]
    fn sample_id_rules() {
        assert!(SampleId::new("scene0000_00/3").is_ok());
        assert!(SampleId::new("").is_err());
        assert!(SampleId::new("a\nb").is_err());
        assert!(SampleId::new("x".repeat(256)).is_ok());
        assert!(SampleId::new("x".repeat(257)).is_err());
    }

    #[test]
    fn table_invariants() {
        let ids = vec![id("a"), id("b")];
        assert!(EmbeddingTable::new(2, ids.clone(), vec![1.0, 0.0, 0.0], false).is_err());
        assert!(EmbeddingTable::new(2, ids.clone(), vec![1.0, 0.0, f32::NAN, 0.0], false).is_err());
        assert!(EmbeddingTable::new(2, vec![id("a"), id("a")], vec![1.0; 4], false).is_err());
        // Norm sqrt(2) is rejected only under the normalized flag.
        assert!(EmbeddingTable::new(2, ids.clone(), vec![1.0, 1.0, 0.0, 1.0], false).is_ok());
        assert!(EmbeddingTable::new(2, ids.clone(), vec![1.0, 1.0, 0.0, 1.0], true).is_err());
        assert!(EmbeddingTable::new(2, ids, vec![0.0, 0.0, 0.0, 1.0], true).is_err());
        let empty = EmbeddingTable::empty(512).unwrap();
        assert_eq!((empty.count(), empty.dim()), (0, 512));
    }

    #[test]
    fn join_all_resolvable() {
        let captions = [caption("a", "s0"), caption("b", "s0"), caption("c", "s1")];
        let scenes = table(&["s0", "s1"], 2);
        let texts = table(&["a", "b", "c"], 3);
        let losses = [
            LossRecord::new(id("a"), 1.0).unwrap(),
            LossRecord::new(id("b"), 2.0).unwrap(),
            LossRecord::new(id("c"), 3.0).unwrap(),
        ];
        let out = join_dataset(&captions, &scenes, &texts, &losses);
        assert_eq!(out.samples.len(), 3);
        assert_eq!(out.report.dropped(), 0);
        assert_eq!(out.samples[2].scene_row, 1);
        assert_eq!(out.samples[1].text_row, 1);
    }

    #[test]
    fn join_drops_and_last_wins() {
        let captions = [
            caption("a", "s0"),
            caption("b", "nowhere"),
            caption("c", "s0"),
            caption("d", "s0"),
            caption("a", "s0"),
        ];
        let scenes = table(&["s0"], 2);
        let texts = table(&["a", "b", "c"], 3);
        let losses = [
            LossRecord::new(id("a"), 2.0).unwrap(),
            LossRecord::new(id("b"), 1.0).unwrap(),
            LossRecord::new(id("a"), 3.0).unwrap(),
        ];
        let out = join_dataset(&captions, &scenes, &texts, &losses);
        assert_eq!(out.samples.len(), 1);
        assert_eq!(out.samples[0].caption_loss, 3.0);
        assert_eq!(
            out.report,
            JoinReport {
                joined: 1,
                duplicate_sample_id: 1,
                missing_text_embedding: 1,
                missing_scene_embedding: 1,
                missing_loss: 1,
            }
        );
        assert_eq!(out.samples.len() + out.report.dropped(), captions.len());
    }

    #[test]
    fn loss_record_rejects_negative_and_nan() {
        assert!(LossRecord::new(id("a"), -1.0).is_err());
        assert!(LossRecord::new(id("a"), f64::NAN).is_err());
        assert!(LossRecord::new(id("a"), 0.0).is_ok());
    }
}
