//! JSON-lines files: caption index, loss log, quality points and updates.
//!
//! Blank lines are skipped; line numbers in errors are 1-based and count
//! blank lines too.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use dcscene_core::{CaptionRecord, LossRecord, QualityPoint, SampleId};

use crate::error::{Error, LineError, Result};

/// Parses every non-blank line as `Raw` and converts it with `convert`.
fn read_lines<Raw, T>(path: &Path, convert: impl Fn(Raw) -> Result<T, LineError>) -> Result<Vec<T>>
where
    Raw: DeserializeOwned,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |source| Error::Line {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        };
        let raw: Raw = serde_json::from_str(&line).map_err(|e| at(LineError::Malformed(e.to_string())))?;
        out.push(convert(raw).map_err(at)?);
    }
    Ok(out)
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("records serialize to JSON");
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn sample_id(raw: String) -> Result<SampleId, LineError> {
    SampleId::new(raw).map_err(|e| LineError::Integrity(e.to_string()))
}

fn integrity(e: dcscene_core::CoreError) -> LineError {
    LineError::Integrity(e.to_string())
}

#[derive(Deserialize)]
struct RawLoss {
    sample_id: String,
    loss: f64,
}

/// Loss records in file order; duplicates are kept.
pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    read_lines(path, |raw: RawLoss| {
        LossRecord::new(sample_id(raw.sample_id)?, raw.loss).map_err(integrity)
    })
}

pub fn write_loss_log(path: &Path, records: &[LossRecord]) -> Result<()> {
    write_lines(path, records)
}

#[derive(Deserialize)]
struct RawCaption {
    sample_id: String,
    scene_id: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    token_ids: Option<Vec<u32>>,
}

pub fn read_caption_index(path: &Path) -> Result<Vec<CaptionRecord>> {
    read_lines(path, |raw: RawCaption| {
        Ok(CaptionRecord {
            sample_id: sample_id(raw.sample_id)?,
            scene_id: sample_id(raw.scene_id)?,
            text: raw.text,
            token_ids: raw.token_ids,
        })
    })
}

pub fn write_caption_index(path: &Path, records: &[CaptionRecord]) -> Result<()> {
    write_lines(path, records)
}

#[derive(Deserialize)]
struct RawPoint {
    sample_id: String,
    scene_id: String,
    clip_score: f64,
    caption_loss: f64,
}

pub fn read_points(path: &Path) -> Result<Vec<QualityPoint>> {
    read_lines(path, |raw: RawPoint| {
        let point = QualityPoint {
            sample_id: sample_id(raw.sample_id)?,
            scene_id: sample_id(raw.scene_id)?,
            clip_score: raw.clip_score,
            caption_loss: raw.caption_loss,
        };
        point.validate().map_err(integrity)?;
        Ok(point)
    })
}

pub fn write_points(path: &Path, points: &[QualityPoint]) -> Result<()> {
    write_lines(path, points)
}

/// One fed-back measurement; either field may be absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Update {
    pub sample_id: SampleId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_score: Option<f64>,
}

#[derive(Deserialize)]
struct RawUpdate {
    sample_id: String,
    #[serde(default)]
    loss: Option<f64>,
    #[serde(default)]
    clip_score: Option<f64>,
}

pub fn read_updates(path: &Path) -> Result<Vec<Update>> {
    read_lines(path, |raw: RawUpdate| {
        let id = sample_id(raw.sample_id)?;
        if raw.loss.is_none() && raw.clip_score.is_none() {
            return Err(LineError::Malformed("update has neither loss nor clip_score".into()));
        }
        if let Some(loss) = raw.loss {
            LossRecord::new(id.clone(), loss).map_err(integrity)?;
        }
        if let Some(score) = raw.clip_score {
            if !score.is_finite() {
                return Err(LineError::Integrity(format!("clip_score {score} is not finite")));
            }
        }
        Ok(Update {
            sample_id: id,
            loss: raw.loss,
            clip_score: raw.clip_score,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_with(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loss_log_examples() {
        let f = file_with("{\"sample_id\":\"a\",\"loss\":2.5}\n");
        let records = read_loss_log(f.path()).unwrap();
        assert_eq!(records, [LossRecord::new(SampleId::new("a").unwrap(), 2.5).unwrap()]);

        assert!(read_loss_log(file_with("").path()).unwrap().is_empty());

        let err = read_loss_log(file_with("{\"sample_id\":\"a\",\"loss\":-1.0}\n").path()).unwrap_err();
        assert!(matches!(err, Error::Line { line: 1, source: LineError::Integrity(_), .. }), "{err}");

        let err = read_loss_log(file_with("{\"sample_id\":\"a\",\"loss\":1}\n\n{oops\n").path()).unwrap_err();
        assert!(matches!(err, Error::Line { line: 3, source: LineError::Malformed(_), .. }), "{err}");
    }

    #[test]
    fn duplicates_are_kept_in_order() {
        let f = file_with("{\"sample_id\":\"a\",\"loss\":2.0}\n{\"sample_id\":\"a\",\"loss\":3.0}\n");
        let losses: Vec<f64> = read_loss_log(f.path()).unwrap().iter().map(|r| r.loss).collect();
        assert_eq!(losses, [2.0, 3.0]);
    }

    #[test]
    fn caption_index_optional_fields() {
        let f = file_with(
            "{\"sample_id\":\"a\",\"scene_id\":\"s\"}\n{\"sample_id\":\"b\",\"scene_id\":\"s\",\"text\":\"a chair\",\"token_ids\":[1,2]}\n",
        );
        let captions = read_caption_index(f.path()).unwrap();
        assert_eq!(captions[0].text, None);
        assert_eq!(captions[1].token_ids.as_deref(), Some(&[1, 2][..]));
        let err = read_caption_index(file_with("{\"sample_id\":\"\",\"scene_id\":\"s\"}\n").path()).unwrap_err();
        assert!(matches!(err, Error::Line { line: 1, .. }));
    }

    #[test]
    fn points_round_trip_exactly() {
        let points = vec![QualityPoint {
            sample_id: SampleId::new("x").unwrap(),
            scene_id: SampleId::new("s").unwrap(),
            clip_score: 0.1 + 0.2,
            caption_loss: 1.0 / 3.0,
        }];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_points(f.path(), &points).unwrap();
        assert_eq!(read_points(f.path()).unwrap(), points);
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert!(text.starts_with("{\"sample_id\":\"x\",\"scene_id\":\"s\",\"clip_score\":"));
    }

    #[test]
    fn updates_need_a_value() {
        let f = file_with("{\"sample_id\":\"a\"}\n");
        assert!(matches!(read_updates(f.path()).unwrap_err(), Error::Line { line: 1, source: LineError::Malformed(_), .. }));
        let f = file_with("{\"sample_id\":\"a\",\"clip_score\":0.3}\n");
        assert_eq!(read_updates(f.path()).unwrap()[0].clip_score, Some(0.3));
    }

    #[test]
    fn missing_file_is_missing_input() {
        let err = read_loss_log(Path::new("/nonexistent/losses.jsonl")).unwrap_err();
        assert!(matches!(err, Error::MissingInput(_)));
    }
}
