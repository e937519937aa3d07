//! Pipeline configuration files (TOML, or JSON when the file ends in `.json`).
//!
//! ```toml
//! [paths]
//! scene_embeddings = "scene.dcse"
//! text_embeddings = "text.dcse"
//! captions = "captions.jsonl"
//! losses = "losses.jsonl"
//! output_dir = "out"
//!
//! [scoring]
//! policy = "cosine"          # or "raw"
//!
//! [quality]
//! pct_lo = 5.0
//! pct_hi = 95.0
//! blocks_s = 3               # or delta_s / delta_l
//! blocks_l = 3
//!
//! [curriculum]
//! preset = "scanrefer-default"
//! mode = "fraction"          # or "threshold"
//! epoch_ends = [360, 720, 1080]
//! fractions = [0.25, 0.5, 0.75]
//! apply_upper_bounds = true  # threshold mode only
//! w_s = 0.5
//! w_l = 0.5
//! per_scene_k = 2
//! seed = 0
//! recompute_bounds = false
//! ```
//!
//! Relative paths resolve against the directory of the config file. The
//! literal `scanrefer-default` may be passed instead of a file path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dcscene_core::curriculum::SCANREFER_DEFAULT;
use dcscene_core::quality::{DEFAULT_PCT_HI, DEFAULT_PCT_LO};
use dcscene_core::{build_schedule, CurriculumPlan, GridSteps, QualityRank, Schedule, ScorePolicy, StageRule};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub scoring: ScoringSection,
    #[serde(default)]
    pub quality: QualitySection,
    #[serde(default)]
    pub curriculum: CurriculumSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene_embeddings: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_embeddings: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub captions: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub losses: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringSection {
    #[serde(default)]
    pub policy: ScorePolicy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualitySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pct_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pct_hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks_s: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks_l: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageMode {
    Fraction,
    Threshold,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<StageMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_epochs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epoch_ends: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fractions: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub apply_upper_bounds: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_scene_k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recompute_bounds: Option<bool>,
}

/// Input files; any may be absent until a command needs it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub scene_embeddings: Option<PathBuf>,
    pub text_embeddings: Option<PathBuf>,
    pub captions: Option<PathBuf>,
    pub losses: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Paths {
    /// Path of a required input that exists on disk.
    pub fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        let path = path
            .as_ref()
            .ok_or_else(|| Error::Usage(format!("no path configured for {what}")))?;
        if !path.exists() {
            return Err(Error::MissingInput(path.clone()));
        }
        Ok(path.clone())
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub policy: ScorePolicy,
    pub pct_lo: f64,
    pub pct_hi: f64,
    pub plan: CurriculumPlan,
    pub seed: u64,
    pub recompute_bounds: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths {
                output_dir: PathBuf::from("."),
                ..Paths::default()
            },
            policy: ScorePolicy::Cosine,
            pct_lo: DEFAULT_PCT_LO,
            pct_hi: DEFAULT_PCT_HI,
            plan: CurriculumPlan::new(Schedule::scanrefer_default()),
            seed: 0,
            recompute_bounds: false,
        }
    }
}

fn preset(name: &str) -> Result<Schedule> {
    match name {
        SCANREFER_DEFAULT => Ok(Schedule::scanrefer_default()),
        other => Err(Error::Config(format!("unknown preset {other:?}"))),
    }
}

fn schedule_from(section: &CurriculumSection) -> Result<Schedule> {
    let Some(mode) = section.mode else {
        if section.epoch_ends.is_some() || section.fractions.is_some() {
            return Err(Error::Config("curriculum.mode is required with epoch_ends/fractions".into()));
        }
        return preset(section.preset.as_deref().unwrap_or(SCANREFER_DEFAULT));
    };
    let ends = section
        .epoch_ends
        .as_ref()
        .ok_or_else(|| Error::Config("curriculum.epoch_ends is required".into()))?;
    let rules: Vec<StageRule> = match mode {
        StageMode::Fraction => {
            let fractions = section
                .fractions
                .as_ref()
                .ok_or_else(|| Error::Config("fraction mode needs curriculum.fractions".into()))?;
            if fractions.len() != ends.len() {
                return Err(Error::Config(format!(
                    "{} fractions for {} epoch_ends",
                    fractions.len(),
                    ends.len()
                )));
            }
            fractions.iter().map(|&fraction| StageRule::Fraction { fraction }).collect()
        }
        StageMode::Threshold => {
            let apply_upper_bounds = section.apply_upper_bounds.unwrap_or(true);
            vec![StageRule::Threshold { apply_upper_bounds }; ends.len()]
        }
    };
    let total = section
        .total_epochs
        .or_else(|| ends.last().copied())
        .ok_or_else(|| Error::Config("curriculum.epoch_ends is empty".into()))?;
    let specs: Vec<(StageRule, u32)> = rules.into_iter().zip(ends.iter().copied()).collect();
    Ok(build_schedule(total, &specs)?)
}

fn steps_from(q: &QualitySection) -> Result<GridSteps> {
    match (q.delta_s, q.delta_l, q.blocks_s, q.blocks_l) {
        (None, None, None, None) => Ok(GridSteps::default()),
        (Some(delta_s), Some(delta_l), None, None) => Ok(GridSteps::Deltas { delta_s, delta_l }),
        (None, None, Some(blocks_s), Some(blocks_l)) => Ok(GridSteps::Blocks { blocks_s, blocks_l }),
        _ => Err(Error::Config(
            "quality needs both delta_s and delta_l, or both blocks_s and blocks_l".into(),
        )),
    }
}

fn resolve_path(base: &Path, p: &Option<PathBuf>) -> Option<PathBuf> {
    p.as_ref().map(|p| {
        if p.is_absolute() {
            p.clone()
        } else if p == Path::new(".") {
            base.to_path_buf()
        } else {
            base.join(p)
        }
    })
}

impl PipelineConfig {
    pub fn from_file_struct(file: &ConfigFile, base: &Path) -> Result<Self> {
        let c = &file.curriculum;
        let rank = QualityRank {
            w_s: c.w_s.unwrap_or_else(|| c.w_l.map_or(0.5, |w| 1.0 - w)),
            w_l: c.w_l.unwrap_or_else(|| c.w_s.map_or(0.5, |w| 1.0 - w)),
        };
        rank.validate()?;
        let plan = CurriculumPlan {
            schedule: schedule_from(c)?,
            steps: steps_from(&file.quality)?,
            rank,
            per_scene_k: c.per_scene_k,
        };
        let config = PipelineConfig {
            paths: Paths {
                scene_embeddings: resolve_path(base, &file.paths.scene_embeddings),
                text_embeddings: resolve_path(base, &file.paths.text_embeddings),
                captions: resolve_path(base, &file.paths.captions),
                losses: resolve_path(base, &file.paths.losses),
                output_dir: resolve_path(base, &file.paths.output_dir).unwrap_or_else(|| base.to_path_buf()),
            },
            policy: file.scoring.policy,
            pct_lo: file.quality.pct_lo.unwrap_or(DEFAULT_PCT_LO),
            pct_hi: file.quality.pct_hi.unwrap_or(DEFAULT_PCT_HI),
            plan,
            seed: c.seed.unwrap_or(0),
            recompute_bounds: c.recompute_bounds.unwrap_or(false),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.pct_lo) || !(0.0..=100.0).contains(&self.pct_hi) || self.pct_lo >= self.pct_hi {
            return Err(Error::Config(format!(
                "percentile ranks ({}, {}) must satisfy 0 <= lo < hi <= 100",
                self.pct_lo, self.pct_hi
            )));
        }
        if self.plan.per_scene_k == Some(0) {
            return Err(Error::Config("per_scene_k must be at least 1".into()));
        }
        self.plan.rank.validate()?;
        Ok(())
    }

    /// File form of these settings. Paths are left empty for the caller.
    pub fn to_file(&self) -> Result<ConfigFile> {
        let stages = self.plan.schedule.stages();
        let ends: Vec<u32> = stages.iter().map(|s| s.epoch_end).collect();
        let fractions: Option<Vec<f64>> = stages
            .iter()
            .map(|s| match s.rule {
                StageRule::Fraction { fraction } => Some(fraction),
                StageRule::Threshold { .. } => None,
            })
            .collect();
        let upper: Option<Vec<bool>> = stages
            .iter()
            .map(|s| match s.rule {
                StageRule::Threshold { apply_upper_bounds } => Some(apply_upper_bounds),
                StageRule::Fraction { .. } => None,
            })
            .collect();
        let (mode, apply_upper_bounds) = match (&fractions, &upper) {
            (Some(_), _) => (StageMode::Fraction, None),
            (None, Some(flags)) if flags.windows(2).all(|w| w[0] == w[1]) => {
                (StageMode::Threshold, flags.first().copied())
            }
            _ => return Err(Error::Config("mixed stage rules cannot be written to a config file".into())),
        };
        let (delta_s, delta_l, blocks_s, blocks_l) = match self.plan.steps {
            GridSteps::Deltas { delta_s, delta_l } => (Some(delta_s), Some(delta_l), None, None),
            GridSteps::Blocks { blocks_s, blocks_l } => (None, None, Some(blocks_s), Some(blocks_l)),
        };
        Ok(ConfigFile {
            paths: PathsSection::default(),
            scoring: ScoringSection { policy: self.policy },
            quality: QualitySection {
                pct_lo: Some(self.pct_lo),
                pct_hi: Some(self.pct_hi),
                delta_s,
                delta_l,
                blocks_s,
                blocks_l,
            },
            curriculum: CurriculumSection {
                preset: None,
                mode: Some(mode),
                total_epochs: Some(self.plan.schedule.total_epochs()),
                epoch_ends: Some(ends),
                fractions,
                apply_upper_bounds,
                w_s: Some(self.plan.rank.w_s),
                w_l: Some(self.plan.rank.w_l),
                per_scene_k: self.plan.per_scene_k,
                seed: Some(self.seed),
                recompute_bounds: Some(self.recompute_bounds),
            },
        })
    }

    pub fn parse(text: &str, json: bool, base: &Path) -> Result<Self> {
        let file: ConfigFile = if json {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        PipelineConfig::from_file_struct(&file, base)
    }

    /// Loads a config file, or the built-in preset when `arg` names it.
    pub fn load(arg: &str) -> Result<Self> {
        if arg == SCANREFER_DEFAULT {
            return Ok(PipelineConfig::default());
        }
        let path = Path::new(arg);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        let json = path.extension().is_some_and(|e| e == "json");
        PipelineConfig::parse(&text, json, base)
    }
}
