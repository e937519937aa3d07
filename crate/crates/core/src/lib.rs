//! Data-centric curation for scene/caption training sets.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only pure
//! algorithms over in-memory values:
//!
//! - [`sample`]: sample identifiers, caption and loss records, embedding tables
//!   and the caption/embedding/loss join.
//! - [`scoring`]: scene/caption alignment scores (dot product or cosine).
//! - [`quality`]: percentile bounds, the intermediate-similarity,
//!   intermediate-loss and dual-indicator filters, and the uniform quality grid.
//! - [`curriculum`]: threshold and fraction stage selection, ranking,
//!   per-scene top-k, epoch schedules and the loss feedback refresh.
//! - [`manifest`]: SplitMix64, seeded Fisher–Yates and pool digests.
//! - [`synth`]: synthetic populations with planted corruption and a bigram
//!   caption-loss model.
//!
//! File formats, the pipeline runner and the command line live in the `dcscene`
//! crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod curriculum;
pub mod error;
pub mod manifest;
mod num;
pub mod quality;
pub mod sample;
pub mod scoring;
pub mod synth;

pub use curriculum::{
    build_schedule, per_scene_topk, rank_quality, refresh, select_stage_threshold,
    select_top_fraction, stage_thresholds, CurriculumPlan, GridSteps, QualityRank, RefreshOutcome,
    RefreshReport, Schedule, StageConfig, StageRule,
};
pub use error::{CoreError, Result};
pub use manifest::{pool_digest, shuffle_deterministic, Manifest, ManifestCheck, SplitMix64};
pub use quality::{
    block_stats, compute_bounds, filter_dil, filter_dis, filter_diq, grid_partition, percentile,
    BlockStat, PercentileBounds, QualityGrid,
};
pub use sample::{
    join_dataset, CaptionRecord, EmbeddingTable, JoinOutcome, JoinReport, JoinedSample, LossRecord,
    SampleId,
};
pub use scoring::{clip_score, l2_normalize, score_all, QualityPoint, ScorePolicy};

pub use synth::{gen_synth_pairs, toy_caption_loss, Separation, SynthConfig, SynthData, ToyLm};
