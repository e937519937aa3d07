//! End-to-end runs: inputs to points, bounds, grid and stage manifests.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dcscene_core::{
    block_stats, compute_bounds, gen_synth_pairs, grid_partition, join_dataset, score_all, BlockStat,
    JoinReport, Manifest, PercentileBounds, QualityGrid, QualityPoint, SampleId, SynthConfig, SynthData,
};

use crate::config::{Paths, PipelineConfig};
use crate::dcse::{read_embedding_table, write_embedding_table};
use crate::error::{Error, Result};
use crate::jsonl::{read_caption_index, read_loss_log, read_points, write_caption_index, write_loss_log, write_points};
use crate::manifest_file::write_manifest;

pub const POINTS_FILE: &str = "points.jsonl";
pub const BOUNDS_FILE: &str = "bounds.json";
pub const REPORT_FILE: &str = "report.json";

pub fn stage_file_name(k: usize) -> String {
    format!("stage_{k}.manifest")
}

/// Scored points plus what the join dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub points: Vec<QualityPoint>,
    pub join: JoinReport,
}

/// Reads the four configured inputs, joins them and scores every pair.
pub fn score_inputs(cfg: &PipelineConfig) -> Result<Scored> {
    let scene = Paths::require(&cfg.paths.scene_embeddings, "scene_embeddings")?;
    let text = Paths::require(&cfg.paths.text_embeddings, "text_embeddings")?;
    let captions = Paths::require(&cfg.paths.captions, "captions")?;
    let losses = Paths::require(&cfg.paths.losses, "losses")?;

    let scene = read_embedding_table(&scene)?;
    let text = read_embedding_table(&text)?;
    let captions = read_caption_index(&captions)?;
    let losses = read_loss_log(&losses)?;
    let outcome = join_dataset(&captions, &scene, &text, &losses);
    let report = outcome.report;
    if report.dropped() > 0 {
        log::warn!(
            "join dropped {} captions: {} duplicate ids, {} without text embedding, {} without scene embedding, {} without loss",
            report.dropped(),
            report.duplicate_sample_id,
            report.missing_text_embedding,
            report.missing_scene_embedding,
            report.missing_loss
        );
    }
    let points = score_all(&scene, &text, &outcome.samples, cfg.policy)?;
    Ok(Scored { points, join: report })
}

/// Points from `explicit`, else `<out>/points.jsonl`, else scored from the inputs.
pub fn load_points(cfg: &PipelineConfig, explicit: Option<&Path>) -> Result<Vec<QualityPoint>> {
    if let Some(path) = explicit {
        return read_points(path);
    }
    let cached = cfg.paths.output(POINTS_FILE);
    if cached.exists() {
        return read_points(&cached);
    }
    Ok(score_inputs(cfg)?.points)
}

pub fn read_bounds(path: &Path) -> Result<PercentileBounds> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bounds: PercentileBounds = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    bounds
        .validate()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(bounds)
}

pub fn write_bounds(path: &Path, bounds: &PercentileBounds) -> Result<()> {
    write_json(path, bounds)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes to JSON");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Bounds from `explicit`, else `<out>/bounds.json`, else computed from `points`.
pub fn load_bounds(cfg: &PipelineConfig, points: &[QualityPoint], explicit: Option<&Path>) -> Result<PercentileBounds> {
    if let Some(path) = explicit {
        return read_bounds(path);
    }
    let cached = cfg.paths.output(BOUNDS_FILE);
    if !cfg.recompute_bounds && cached.exists() {
        return read_bounds(&cached);
    }
    Ok(compute_bounds(points, cfg.pct_lo, cfg.pct_hi)?)
}

/// Builds the grid the plan's steps describe.
pub fn plan_grid(cfg: &PipelineConfig, points: &[QualityPoint], bounds: &PercentileBounds) -> Result<QualityGrid> {
    let (delta_s, delta_l) = cfg.plan.steps.resolve(bounds)?;
    Ok(grid_partition(points, bounds, delta_s, delta_l)?)
}

/// Shuffled manifest of stage `k`.
pub fn stage_manifest(
    cfg: &PipelineConfig,
    points: &[QualityPoint],
    bounds: &PercentileBounds,
    k: usize,
) -> Result<(Manifest, Vec<QualityPoint>)> {
    let stage = cfg.plan.schedule.stage(k)?;
    let pool = cfg.plan.stage_pool(points, bounds, k)?;
    let manifest = Manifest::from_pool(&pool, k, stage.rule.mode_name(), cfg.seed)?;
    Ok((manifest, pool))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub k: usize,
    pub mode: String,
    pub epoch_begin: u32,
    pub epoch_end: u32,
    pub pool_size: usize,
    /// Planted-corrupt members, known only for synthetic data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrupted: Option<usize>,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub join: Option<JoinReport>,
    pub bounds: PercentileBounds,
    pub diq_size: usize,
    pub grid: Vec<BlockStat>,
    pub stages: Vec<StageSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub points: Vec<QualityPoint>,
    pub bounds: PercentileBounds,
    pub grid: QualityGrid,
    pub pools: Vec<Vec<QualityPoint>>,
    pub manifests: Vec<Manifest>,
    pub report: RunReport,
}

/// Bounds, grid, every stage pool and its manifest.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    points: Vec<QualityPoint>,
    join: Option<JoinReport>,
    corrupted: Option<&BTreeSet<SampleId>>,
) -> Result<PipelineRun> {
    let bounds = compute_bounds(&points, cfg.pct_lo, cfg.pct_hi)?;
    let grid = plan_grid(cfg, &points, &bounds)?;
    let stats = block_stats(&grid, &points)?;
    let pools = cfg.plan.all_pools(&points, &bounds)?;

    let mut manifests = Vec::with_capacity(pools.len());
    let mut stages = Vec::with_capacity(pools.len());
    for (stage, pool) in cfg.plan.schedule.stages().iter().zip(&pools) {
        let manifest = Manifest::from_pool(pool, stage.k, stage.rule.mode_name(), cfg.seed)?;
        stages.push(StageSummary {
            k: stage.k,
            mode: manifest.mode.clone(),
            epoch_begin: stage.epoch_begin,
            epoch_end: stage.epoch_end,
            pool_size: pool.len(),
            corrupted: corrupted.map(|set| pool.iter().filter(|p| set.contains(&p.sample_id)).count()),
            digest: format!("{:016x}", manifest.pool_digest),
        });
        manifests.push(manifest);
    }

    let report = RunReport {
        points: points.len(),
        join,
        bounds,
        diq_size: grid.member_count(),
        grid: stats,
        stages,
    };
    Ok(PipelineRun {
        points,
        bounds,
        grid,
        pools,
        manifests,
        report,
    })
}

/// Generates synthetic data and runs the pipeline on it in memory.
pub fn run_toy_pipeline(synth: &SynthConfig, cfg: &PipelineConfig) -> Result<(SynthData, PipelineRun)> {
    let data = gen_synth_pairs(synth)?;
    let losses = data.losses()?;
    let outcome = join_dataset(&data.captions, &data.scene_table, &data.text_table, &losses);
    let points = score_all(&data.scene_table, &data.text_table, &outcome.samples, cfg.policy)?;
    let corrupted: BTreeSet<SampleId> = data.corrupted_ids().cloned().collect();
    let run = run_pipeline(cfg, points, Some(outcome.report), Some(&corrupted))?;
    Ok((data, run))
}

pub const SCENE_FILE: &str = "scene.dcse";
pub const TEXT_FILE: &str = "text.dcse";
pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const LOSSES_FILE: &str = "losses.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

/// Writes synthetic inputs plus a config that points at them.
pub fn write_synth_inputs(data: &SynthData, cfg: &PipelineConfig, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_embedding_table(&data.scene_table, &dir.join(SCENE_FILE))?;
    write_embedding_table(&data.text_table, &dir.join(TEXT_FILE))?;
    write_caption_index(&dir.join(CAPTIONS_FILE), &data.captions)?;
    write_loss_log(&dir.join(LOSSES_FILE), &data.losses()?)?;

    let mut file = cfg.to_file()?;
    file.paths.scene_embeddings = Some(SCENE_FILE.into());
    file.paths.text_embeddings = Some(TEXT_FILE.into());
    file.paths.captions = Some(CAPTIONS_FILE.into());
    file.paths.losses = Some(LOSSES_FILE.into());
    file.paths.output_dir = Some(".".into());
    let path = dir.join(CONFIG_FILE);
    let text = toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

impl PipelineRun {
    /// Writes points, bounds, the run report and one manifest per stage.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_points(&dir.join(POINTS_FILE), &self.points)?;
        write_bounds(&dir.join(BOUNDS_FILE), &self.bounds)?;
        write_json(&dir.join(REPORT_FILE), &self.report)?;
        for manifest in &self.manifests {
            write_manifest(manifest, &dir.join(stage_file_name(manifest.stage_k)))?;
        }
        Ok(())
    }
}
