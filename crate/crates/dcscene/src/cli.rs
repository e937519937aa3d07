//! The `dc-scene` command line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use dcscene_core::curriculum::SCANREFER_DEFAULT;
use dcscene_core::{
    block_stats, compute_bounds, filter_dil, filter_dis, filter_diq, refresh, LossRecord, SampleId, ScorePolicy, Separation, SynthConfig,
};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::jsonl::{read_updates, write_points};
use crate::manifest_file::{read_manifest, write_manifest};
use crate::pipeline::{
    load_bounds, load_points, plan_grid, run_toy_pipeline, score_inputs, stage_file_name, stage_manifest,
    write_bounds, write_synth_inputs, BOUNDS_FILE, POINTS_FILE,
};

#[derive(Debug, Parser)]
#[command(name = "dc-scene", version, about = "Data-centric curation for scene/caption training sets")]
pub struct Cli {
    /// Config file (TOML, or JSON by extension) or the preset name.
    #[arg(long, global = true, default_value = SCANREFER_DEFAULT)]
    pub config: String,

    #[command(flatten)]
    pub overrides: Overrides,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Raw,
    Cosine,
}

impl From<PolicyArg> for ScorePolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Raw => ScorePolicy::Raw,
            PolicyArg::Cosine => ScorePolicy::Cosine,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub scene_embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    pub text_embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    pub captions: Option<PathBuf>,
    #[arg(long, global = true)]
    pub losses: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub policy: Option<PolicyArg>,
    #[arg(long, global = true)]
    pub pct_lo: Option<f64>,
    #[arg(long, global = true)]
    pub pct_hi: Option<f64>,
    #[arg(long, global = true)]
    pub per_scene_k: Option<usize>,
    /// Manifest shuffle seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        let paths = &mut cfg.paths;
        for (slot, value) in [
            (&mut paths.scene_embeddings, &self.scene_embeddings),
            (&mut paths.text_embeddings, &self.text_embeddings),
            (&mut paths.captions, &self.captions),
            (&mut paths.losses, &self.losses),
        ] {
            if value.is_some() {
                slot.clone_from(value);
            }
        }
        if let Some(dir) = &self.output_dir {
            paths.output_dir.clone_from(dir);
        }
        if let Some(p) = self.policy {
            cfg.policy = p.into();
        }
        if let Some(v) = self.pct_lo {
            cfg.pct_lo = v;
        }
        if let Some(v) = self.pct_hi {
            cfg.pct_hi = v;
        }
        if let Some(k) = self.per_scene_k {
            cfg.plan.per_scene_k = Some(k);
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterKind {
    Dis,
    Dil,
    Diq,
}

/// Where quality points and bounds come from.
#[derive(Debug, Clone, Default, Args)]
pub struct Sources {
    /// Quality points; defaults to <output-dir>/points.jsonl, else scores the inputs.
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Percentile bounds; defaults to <output-dir>/bounds.json, else computed.
    #[arg(long)]
    pub bounds: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Join the inputs and write one quality point per caption.
    Score {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute percentile bounds of the quality points.
    Bounds {
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep points inside the similarity, loss or dual-indicator band.
    Filter {
        #[arg(long, value_enum, default_value = "diq")]
        kind: FilterKind,
        #[command(flatten)]
        sources: Sources,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-block counts and means of the quality grid as CSV.
    GridReport {
        #[command(flatten)]
        sources: Sources,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the shuffled manifest of one curriculum stage.
    Stage {
        /// Training epoch (1-based); selects the stage covering it.
        #[arg(long, conflicts_with = "k", required_unless_present = "k")]
        epoch: Option<u32>,
        /// Stage index (0-based).
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        sources: Sources,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a manifest against the recomputed stage pool.
    ManifestVerify {
        #[arg(long)]
        manifest: PathBuf,
        /// Stage to compare against; defaults to the manifest header.
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        sources: Sources,
    },
    /// Apply fed-back losses or scores to the quality points.
    Refresh {
        /// JSON lines of {"sample_id", "loss"?, "clip_score"?}.
        #[arg(long)]
        updates: PathBuf,
        #[arg(long)]
        points: Option<PathBuf>,
        /// Also rewrite <output-dir>/bounds.json from the refreshed points.
        #[arg(long)]
        recompute_bounds: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset and run the whole pipeline on it.
    Synth {
        #[arg(long, default_value_t = 200)]
        scenes: usize,
        #[arg(long, default_value_t = 5)]
        captions_per_scene: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 0.2)]
        corrupt_fraction: f64,
        /// Let clean and corrupted pairs overlap in quality.
        #[arg(long)]
        overlapping: bool,
        /// Generator seed.
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
    },
}

pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    cli.overrides.apply(&mut cfg)?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn out_path(cfg: &PipelineConfig, out: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
    match out {
        Some(path) => Ok(path.clone()),
        None => {
            ensure_dir(&cfg.paths.output_dir)?;
            Ok(cfg.paths.output(default))
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn grid_csv(stats: &[dcscene_core::BlockStat]) -> String {
    let mut out = String::from("i_s,i_l,count,mean_score,mean_loss\n");
    for b in stats {
        writeln!(out, "{},{},{},{},{}", b.i_s, b.i_l, b.count, fmt_opt(b.mean_score), fmt_opt(b.mean_loss)).unwrap();
    }
    out
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Score { out } => {
            let scored = score_inputs(&cfg)?;
            let path = out_path(&cfg, out, POINTS_FILE)?;
            write_points(&path, &scored.points)?;
            println!(
                "scored {} pairs ({} dropped) -> {}",
                scored.points.len(),
                scored.join.dropped(),
                path.display()
            );
        }
        Command::Bounds { points, out } => {
            let points = load_points(&cfg, points.as_deref())?;
            let bounds = compute_bounds(&points, cfg.pct_lo, cfg.pct_hi)?;
            let path = out_path(&cfg, out, BOUNDS_FILE)?;
            write_bounds(&path, &bounds)?;
            println!(
                "s in [{}, {}], l in [{}, {}] -> {}",
                bounds.s_min,
                bounds.s_max,
                bounds.l_min,
                bounds.l_max,
                path.display()
            );
        }
        Command::Filter { kind, sources, out } => {
            let points = load_points(&cfg, sources.points.as_deref())?;
            let bounds = load_bounds(&cfg, &points, sources.bounds.as_deref())?;
            let kept = match kind {
                FilterKind::Dis => filter_dis(&points, &bounds),
                FilterKind::Dil => filter_dil(&points, &bounds),
                FilterKind::Diq => filter_diq(&points, &bounds),
            };
            let path = out_path(&cfg, out, "filtered.jsonl")?;
            write_points(&path, &kept)?;
            println!("kept {} of {} -> {}", kept.len(), points.len(), path.display());
        }
        Command::GridReport { sources, out } => {
            let points = load_points(&cfg, sources.points.as_deref())?;
            let bounds = load_bounds(&cfg, &points, sources.bounds.as_deref())?;
            let grid = plan_grid(&cfg, &points, &bounds)?;
            let stats = block_stats(&grid, &points)?;
            let path = out_path(&cfg, out, "grid.csv")?;
            std::fs::write(&path, grid_csv(&stats)).map_err(|e| Error::io(&path, e))?;
            println!(
                "{}x{} blocks, {} points, {} outside -> {}",
                grid.n_s,
                grid.n_l,
                grid.member_count(),
                grid.excluded,
                path.display()
            );
        }
        Command::Stage { epoch, k, sources, out } => {
            let k = match (epoch, k) {
                (_, Some(k)) => *k,
                (Some(epoch), None) => cfg.plan.schedule.stage_for_epoch(*epoch)?.k,
                (None, None) => return Err(Error::Usage("stage needs --epoch or --k".into())),
            };
            let stage = *cfg.plan.schedule.stage(k)?;
            let points = load_points(&cfg, sources.points.as_deref())?;
            let bounds = load_bounds(&cfg, &points, sources.bounds.as_deref())?;
            let (manifest, _) = stage_manifest(&cfg, &points, &bounds, k)?;
            let path = out_path(&cfg, out, &stage_file_name(k))?;
            write_manifest(&manifest, &path)?;
            println!(
                "stage {k} ({}, epochs {}-{}): {} samples -> {}",
                manifest.mode,
                stage.epoch_begin,
                stage.epoch_end,
                manifest.entries.len(),
                path.display()
            );
        }
        Command::ManifestVerify { manifest, k, sources } => {
            let m = read_manifest(manifest)?;
            let k = k.unwrap_or(m.stage_k);
            let points = load_points(&cfg, sources.points.as_deref())?;
            let bounds = load_bounds(&cfg, &points, sources.bounds.as_deref())?;
            let pool = cfg.plan.stage_pool(&points, &bounds, k)?;
            let check = m.check(&pool);
            if !check.passed() {
                let mut msg = format!("{} against stage {k}: {}", manifest.display(), check.failures().join(", "));
                if !check.missing.is_empty() || !check.unexpected.is_empty() || !check.duplicates.is_empty() {
                    write!(
                        msg,
                        " ({} missing, {} unexpected, {} duplicated)",
                        check.missing.len(),
                        check.unexpected.len(),
                        check.duplicates.len()
                    )
                    .unwrap();
                }
                return Err(Error::Verification(msg));
            }
            println!("{}: ok, {} entries match stage {k}", manifest.display(), m.entries.len());
        }
        Command::Refresh {
            updates,
            points,
            recompute_bounds,
            out,
        } => {
            let updates = read_updates(updates)?;
            let current = load_points(&cfg, points.as_deref())?;
            let mut losses = Vec::new();
            let mut scores: Vec<(SampleId, f64)> = Vec::new();
            for u in &updates {
                if let Some(loss) = u.loss {
                    losses.push(LossRecord::new(u.sample_id.clone(), loss)?);
                }
                if let Some(score) = u.clip_score {
                    scores.push((u.sample_id.clone(), score));
                }
            }
            let scores = (!scores.is_empty()).then_some(scores.as_slice());
            let outcome = refresh(&current, &losses, scores)?;
            if outcome.report.unmatched > 0 {
                log::warn!("{} update records matched no sample", outcome.report.unmatched);
            }
            let path = out_path(&cfg, out, POINTS_FILE)?;
            write_points(&path, &outcome.points)?;
            if *recompute_bounds || cfg.recompute_bounds {
                let bounds = compute_bounds(&outcome.points, cfg.pct_lo, cfg.pct_hi)?;
                ensure_dir(&cfg.paths.output_dir)?;
                write_bounds(&cfg.paths.output(BOUNDS_FILE), &bounds)?;
            }
            println!(
                "refreshed {} losses, {} scores ({} unmatched) -> {}",
                outcome.report.updated_losses,
                outcome.report.updated_scores,
                outcome.report.unmatched,
                path.display()
            );
        }
        Command::Synth {
            scenes,
            captions_per_scene,
            dim,
            corrupt_fraction,
            overlapping,
            data_seed,
        } => {
            let synth = SynthConfig {
                n_scenes: *scenes,
                captions_per_scene: *captions_per_scene,
                dim: *dim,
                corrupt_fraction: *corrupt_fraction,
                separation: if *overlapping { Separation::Overlapping } else { Separation::Separable },
                seed: *data_seed,
            };
            let (data, run) = run_toy_pipeline(&synth, &cfg)?;
            let dir = &cfg.paths.output_dir;
            write_synth_inputs(&data, &cfg, dir)?;
            run.write_outputs(dir)?;
            println!("{} captions, {} corrupted -> {}", data.captions.len(), synth.n_corrupted(), dir.display());
            for s in &run.report.stages {
                println!(
                    "stage {} ({}, epochs {}-{}): {} samples, {} corrupted",
                    s.k,
                    s.mode,
                    s.epoch_begin,
                    s.epoch_end,
                    s.pool_size,
                    s.corrupted.unwrap_or(0)
                );
            }
        }
    }
    Ok(())
}
