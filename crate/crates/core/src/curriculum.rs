//! Staged training pools.
//!
//! Two stage rules exist side by side:
//!
//! - **threshold**: stage `k` keeps points with `l >= l_min + k*ΔL` and
//!   `s >= s_min + k*ΔS`, optionally also capped by `l_max`/`s_max`. Pools
//!   shrink as `k` grows.
//! - **fraction**: stage keeps the top `ceil(f * n)` points of the ranked
//!   dual-indicator pool. Pools grow with `f`.
//!
//! The `scanrefer-default` preset is fraction mode with 25/50/75% at epochs
//! 1–360, 361–720 and 721–1080.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::num::ceil_snapped;
use crate::quality::{filter_diq, PercentileBounds};
use crate::sample::{LossRecord, SampleId};
use crate::scoring::QualityPoint;

pub const SCANREFER_DEFAULT: &str = "scanrefer-default";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum StageRule {
    Threshold {
        #[serde(default = "default_true")]
        apply_upper_bounds: bool,
    },
    Fraction {
        fraction: f64,
    },
}

fn default_true() -> bool {
    true
}

impl StageRule {
    pub fn mode_name(&self) -> &'static str {
        match self {
            StageRule::Threshold { .. } => "threshold",
            StageRule::Fraction { .. } => "fraction",
        }
    }

    fn validate(&self) -> Result<()> {
        if let StageRule::Fraction { fraction } = *self {
            check_fraction(fraction)?;
        }
        Ok(())
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(CoreError::InvalidArgument(alloc::format!(
            "fraction {f} outside (0, 1]"
        )));
    }
    Ok(())
}

/// One curriculum stage; epochs are 1-based and inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub k: usize,
    pub rule: StageRule,
    pub epoch_begin: u32,
    pub epoch_end: u32,
}

impl StageConfig {
    pub fn contains(&self, epoch: u32) -> bool {
        self.epoch_begin <= epoch && epoch <= self.epoch_end
    }
}

/// Contiguous stages covering epochs `1..=total_epochs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    stages: Vec<StageConfig>,
    total_epochs: u32,
}

impl Schedule {
    /// 25% / 50% / 75% fraction stages ending at epochs 360, 720, 1080.
    pub fn scanrefer_default() -> Schedule {
        let frac = |fraction| StageRule::Fraction { fraction };
        build_schedule(1080, &[(frac(0.25), 360), (frac(0.50), 720), (frac(0.75), 1080)])
            .expect("preset schedule is valid")
    }

    pub fn stages(&self) -> &[StageConfig] {
        &self.stages
    }

    pub fn total_epochs(&self) -> u32 {
        self.total_epochs
    }

    pub fn stage(&self, k: usize) -> Result<&StageConfig> {
        self.stages.get(k).ok_or_else(|| {
            CoreError::InvalidArgument(alloc::format!(
                "stage {k} not in schedule of {} stages",
                self.stages.len()
            ))
        })
    }

    pub fn stage_for_epoch(&self, epoch: u32) -> Result<&StageConfig> {
        if epoch == 0 || epoch > self.total_epochs {
            return Err(CoreError::EpochOutOfRange {
                epoch,
                total: self.total_epochs,
            });
        }
        let idx = self.stages.partition_point(|s| s.epoch_end < epoch);
        Ok(&self.stages[idx])
    }
}

/// Builds a schedule from `(rule, epoch_end)` pairs; stage `k` starts right
/// after stage `k - 1` ends.
pub fn build_schedule(total_epochs: u32, stage_specs: &[(StageRule, u32)]) -> Result<Schedule> {
    if total_epochs == 0 {
        return Err(CoreError::InvalidArgument("total_epochs must be positive".into()));
    }
    if stage_specs.is_empty() {
        return Err(CoreError::InvalidArgument("schedule needs at least one stage".into()));
    }
    let mut stages = Vec::with_capacity(stage_specs.len());
    let mut next_begin = 1u32;
    for (k, &(rule, epoch_end)) in stage_specs.iter().enumerate() {
        rule.validate()?;
        if epoch_end < next_begin {
            return Err(CoreError::InvalidArgument(alloc::format!(
                "stage {k} ends at epoch {epoch_end}; epoch ends must be strictly ascending from 1"
            )));
        }
        stages.push(StageConfig {
            k,
            rule,
            epoch_begin: next_begin,
            epoch_end,
        });
        next_begin = epoch_end + 1;
    }
    let last = stages[stages.len() - 1].epoch_end;
    if last != total_epochs {
        return Err(CoreError::InvalidArgument(alloc::format!(
            "last stage ends at {last}, schedule has {total_epochs} epochs"
        )));
    }
    Ok(Schedule {
        stages,
        total_epochs,
    })
}

/// `(s_p, l_p) = (s_min + k ΔS, l_min + k ΔL)`.
pub fn stage_thresholds(b: &PercentileBounds, k: usize, delta_s: f64, delta_l: f64) -> (f64, f64) {
    (b.s_min + k as f64 * delta_s, b.l_min + k as f64 * delta_l)
}

/// Threshold-mode stage pool, order preserved.
pub fn select_stage_threshold(
    points: &[QualityPoint],
    b: &PercentileBounds,
    k: usize,
    delta_s: f64,
    delta_l: f64,
    apply_upper_bounds: bool,
) -> Vec<QualityPoint> {
    let (s_p, l_p) = stage_thresholds(b, k, delta_s, delta_l);
    points
        .iter()
        .filter(|p| {
            let lower = p.caption_loss >= l_p && p.clip_score >= s_p;
            lower && (!apply_upper_bounds || (p.caption_loss <= b.l_max && p.clip_score <= b.s_max))
        })
        .cloned()
        .collect()
}

/// Weights of the combined quality used for fraction-mode ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityRank {
    pub w_s: f64,
    pub w_l: f64,
}

impl Default for QualityRank {
    fn default() -> Self {
        QualityRank { w_s: 0.5, w_l: 0.5 }
    }
}

impl QualityRank {
    pub fn new(w_s: f64, w_l: f64) -> Result<Self> {
        let rank = QualityRank { w_s, w_l };
        rank.validate()?;
        Ok(rank)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.w_s >= 0.0 && self.w_l >= 0.0 && libm::fabs(self.w_s + self.w_l - 1.0) <= 1e-9;
        if !ok {
            return Err(CoreError::InvalidArgument(alloc::format!(
                "rank weights ({}, {}) must be non-negative and sum to 1",
                self.w_s,
                self.w_l
            )));
        }
        Ok(())
    }
}

struct MinMax {
    lo: f64,
    span: f64,
}

impl MinMax {
    fn over(values: impl Iterator<Item = f64>) -> MinMax {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        MinMax { lo, span: hi - lo }
    }

    fn norm(&self, v: f64) -> f64 {
        if self.span > 0.0 {
            (v - self.lo) / self.span
        } else {
            0.5
        }
    }
}

/// Combined quality `w_s * norm(s) + w_l * norm(l)` of each point, with
/// min-max normalization over the input set.
pub fn quality_values(points: &[QualityPoint], r: &QualityRank) -> Result<Vec<f64>> {
    r.validate()?;
    let scores = MinMax::over(points.iter().map(|p| p.clip_score));
    let losses = MinMax::over(points.iter().map(|p| p.caption_loss));
    Ok(points
        .iter()
        .map(|p| r.w_s * scores.norm(p.clip_score) + r.w_l * losses.norm(p.caption_loss))
        .collect())
}

/// Sorts by combined quality, best first; ties go to the smaller sample id.
pub fn rank_quality(points: &[QualityPoint], r: &QualityRank) -> Result<Vec<QualityPoint>> {
    let q = quality_values(points, r)?;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        q[b].total_cmp(&q[a])
            .then_with(|| pa.sample_id.cmp(&pb.sample_id))
            .then_with(|| pb.clip_score.total_cmp(&pa.clip_score))
            .then_with(|| pb.caption_loss.total_cmp(&pa.caption_loss))
    });
    Ok(order.into_iter().map(|i| points[i].clone()).collect())
}

/// Number of points a fraction keeps out of `n`: `ceil(f n)`.
pub fn fraction_size(n: usize, f: f64) -> Result<usize> {
    check_fraction(f)?;
    Ok((ceil_snapped(f * n as f64) as usize).min(n))
}

pub fn select_top_fraction(ranked: &[QualityPoint], f: f64) -> Result<Vec<QualityPoint>> {
    let take = fraction_size(ranked.len(), f)?;
    Ok(ranked[..take].to_vec())
}

/// Keeps, for every scene, the `k` captions with the highest score.
pub fn per_scene_topk(points: &[QualityPoint], k: usize) -> Result<Vec<QualityPoint>> {
    if k == 0 {
        return Err(CoreError::InvalidArgument("per-scene k must be at least 1".into()));
    }
    let mut by_scene: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        by_scene.entry(p.scene_id.as_str()).or_default().push(i);
    }
    let mut keep = alloc::vec![false; points.len()];
    for members in by_scene.values_mut() {
        members.sort_by(|&a, &b| {
            points[b]
                .clip_score
                .total_cmp(&points[a].clip_score)
                .then_with(|| points[a].sample_id.cmp(&points[b].sample_id))
        });
        for &i in members.iter().take(k) {
            keep[i] = true;
        }
    }
    Ok(points
        .iter()
        .zip(keep)
        .filter(|&(_, kept)| kept)
        .map(|(p, _)| p.clone())
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshReport {
    pub updated_losses: usize,
    pub updated_scores: usize,
    /// Update records whose id matched no point.
    pub unmatched: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefreshOutcome {
    pub points: Vec<QualityPoint>,
    pub report: RefreshReport,
}

/// Applies fed-back losses (and optionally scores) to matching points.
///
/// Later updates for the same id win. Bounds are not touched; callers that
/// want fresh bounds recompute them from the returned points.
pub fn refresh(
    points: &[QualityPoint],
    new_losses: &[LossRecord],
    new_scores: Option<&[(SampleId, f64)]>,
) -> Result<RefreshOutcome> {
    let mut losses: BTreeMap<&str, f64> = BTreeMap::new();
    for record in new_losses {
        record.validate()?;
        losses.insert(record.sample_id.as_str(), record.loss);
    }
    let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
    for (id, score) in new_scores.unwrap_or(&[]) {
        if !score.is_finite() {
            return Err(CoreError::Integrity(alloc::format!(
                "score update {score} for {id} is not finite"
            )));
        }
        scores.insert(id.as_str(), *score);
    }

    let known: BTreeMap<&str, ()> = points.iter().map(|p| (p.sample_id.as_str(), ())).collect();
    let mut report = RefreshReport {
        unmatched: new_losses
            .iter()
            .map(|r| r.sample_id.as_str())
            .chain(new_scores.unwrap_or(&[]).iter().map(|(id, _)| id.as_str()))
            .filter(|id| !known.contains_key(id))
            .count(),
        ..RefreshReport::default()
    };

    let mut out = Vec::with_capacity(points.len());
    for p in points {
        let mut p = p.clone();
        if let Some(&loss) = losses.get(p.sample_id.as_str()) {
            p.caption_loss = loss;
            report.updated_losses += 1;
        }
        if let Some(&score) = scores.get(p.sample_id.as_str()) {
            p.clip_score = score;
            report.updated_scores += 1;
        }
        out.push(p);
    }
    Ok(RefreshOutcome { points: out, report })
}

/// How the dual-indicator region is cut into blocks (and how far each
/// threshold stage advances).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSteps {
    Deltas { delta_s: f64, delta_l: f64 },
    Blocks { blocks_s: usize, blocks_l: usize },
}

impl Default for GridSteps {
    fn default() -> Self {
        GridSteps::Blocks {
            blocks_s: 3,
            blocks_l: 3,
        }
    }
}

impl GridSteps {
    pub fn resolve(&self, b: &PercentileBounds) -> Result<(f64, f64)> {
        match *self {
            GridSteps::Deltas { delta_s, delta_l } => Ok((delta_s, delta_l)),
            GridSteps::Blocks { blocks_s, blocks_l } => b.steps_for_blocks(blocks_s, blocks_l),
        }
    }
}

/// Everything needed to turn scored points into per-stage pools.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumPlan {
    pub schedule: Schedule,
    pub steps: GridSteps,
    pub rank: QualityRank,
    pub per_scene_k: Option<usize>,
}

impl CurriculumPlan {
    pub fn new(schedule: Schedule) -> Self {
        CurriculumPlan {
            schedule,
            steps: GridSteps::default(),
            rank: QualityRank::default(),
            per_scene_k: None,
        }
    }

    fn topk(&self, points: Vec<QualityPoint>) -> Result<Vec<QualityPoint>> {
        match self.per_scene_k {
            Some(k) => per_scene_topk(&points, k),
            None => Ok(points),
        }
    }

    /// Dual-indicator pool, reduced per scene, in rank order. Fraction stages
    /// are prefixes of this list.
    pub fn ranked_pool(&self, points: &[QualityPoint], b: &PercentileBounds) -> Result<Vec<QualityPoint>> {
        let pool = self.topk(filter_diq(points, b))?;
        rank_quality(&pool, &self.rank)
    }

    /// Pool of stage `k`.
    pub fn stage_pool(&self, points: &[QualityPoint], b: &PercentileBounds, k: usize) -> Result<Vec<QualityPoint>> {
        let stage = self.schedule.stage(k)?;
        match stage.rule {
            StageRule::Fraction { fraction } => {
                select_top_fraction(&self.ranked_pool(points, b)?, fraction)
            }
            StageRule::Threshold { apply_upper_bounds } => {
                let (delta_s, delta_l) = self.steps.resolve(b)?;
                let pool = select_stage_threshold(points, b, stage.k, delta_s, delta_l, apply_upper_bounds);
                self.topk(pool)
            }
        }
    }

    /// Pools of all stages, sharing one ranking.
    pub fn all_pools(&self, points: &[QualityPoint], b: &PercentileBounds) -> Result<Vec<Vec<QualityPoint>>> {
        let mut ranked: Option<Vec<QualityPoint>> = None;
        let mut pools = Vec::with_capacity(self.schedule.stages().len());
        for stage in self.schedule.stages() {
            let pool = match stage.rule {
                StageRule::Fraction { fraction } => {
                    if ranked.is_none() {
                        ranked = Some(self.ranked_pool(points, b)?);
                    }
                    select_top_fraction(ranked.as_deref().unwrap_or(&[]), fraction)?
                }
                StageRule::Threshold { .. } => self.stage_pool(points, b, stage.k)?,
            };
            pools.push(pool);
        }
        Ok(pools)
    }
}
