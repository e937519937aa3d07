//! Percentile bounds, the three quality filters and the uniform quality grid.
//!
//! A point is of intermediate similarity when `s_min <= clip_score <= s_max`,
//! of intermediate loss when `l_min <= caption_loss <= l_max`, and in the
//! dual-indicator region when both hold. All intervals are closed.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::num::ceil_snapped;
use crate::sample::SampleId;
use crate::scoring::QualityPoint;

pub const DEFAULT_PCT_LO: f64 = 5.0;
pub const DEFAULT_PCT_HI: f64 = 95.0;

/// Upper limit on `n_s * n_l`; block reports enumerate every block.
pub const MAX_GRID_BLOCKS: usize = 1 << 22;

/// Linear-interpolation percentile on `(n - 1)` spacing.
///
/// With sorted values `v`, `h = (n - 1) * p / 100` and the result is
/// `v[floor(h)] + (h - floor(h)) * (v[floor(h) + 1] - v[floor(h)])`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    let mut sorted = checked_copy(values)?;
    sorted.sort_unstable_by(f64::total_cmp);
    percentile_sorted(&sorted, p)
}

fn checked_copy(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(CoreError::Empty("percentile of no values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("percentile input"));
    }
    Ok(values.to_vec())
}

fn check_rank(p: f64) -> Result<()> {
    if !(0.0..=100.0).contains(&p) {
        return Err(CoreError::InvalidArgument(alloc::format!(
            "percentile rank {p} outside [0, 100]"
        )));
    }
    Ok(())
}

/// Percentile of already sorted, finite, non-empty values.
pub(crate) fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    check_rank(p)?;
    let n = sorted.len();
    let h = (n - 1) as f64 * p / 100.0;
    let lo = libm::floor(h);
    let i = lo as usize;
    if i + 1 >= n {
        return Ok(sorted[n - 1]);
    }
    Ok(sorted[i] + (h - lo) * (sorted[i + 1] - sorted[i]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileBounds {
    pub s_min: f64,
    pub s_max: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub pct_lo: f64,
    pub pct_hi: f64,
}

impl PercentileBounds {
    pub fn new(s_min: f64, s_max: f64, l_min: f64, l_max: f64, pct_lo: f64, pct_hi: f64) -> Result<Self> {
        let bounds = PercentileBounds {
            s_min,
            s_max,
            l_min,
            l_max,
            pct_lo,
            pct_hi,
        };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn validate(&self) -> Result<()> {
        check_ranks(self.pct_lo, self.pct_hi)?;
        let all = [self.s_min, self.s_max, self.l_min, self.l_max];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("percentile bounds"));
        }
        if self.s_min > self.s_max || self.l_min > self.l_max {
            return Err(CoreError::InvalidArgument("bounds must satisfy min <= max".into()));
        }
        Ok(())
    }

    pub fn in_dis(&self, p: &QualityPoint) -> bool {
        self.s_min <= p.clip_score && p.clip_score <= self.s_max
    }

    pub fn in_dil(&self, p: &QualityPoint) -> bool {
        self.l_min <= p.caption_loss && p.caption_loss <= self.l_max
    }

    pub fn in_diq(&self, p: &QualityPoint) -> bool {
        self.in_dis(p) && self.in_dil(p)
    }

    /// Step sizes splitting the region into `n_s × n_l` equal blocks.
    /// A zero-width axis gets step 1.0, i.e. a single block.
    pub fn steps_for_blocks(&self, n_s: usize, n_l: usize) -> Result<(f64, f64)> {
        if n_s == 0 || n_l == 0 {
            return Err(CoreError::InvalidArgument("block counts must be positive".into()));
        }
        let step = |lo: f64, hi: f64, n: usize| {
            let width = hi - lo;
            if width > 0.0 {
                width / n as f64
            } else {
                1.0
            }
        };
        Ok((step(self.s_min, self.s_max, n_s), step(self.l_min, self.l_max, n_l)))
    }
}

fn check_ranks(pct_lo: f64, pct_hi: f64) -> Result<()> {
    check_rank(pct_lo)?;
    check_rank(pct_hi)?;
    if pct_lo >= pct_hi {
        return Err(CoreError::InvalidArgument(alloc::format!(
            "pct_lo {pct_lo} must be below pct_hi {pct_hi}"
        )));
    }
    Ok(())
}

pub fn compute_bounds(points: &[QualityPoint], pct_lo: f64, pct_hi: f64) -> Result<PercentileBounds> {
    if points.is_empty() {
        return Err(CoreError::Empty("bounds of no points"));
    }
    check_ranks(pct_lo, pct_hi)?;
    let mut scores = checked_copy(&points.iter().map(|p| p.clip_score).collect::<Vec<_>>())?;
    let mut losses = checked_copy(&points.iter().map(|p| p.caption_loss).collect::<Vec<_>>())?;
    scores.sort_unstable_by(f64::total_cmp);
    losses.sort_unstable_by(f64::total_cmp);
    PercentileBounds::new(
        percentile_sorted(&scores, pct_lo)?,
        percentile_sorted(&scores, pct_hi)?,
        percentile_sorted(&losses, pct_lo)?,
        percentile_sorted(&losses, pct_hi)?,
        pct_lo,
        pct_hi,
    )
}

pub fn filter_dis(points: &[QualityPoint], b: &PercentileBounds) -> Vec<QualityPoint> {
    points.iter().filter(|p| b.in_dis(p)).cloned().collect()
}

pub fn filter_dil(points: &[QualityPoint], b: &PercentileBounds) -> Vec<QualityPoint> {
    points.iter().filter(|p| b.in_dil(p)).cloned().collect()
}

pub fn filter_diq(points: &[QualityPoint], b: &PercentileBounds) -> Vec<QualityPoint> {
    points.iter().filter(|p| b.in_diq(p)).cloned().collect()
}

/// Uniform partition of the dual-indicator region.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityGrid {
    pub bounds: PercentileBounds,
    pub delta_s: f64,
    pub delta_l: f64,
    pub n_s: usize,
    pub n_l: usize,
    /// Occupied blocks only; members in input order.
    pub blocks: BTreeMap<(usize, usize), Vec<SampleId>>,
    /// Points outside the region.
    pub excluded: usize,
}

impl QualityGrid {
    pub fn block(&self, i_s: usize, i_l: usize) -> &[SampleId] {
        self.blocks.get(&(i_s, i_l)).map_or(&[], Vec::as_slice)
    }

    pub fn member_count(&self) -> usize {
        self.blocks.values().map(Vec::len).sum()
    }

    /// Block coordinates of a value pair known to lie in the region.
    pub fn locate(&self, clip_score: f64, caption_loss: f64) -> (usize, usize) {
        (
            axis_index(clip_score, self.bounds.s_min, self.delta_s, self.n_s),
            axis_index(caption_loss, self.bounds.l_min, self.delta_l, self.n_l),
        )
    }
}

fn axis_blocks(lo: f64, hi: f64, delta: f64) -> usize {
    let n = ceil_snapped((hi - lo) / delta);
    if n < 1.0 {
        1
    } else {
        n as usize
    }
}

fn axis_index(value: f64, lo: f64, delta: f64, n: usize) -> usize {
    let raw = libm::floor((value - lo) / delta);
    if raw <= 0.0 {
        0
    } else {
        (raw as usize).min(n - 1)
    }
}

/// Assigns each in-region point to block
/// `(floor((s - s_min) / delta_s), floor((l - l_min) / delta_l))`; values on
/// the upper edge are clamped into the last block.
pub fn grid_partition(
    points: &[QualityPoint],
    b: &PercentileBounds,
    delta_s: f64,
    delta_l: f64,
) -> Result<QualityGrid> {
    for delta in [delta_s, delta_l] {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(CoreError::InvalidArgument(alloc::format!(
                "grid step {delta} must be positive and finite"
            )));
        }
    }
    let n_s = axis_blocks(b.s_min, b.s_max, delta_s);
    let n_l = axis_blocks(b.l_min, b.l_max, delta_l);
    if n_s.saturating_mul(n_l) > MAX_GRID_BLOCKS {
        return Err(CoreError::InvalidArgument(alloc::format!(
            "grid of {n_s} x {n_l} blocks is too fine"
        )));
    }
    let mut grid = QualityGrid {
        bounds: *b,
        delta_s,
        delta_l,
        n_s,
        n_l,
        blocks: BTreeMap::new(),
        excluded: 0,
    };
    for p in points {
        if !b.in_diq(p) {
            grid.excluded += 1;
            continue;
        }
        let key = grid.locate(p.clip_score, p.caption_loss);
        grid.blocks.entry(key).or_default().push(p.sample_id.clone());
    }
    Ok(grid)
}

/// Aggregates for one grid block; means are absent for empty blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStat {
    pub i_s: usize,
    pub i_l: usize,
    pub count: usize,
    pub mean_score: Option<f64>,
    pub mean_loss: Option<f64>,
}

/// Per-block statistics for every block, in `(i_s, i_l)` lexicographic order.
pub fn block_stats(grid: &QualityGrid, points: &[QualityPoint]) -> Result<Vec<BlockStat>> {
    let by_id: BTreeMap<&str, &QualityPoint> =
        points.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let mut stats = Vec::with_capacity(grid.n_s * grid.n_l);
    for i_s in 0..grid.n_s {
        for i_l in 0..grid.n_l {
            let members = grid.block(i_s, i_l);
            let (mut score_sum, mut loss_sum) = (0.0, 0.0);
            for id in members {
                let p = by_id.get(id.as_str()).ok_or_else(|| {
                    CoreError::Integrity(alloc::format!("grid member {id} missing from points"))
                })?;
                score_sum += p.clip_score;
                loss_sum += p.caption_loss;
            }
            let count = members.len();
            let mean = |sum: f64| (count > 0).then(|| sum / count as f64);
            stats.push(BlockStat {
                i_s,
                i_l,
                count,
                mean_score: mean(score_sum),
                mean_loss: mean(loss_sum),
            });
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn pt(id: &str, s: f64, l: f64) -> QualityPoint {
        QualityPoint {
            sample_id: SampleId::new(id).unwrap(),
            scene_id: SampleId::new("scene").unwrap(),
            clip_score: s,
            caption_loss: l,
        }
    }

    fn uniform_points() -> Vec<QualityPoint> {
        (0..=100).map(|i| pt(&format!("p{i:03}"), i as f64, i as f64)).collect()
    }

    #[test]
    fn percentile_examples() {
        let values: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(percentile(&values, 95.0).unwrap(), 95.0);
        assert_eq!(percentile(&values, 0.0).unwrap(), 0.0);
        assert_eq!(percentile(&values, 100.0).unwrap(), 100.0);
        for p in [0.0, 13.0, 50.0, 100.0] {
            assert_eq!(percentile(&[7.0], p).unwrap(), 7.0);
        }
        assert_eq!(percentile(&[1.0, 2.0], 50.0).unwrap(), 1.5);
        assert!(percentile(&[], 50.0).is_err());
        assert!(percentile(&[1.0, f64::NAN], 50.0).is_err());
        assert!(percentile(&[1.0], 101.0).is_err());
    }

    #[test]
    fn bounds_defaults_on_uniform_grid() {
        let b = compute_bounds(&uniform_points(), DEFAULT_PCT_LO, DEFAULT_PCT_HI).unwrap();
        assert_eq!((b.s_min, b.s_max, b.l_min, b.l_max), (5.0, 95.0, 5.0, 95.0));
        let full = compute_bounds(&uniform_points(), 0.0, 100.0).unwrap();
        assert_eq!((full.s_min, full.s_max, full.l_min, full.l_max), (0.0, 100.0, 0.0, 100.0));
        let same: Vec<_> = (0..5).map(|i| pt(&format!("x{i}"), 0.3, 2.0)).collect();
        let d = compute_bounds(&same, 5.0, 95.0).unwrap();
        assert_eq!((d.s_min, d.s_max, d.l_min, d.l_max), (0.3, 0.3, 2.0, 2.0));
        assert!(compute_bounds(&[], 5.0, 95.0).is_err());
        assert!(compute_bounds(&same, 95.0, 5.0).is_err());
    }

    #[test]
    fn filter_examples() {
        let points = [pt("a", 0.1, 1.0), pt("b", 0.5, 5.0), pt("c", 0.9, 9.0)];
        let b = PercentileBounds::new(0.2, 0.8, 2.0, 8.0, 5.0, 95.0).unwrap();
        let ids = |v: Vec<QualityPoint>| v.into_iter().map(|p| p.sample_id.to_string()).collect::<Vec<_>>();
        assert_eq!(ids(filter_dis(&points, &b)), ["b"]);
        assert_eq!(ids(filter_dil(&points, &b)), ["b"]);
        assert!(filter_dil(&[], &b).is_empty());

        let edge = PercentileBounds::new(0.1, 0.9, 1.0, 9.0, 0.0, 100.0).unwrap();
        assert_eq!(filter_dis(&points, &edge), points);
        assert_eq!(filter_dil(&points, &edge), points);
        assert_eq!(filter_diq(&points, &edge), points);

        // Passes the score bounds, fails the loss bounds.
        let mixed = [pt("m", 0.5, 9.5)];
        assert_eq!(filter_dis(&mixed, &b).len(), 1);
        assert!(filter_diq(&mixed, &b).is_empty());
    }

    #[test]
    fn nine_region_grid() {
        let b = PercentileBounds::new(0.0, 1.0, 0.0, 1.0, 5.0, 95.0).unwrap();
        let grid = grid_partition(&[pt("corner", 1.0, 1.0), pt("origin", 0.0, 0.0)], &b, 1.0 / 3.0, 1.0 / 3.0).unwrap();
        assert_eq!((grid.n_s, grid.n_l), (3, 3));
        assert_eq!(grid.block(2, 2).len(), 1);
        assert_eq!(grid.block(0, 0).len(), 1);
        assert!(grid_partition(&[], &b, 0.0, 0.1).is_err());
        assert!(grid_partition(&[], &b, 0.1, -1.0).is_err());
    }

    #[test]
    fn degenerate_axis_has_one_block() {
        let b = PercentileBounds::new(0.5, 0.5, 1.0, 2.0, 5.0, 95.0).unwrap();
        let (ds, dl) = b.steps_for_blocks(3, 3).unwrap();
        let grid = grid_partition(&[pt("a", 0.5, 2.0)], &b, ds, dl).unwrap();
        assert_eq!((grid.n_s, grid.n_l), (1, 3));
        assert_eq!(grid.block(0, 2).len(), 1);
    }

    #[test]
    fn block_stats_conventions() {
        let b = PercentileBounds::new(0.0, 1.0, 0.0, 1.0, 5.0, 95.0).unwrap();
        let points = [pt("a", 0.1, 0.1), pt("b", 0.9, 0.9), pt("out", 2.0, 0.5)];
        let grid = grid_partition(&points, &b, 0.5, 0.5).unwrap();
        assert_eq!(grid.excluded, 1);
        let stats = block_stats(&grid, &points).unwrap();
        let keys: Vec<_> = stats.iter().map(|s| (s.i_s, s.i_l)).collect();
        assert_eq!(keys, [(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(stats[0].count, 1);
        assert_eq!(stats[0].mean_score, Some(0.1));
        assert_eq!(stats[0].mean_loss, Some(0.1));
        assert_eq!(stats[1].count, 0);
        assert_eq!(stats[1].mean_score, None);
        assert_eq!(stats[1].mean_loss, None);
        assert_eq!(stats[3].mean_score, Some(0.9));
    }
}
