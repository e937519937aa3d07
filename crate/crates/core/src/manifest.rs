//! Deterministic stage manifests.
//!
//! A manifest is a stage pool shuffled by a seeded Fisher–Yates pass. Ids
//! are sorted before shuffling so the result depends only on the pool as a
//! set and the seed.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::sample::SampleId;
use crate::scoring::QualityPoint;

/// SplitMix64 generator (Steele, Lea, Flood).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// Sorts `ids`, then shuffles them with Fisher–Yates from the last index
/// down, drawing `j = next_u64() mod (i + 1)` at position `i`.
pub fn shuffle_deterministic(ids: &[SampleId], seed: u64) -> Result<Vec<SampleId>> {
    let mut out = ids.to_vec();
    out.sort_unstable();
    if let Some(w) = out.windows(2).find(|w| w[0] == w[1]) {
        return Err(CoreError::Integrity(alloc::format!("duplicate sample id {}", w[0])));
    }
    let mut rng = SplitMix64::new(seed);
    for i in (1..out.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        out.swap(i, j);
    }
    Ok(out)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a (64-bit) over the ids in ascending order, each followed by `\n`.
pub fn pool_digest<'a>(ids: impl IntoIterator<Item = &'a SampleId>) -> u64 {
    let mut sorted: Vec<&SampleId> = ids.into_iter().collect();
    sorted.sort_unstable();
    let mut hash = FNV_OFFSET;
    for id in sorted {
        for &byte in id.as_str().as_bytes().iter().chain(b"\n") {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(FNV_PRIME);
        }
    }
    hash
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage_k: usize,
    pub seed: u64,
    pub mode: String,
    pub pool_digest: u64,
    pub entries: Vec<SampleId>,
}

impl Manifest {
    /// Shuffles `pool` into a manifest for stage `stage_k`.
    pub fn from_pool(pool: &[QualityPoint], stage_k: usize, mode: &str, seed: u64) -> Result<Self> {
        let ids: Vec<SampleId> = pool.iter().map(|p| p.sample_id.clone()).collect();
        Manifest::from_ids(&ids, stage_k, mode, seed)
    }

    pub fn from_ids(ids: &[SampleId], stage_k: usize, mode: &str, seed: u64) -> Result<Self> {
        if mode.is_empty() || mode.chars().any(|c| c.is_whitespace() || c.is_control()) {
            return Err(CoreError::InvalidArgument(alloc::format!(
                "manifest mode {mode:?} must be a non-empty token"
            )));
        }
        let entries = shuffle_deterministic(ids, seed)?;
        Ok(Manifest {
            stage_k,
            seed,
            mode: mode.into(),
            pool_digest: pool_digest(&entries),
            entries,
        })
    }

    /// Checks the manifest against itself and against the pool it should list.
    pub fn check(&self, pool: &[QualityPoint]) -> ManifestCheck {
        let mut seen = BTreeSet::new();
        let duplicates: Vec<SampleId> = self
            .entries
            .iter()
            .filter(|id| !seen.insert(*id))
            .cloned()
            .collect();
        let expected: BTreeSet<&SampleId> = pool.iter().map(|p| &p.sample_id).collect();
        let missing = expected.iter().filter(|id| !seen.contains(**id)).map(|id| (*id).clone()).collect();
        let unexpected = seen.iter().filter(|id| !expected.contains(*id)).map(|id| (*id).clone()).collect();
        let recomputed: BTreeSet<&SampleId> = self.entries.iter().collect();
        ManifestCheck {
            digest_ok: pool_digest(recomputed) == self.pool_digest && duplicates.is_empty(),
            duplicates,
            missing,
            unexpected,
        }
    }
}

/// Outcome of checking a manifest; every failure kind is listed separately.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestCheck {
    /// Header digest equals the digest of the listed ids.
    pub digest_ok: bool,
    pub duplicates: Vec<SampleId>,
    /// Pool ids the manifest does not list.
    pub missing: Vec<SampleId>,
    /// Listed ids that are not in the pool.
    pub unexpected: Vec<SampleId>,
}

impl ManifestCheck {
    pub fn unique_ok(&self) -> bool {
        self.duplicates.is_empty()
    }

    pub fn set_equal_ok(&self) -> bool {
        self.missing.is_empty() && self.unexpected.is_empty()
    }

    pub fn passed(&self) -> bool {
        self.digest_ok && self.unique_ok() && self.set_equal_ok()
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.digest_ok {
            out.push("digest");
        }
        if !self.unique_ok() {
            out.push("uniqueness");
        }
        if !self.set_equal_ok() {
            out.push("set-equality");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ids(names: &[&str]) -> Vec<SampleId> {
        names.iter().map(|s| SampleId::new(*s).unwrap()).collect()
    }

    #[test]
    fn splitmix_reference_stream() {
        // First outputs for seed 0 of the published reference generator.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xe220_a839_7b1d_cdaf);
        assert_eq!(rng.next_u64(), 0x6e78_9e6a_a1b9_65f4);
        assert_eq!(rng.next_u64(), 0x06c4_5d18_8009_454f);
    }

    #[test]
    fn shuffle_frozen_fixtures() {
        // Produced by an independent reference implementation of the same rule.
        let out = shuffle_deterministic(&ids(&["a", "b", "c", "d"]), 42).unwrap();
        assert_eq!(out, ids(&["c", "a", "d", "b"]));
        let reversed = shuffle_deterministic(&ids(&["d", "c", "b", "a"]), 42).unwrap();
        assert_eq!(reversed, out);
        let ten: Vec<_> = (0..10).map(|i| SampleId::new(alloc::format!("s{i:02}")).unwrap()).collect();
        let expected = ids(&["s08", "s01", "s05", "s09", "s00", "s04", "s03", "s02", "s06", "s07"]);
        assert_eq!(shuffle_deterministic(&ten, 7).unwrap(), expected);
    }

    #[test]
    fn shuffle_edge_cases() {
        for seed in [0, 1, u64::MAX] {
            assert_eq!(shuffle_deterministic(&ids(&["only"]), seed).unwrap(), ids(&["only"]));
        }
        assert!(shuffle_deterministic(&[], 3).unwrap().is_empty());
        assert!(shuffle_deterministic(&ids(&["a", "b", "a"]), 3).is_err());
    }

    #[test]
    fn digest_fixtures() {
        assert_eq!(pool_digest(&ids(&["d", "b", "a", "c"])), 0xb500_a19a_56ee_8849);
        assert_eq!(pool_digest(&[]), FNV_OFFSET);
    }

    #[test]
    fn check_reports_each_failure_kind() {
        let pool: Vec<QualityPoint> = ["a", "b", "c"]
            .iter()
            .map(|s| QualityPoint {
                sample_id: SampleId::new(*s).unwrap(),
                scene_id: SampleId::new("s").unwrap(),
                clip_score: 0.5,
                caption_loss: 1.0,
            })
            .collect();
        let m = Manifest::from_pool(&pool, 0, "fraction", 9).unwrap();
        assert!(m.check(&pool).passed());

        let mut deleted = m.clone();
        deleted.entries.pop();
        let c = deleted.check(&pool);
        assert!(!c.digest_ok && !c.set_equal_ok() && c.unique_ok());
        assert_eq!(c.failures(), vec!["digest", "set-equality"]);

        let mut dup = m.clone();
        dup.entries.push(dup.entries[0].clone());
        let c = dup.check(&pool);
        assert!(!c.unique_ok());
        assert!(c.failures().contains(&"uniqueness"));
    }
}
