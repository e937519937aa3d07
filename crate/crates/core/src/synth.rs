//! Synthetic scene/caption populations with planted corruption, and a bigram
//! caption-loss model.
//!
//! In separable mode every clean pair has alignment >= 0.85 and every
//! corrupted pair <= 0.15 (before f32 rounding). Corrupted captions are
//! also degenerate token runs that the bigram model finds easy, so their loss
//! is below every clean caption's loss. A corrupted point is therefore worse
//! on both axes than any clean one.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::manifest::SplitMix64;
use crate::sample::{CaptionRecord, EmbeddingTable, LossRecord, SampleId};

/// Vocabulary of the synthetic caption language. Token 0 is the filler
/// token that corrupted captions repeat.
pub const SYNTH_VOCAB: usize = 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Separation {
    #[default]
    Separable,
    Overlapping,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_scenes: usize,
    pub captions_per_scene: usize,
    pub dim: usize,
    pub corrupt_fraction: f64,
    pub separation: Separation,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_scenes: 200,
            captions_per_scene: 5,
            dim: 64,
            corrupt_fraction: 0.2,
            separation: Separation::Separable,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 || self.captions_per_scene == 0 || self.dim == 0 {
            return Err(CoreError::InvalidArgument(
                "n_scenes, captions_per_scene and dim must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.corrupt_fraction) {
            return Err(CoreError::InvalidArgument(alloc::format!(
                "corrupt_fraction {} outside [0, 1)",
                self.corrupt_fraction
            )));
        }
        if self.separation == Separation::Separable && self.dim < 2 {
            return Err(CoreError::InvalidArgument(
                "separable construction needs dim >= 2".into(),
            ));
        }
        Ok(())
    }

    pub fn n_captions(&self) -> usize {
        self.n_scenes * self.captions_per_scene
    }

    /// Number of captions that get corrupted: `floor(fraction * n)`.
    pub fn n_corrupted(&self) -> usize {
        libm::floor(self.corrupt_fraction * self.n_captions() as f64 + 1e-9) as usize
    }
}

/// Bigram language model with a start-token distribution. Probabilities are
/// strictly positive; rows sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLm {
    vocab: usize,
    start_log: Vec<f64>,
    bigram_log: Vec<f64>,
}

const PROB_SUM_TOLERANCE: f64 = 1e-9;

impl ToyLm {
    /// `bigram[prev * vocab + next]` is `P(next | prev)`.
    pub fn new(vocab: usize, start: &[f64], bigram: &[f64]) -> Result<Self> {
        if vocab == 0 {
            return Err(CoreError::InvalidArgument("vocabulary must be non-empty".into()));
        }
        if start.len() != vocab || bigram.len() != vocab * vocab {
            return Err(CoreError::DimensionMismatch {
                left: bigram.len(),
                right: vocab * vocab,
            });
        }
        check_distribution(start)?;
        for row in bigram.chunks_exact(vocab) {
            check_distribution(row)?;
        }
        Ok(ToyLm {
            vocab,
            start_log: start.iter().map(|&p| libm::log(p)).collect(),
            bigram_log: bigram.iter().map(|&p| libm::log(p)).collect(),
        })
    }

    pub fn uniform(vocab: usize) -> Result<Self> {
        let p = 1.0 / vocab as f64;
        ToyLm::new(vocab, &alloc::vec![p; vocab], &alloc::vec![p; vocab * vocab])
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn start_log_prob(&self, token: u32) -> Result<f64> {
        self.check_token(token)?;
        Ok(self.start_log[token as usize])
    }

    pub fn log_prob(&self, prev: u32, next: u32) -> Result<f64> {
        self.check_token(prev)?;
        self.check_token(next)?;
        Ok(self.bigram_log[prev as usize * self.vocab + next as usize])
    }

    fn check_token(&self, token: u32) -> Result<()> {
        if token as usize >= self.vocab {
            return Err(CoreError::OutOfVocabulary {
                token,
                vocab: self.vocab,
            });
        }
        Ok(())
    }

    /// Model used by the generator: a sticky filler token 0 and roughly
    /// flat transitions among the content tokens `1..vocab`.
    pub fn synthetic(rng: &mut SplitMix64) -> Self {
        let v = SYNTH_VOCAB;
        let start = mixture(rng, v, 0.5);
        let mut bigram = Vec::with_capacity(v * v);
        bigram.extend(mixture(rng, v, 0.9));
        for _ in 1..v {
            bigram.extend(mixture(rng, v, 0.05));
        }
        ToyLm::new(v, &start, &bigram).expect("synthetic model is a valid distribution")
    }
}

/// Distribution putting `filler` mass on token 0 and spreading the rest over
/// the other tokens with weights drawn from `[1, 2)`.
fn mixture(rng: &mut SplitMix64, v: usize, filler: f64) -> Vec<f64> {
    let weights: Vec<f64> = (1..v).map(|_| rng.uniform(1.0, 2.0)).collect();
    let total: f64 = weights.iter().sum();
    core::iter::once(filler)
        .chain(weights.iter().map(|w| (1.0 - filler) * w / total))
        .collect()
}

fn check_distribution(probs: &[f64]) -> Result<()> {
    if probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(CoreError::InvalidArgument(
            "probabilities must be positive and finite".into(),
        ));
    }
    let sum: f64 = probs.iter().sum();
    if libm::fabs(sum - 1.0) > PROB_SUM_TOLERANCE {
        return Err(CoreError::InvalidArgument(alloc::format!(
            "probabilities sum to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Negative log-likelihood of a token sequence in nats:
/// `-(log P_start(y_1) + sum_{t>1} log P(y_t | y_{t-1}))`.
pub fn toy_caption_loss(token_ids: &[u32], lm: &ToyLm) -> Result<f64> {
    let (&first, rest) = token_ids
        .split_first()
        .ok_or(CoreError::Empty("caption has no tokens"))?;
    let mut log_likelihood = lm.start_log_prob(first)?;
    let mut prev = first;
    for &token in rest {
        log_likelihood += lm.log_prob(prev, token)?;
        prev = token;
    }
    Ok(-log_likelihood)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub scene_table: EmbeddingTable,
    pub text_table: EmbeddingTable,
    pub captions: Vec<CaptionRecord>,
    /// Planted corruption, aligned with `captions`.
    pub corrupted: Vec<bool>,
    pub lm: ToyLm,
}

impl SynthData {
    /// Caption losses under the generator's bigram model.
    pub fn losses(&self) -> Result<Vec<LossRecord>> {
        self.captions
            .iter()
            .map(|c| {
                let tokens = c.token_ids.as_deref().unwrap_or(&[]);
                LossRecord::new(c.sample_id.clone(), toy_caption_loss(tokens, &self.lm)?)
            })
            .collect()
    }

    pub fn corrupted_ids(&self) -> impl Iterator<Item = &SampleId> {
        self.captions
            .iter()
            .zip(&self.corrupted)
            .filter_map(|(c, &bad)| bad.then_some(&c.sample_id))
    }
}

pub fn scene_id(scene: usize) -> SampleId {
    SampleId::new(alloc::format!("scene{scene:05}")).expect("generated id is valid")
}

pub fn caption_id(scene: usize, caption: usize) -> SampleId {
    SampleId::new(alloc::format!("scene{scene:05}/cap{caption:03}")).expect("generated id is valid")
}

fn random_unit(rng: &mut SplitMix64, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
        if norm > 1e-3 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Unit vector orthogonal to the unit vector `axis`.
fn random_orthogonal(rng: &mut SplitMix64, axis: &[f64]) -> Vec<f64> {
    loop {
        let mut u = random_unit(rng, axis.len());
        let along: f64 = u.iter().zip(axis).map(|(a, b)| a * b).sum();
        for (x, a) in u.iter_mut().zip(axis) {
            *x -= along * a;
        }
        let norm = libm::sqrt(u.iter().map(|x| x * x).sum());
        if norm > 1e-3 {
            return u.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Casts to f32 and renormalizes, so the stored row is unit-norm in f32.
fn to_unit_f32(v: &[f64]) -> Vec<f32> {
    let rounded: Vec<f64> = v.iter().map(|&x| x as f32 as f64).collect();
    let norm = libm::sqrt(rounded.iter().map(|x| x * x).sum());
    rounded.iter().map(|x| (x / norm) as f32).collect()
}

fn cosine_range(separation: Separation, corrupted: bool) -> (f64, f64) {
    match (separation, corrupted) {
        (Separation::Separable, false) => (0.85, 0.99),
        (Separation::Separable, true) => (-0.1, 0.15),
        (Separation::Overlapping, false) => (0.3, 0.95),
        (Separation::Overlapping, true) => (0.0, 0.6),
    }
}

fn caption_tokens(rng: &mut SplitMix64, separation: Separation, corrupted: bool) -> Vec<u32> {
    let content = |rng: &mut SplitMix64| 1 + (rng.next_u64() % (SYNTH_VOCAB as u64 - 1)) as u32;
    match (separation, corrupted) {
        (Separation::Separable, true) => alloc::vec![0; 3],
        (Separation::Overlapping, true) => {
            let len = 3 + (rng.next_u64() % 10) as usize;
            (0..len)
                .map(|_| if rng.next_f64() < 0.5 { 0 } else { content(rng) })
                .collect()
        }
        (_, false) => {
            let len = 4 + (rng.next_u64() % 9) as usize;
            (0..len).map(|_| content(rng)).collect()
        }
    }
}

fn caption_text(tokens: &[u32]) -> String {
    let words: Vec<String> = tokens.iter().map(|t| alloc::format!("w{t}")).collect();
    words.join(" ")
}

/// Generates a population fully determined by `cfg` (including its seed).
pub fn gen_synth_pairs(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(cfg.seed);
    let lm = ToyLm::synthetic(&mut rng);

    let n = cfg.n_captions();
    let mut corrupted = alloc::vec![false; n];
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    for &i in &order[..cfg.n_corrupted()] {
        corrupted[i] = true;
    }

    let mut scene_ids = Vec::with_capacity(cfg.n_scenes);
    let mut scene_rows = Vec::with_capacity(cfg.n_scenes * cfg.dim);
    let mut text_ids = Vec::with_capacity(n);
    let mut text_rows = Vec::with_capacity(n * cfg.dim);
    let mut captions = Vec::with_capacity(n);
    for scene in 0..cfg.n_scenes {
        let axis = random_unit(&mut rng, cfg.dim);
        scene_ids.push(scene_id(scene));
        scene_rows.extend(to_unit_f32(&axis));
        for c in 0..cfg.captions_per_scene {
            let bad = corrupted[scene * cfg.captions_per_scene + c];
            let text_vec: Vec<f64> = if cfg.dim == 1 {
                let sign = if bad { -1.0 } else { 1.0 };
                axis.iter().map(|x| sign * x).collect()
            } else {
                let (lo, hi) = cosine_range(cfg.separation, bad);
                let cos = rng.uniform(lo, hi);
                let sin = libm::sqrt(1.0 - cos * cos);
                let ortho = random_orthogonal(&mut rng, &axis);
                axis.iter().zip(&ortho).map(|(a, o)| cos * a + sin * o).collect()
            };
            text_rows.extend(to_unit_f32(&text_vec));
            let tokens = caption_tokens(&mut rng, cfg.separation, bad);
            let id = caption_id(scene, c);
            text_ids.push(id.clone());
            captions.push(CaptionRecord {
                sample_id: id,
                scene_id: scene_id(scene),
                text: Some(caption_text(&tokens)),
                token_ids: Some(tokens),
            });
        }
    }

    Ok(SynthData {
        scene_table: EmbeddingTable::new(cfg.dim, scene_ids, scene_rows, true)?,
        text_table: EmbeddingTable::new(cfg.dim, text_ids, text_rows, true)?,
        captions,
        corrupted,
        lm,
    })
}
