//! Small generated corpora with disjoint per-domain vocabularies.
//!
//! Each slot owns its begin words. Inner words are shared by all slots of a
//! domain, so an inner token's slot is only recoverable from the label before it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Domain, Sentence};
use crate::episodes::sub_seed;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub domains: usize,
    pub slots: usize,
    pub sentences: usize,
    /// Distinct begin words per slot.
    pub begin_words: usize,
    /// Inner words shared by the slots of a domain.
    pub inner_words: usize,
    pub filler_words: usize,
    /// Longest run of inner tokens after a begin token.
    pub max_inner: usize,
    /// Most slot spans in one sentence.
    pub max_spans: usize,
    pub max_filler: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            domains: 4,
            slots: 5,
            sentences: 200,
            begin_words: 1,
            inner_words: 1,
            filler_words: 2,
            max_inner: 2,
            max_spans: 2,
            max_filler: 3,
            seed: 0,
        }
    }
}

pub fn slot_name(domain: usize, slot: usize) -> String {
    format!("d{domain}_slot{slot}")
}

/// One domain per index, named `synth{d}`.
pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<Domain>> {
    if cfg.domains == 0 || cfg.slots == 0 || cfg.sentences == 0 || cfg.begin_words == 0 || cfg.filler_words == 0 {
        return Err(Error::Config("synthetic corpus needs positive sizes".into()));
    }
    if cfg.max_inner > 0 && cfg.inner_words == 0 {
        return Err(Error::Config("inner runs need at least one inner word".into()));
    }
    (0..cfg.domains).map(|d| generate_domain(cfg, d)).collect()
}

fn generate_domain(cfg: &SyntheticConfig, d: usize) -> Result<Domain> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, d as u64));
    let filler = |rng: &mut ChaCha8Rng| format!("f{d}w{}", rng.random_range(0..cfg.filler_words));
    let mut sentences = Vec::with_capacity(cfg.sentences);
    for _ in 0..cfg.sentences {
        let mut pairs: Vec<(String, String)> = Vec::new();
        let spans = rng.random_range(1..=cfg.max_spans.max(1));
        for _ in 0..spans {
            for _ in 0..rng.random_range(0..=cfg.max_filler) {
                pairs.push((filler(&mut rng), "O".into()));
            }
            let slot = rng.random_range(0..cfg.slots);
            let name = slot_name(d, slot);
            let b = rng.random_range(0..cfg.begin_words);
            pairs.push((format!("b{d}s{slot}w{b}"), format!("B-{name}")));
            for _ in 0..rng.random_range(0..=cfg.max_inner) {
                let w = rng.random_range(0..cfg.inner_words);
                pairs.push((format!("i{d}w{w}"), format!("I-{name}")));
            }
        }
        for _ in 0..rng.random_range(0..=cfg.max_filler) {
            pairs.push((filler(&mut rng), "O".into()));
        }
        sentences.push(Sentence::from_pairs(&pairs)?);
    }
    Domain::new(format!("synth{d}"), sentences)
}
