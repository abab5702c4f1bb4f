//! K-shot support sampling and support/query episode assembly.
//!
//! Supports are built with the minimum-including procedure: first add random
//! sentences until every BIO label that occurs in the domain is covered `K`
//! times, then walk the added sentences once (in insertion order) and drop
//! each one whose removal keeps coverage intact.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Domain, LabelSet, Sentence};
use crate::error::{Error, Result};

/// Default probability of skipping a removal in the shrink pass.
pub const DEFAULT_SKIP_PROB: f64 = 0.2;

/// Per-label token counts of a collection of sentences.
pub fn label_counts<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for s in sentences {
        for l in s.labels() {
            *counts.entry(l.clone()).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<Sentence>", into = "Vec<Sentence>")]
pub struct SupportSet {
    sentences: Vec<Sentence>,
    label_counts: BTreeMap<String, usize>,
}

impl From<Vec<Sentence>> for SupportSet {
    fn from(sentences: Vec<Sentence>) -> Self {
        SupportSet::new(sentences)
    }
}

impl From<SupportSet> for Vec<Sentence> {
    fn from(s: SupportSet) -> Self {
        s.sentences
    }
}

impl SupportSet {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        let label_counts = label_counts(&sentences);
        SupportSet {
            sentences,
            label_counts,
        }
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn label_counts(&self) -> &BTreeMap<String, usize> {
        &self.label_counts
    }

    pub fn count(&self, label: &str) -> usize {
        self.label_counts.get(label).copied().unwrap_or(0)
    }
}

/// Labels of the domain that occur at least once; these are the ones a support must cover.
fn required_labels(domain: &Domain) -> Vec<(usize, String)> {
    let totals = label_counts(domain.sentences());
    domain
        .label_set()
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, l)| totals.contains_key(*l))
        .map(|(i, l)| (i, l.clone()))
        .collect()
}

/// Samples a K-shot support set with the minimum-including procedure.
pub fn sample_support<R: Rng + ?Sized>(
    domain: &Domain,
    k: usize,
    skip_prob: f64,
    rng: &mut R,
) -> Result<SupportSet> {
    let chosen = sample_support_indices(domain, k, skip_prob, rng)?;
    Ok(SupportSet::new(
        chosen
            .into_iter()
            .map(|i| domain.sentences()[i].clone())
            .collect(),
    ))
}

fn sample_support_indices<R: Rng + ?Sized>(
    domain: &Domain,
    k: usize,
    skip_prob: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&skip_prob) {
        return Err(Error::Config(format!("skip probability {skip_prob} outside [0, 1]")));
    }
    let labels = domain.label_set();
    let n_labels = labels.len();
    let required = required_labels(domain);

    // per-sentence label id counts
    let per_sentence: Vec<Vec<usize>> = domain
        .sentences()
        .iter()
        .map(|s| {
            let mut c = vec![0; n_labels];
            for l in s.labels() {
                c[labels.id(l).expect("label set derived from sentences")] += 1;
            }
            c
        })
        .collect();

    let mut totals = vec![0usize; n_labels];
    for c in &per_sentence {
        for (t, x) in totals.iter_mut().zip(c) {
            *t += x;
        }
    }
    let deficient: Vec<String> = required
        .iter()
        .filter(|(id, _)| totals[*id] < k)
        .map(|(id, l)| format!("{l} ({} < {k})", totals[*id]))
        .collect();
    if !deficient.is_empty() {
        return Err(Error::Infeasible(deficient));
    }

    let mut in_support = vec![false; per_sentence.len()];
    let mut added = Vec::new();
    let mut counts = vec![0usize; n_labels];
    for &(label, _) in &required {
        while counts[label] < k {
            let candidates: Vec<usize> = (0..per_sentence.len())
                .filter(|&i| !in_support[i] && per_sentence[i][label] > 0)
                .collect();
            // totals[label] >= k guarantees a candidate remains
            let pick = candidates[rng.random_range(0..candidates.len())];
            in_support[pick] = true;
            added.push(pick);
            for (c, x) in counts.iter_mut().zip(&per_sentence[pick]) {
                *c += x;
            }
        }
    }

    let mut kept = Vec::with_capacity(added.len());
    for &i in &added {
        if skip_prob > 0.0 && rng.random::<f64>() < skip_prob {
            kept.push(i);
            continue;
        }
        let still_covered = required
            .iter()
            .all(|&(l, _)| counts[l] - per_sentence[i][l] >= k);
        if still_covered {
            for (c, x) in counts.iter_mut().zip(&per_sentence[i]) {
                *c -= x;
            }
        } else {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// One support set plus query sentences from the same domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: usize,
    #[serde(rename = "domain")]
    pub domain_name: String,
    pub label_set: LabelSet,
    pub support: SupportSet,
    pub queries: Vec<Sentence>,
}

/// Samples a support set and `n_query` query sentences disjoint from it.
pub fn sample_episode<R: Rng + ?Sized>(
    domain: &Domain,
    k: usize,
    n_query: usize,
    skip_prob: f64,
    rng: &mut R,
) -> Result<Episode> {
    let chosen = sample_support_indices(domain, k, skip_prob, rng)?;
    let support: Vec<Sentence> = chosen
        .iter()
        .map(|&i| domain.sentences()[i].clone())
        .collect();
    let members: HashSet<&Sentence> = support.iter().collect();
    let pool: Vec<usize> = (0..domain.sentences().len())
        .filter(|i| !members.contains(&domain.sentences()[*i]))
        .collect();
    if pool.len() < n_query {
        return Err(Error::NotEnoughQueries {
            needed: n_query,
            available: pool.len(),
        });
    }
    let mut picks = index::sample(rng, pool.len(), n_query).into_vec();
    picks.sort_unstable();
    let queries = picks
        .into_iter()
        .map(|p| domain.sentences()[pool[p]].clone())
        .collect();
    Ok(Episode {
        episode_id: 0,
        domain_name: domain.name().to_string(),
        label_set: domain.label_set().clone(),
        support: SupportSet::new(support),
        queries,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeSet {
    pub episodes: Vec<Episode>,
    pub k: usize,
    pub queries_per_episode: usize,
    pub rng_seed: u64,
}

/// Generator seed for the `index`-th independent stream derived from `seed`.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples `episodes_per_domain` episodes for every domain, each domain on its own sub-seeded stream.
pub fn build_split(
    domains: &[Domain],
    episodes_per_domain: usize,
    k: usize,
    n_query: usize,
    skip_prob: f64,
    seed: u64,
) -> Result<EpisodeSet> {
    let per_domain: Vec<Vec<Episode>> = domains
        .par_iter()
        .enumerate()
        .map(|(d, domain)| {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, d as u64));
            (0..episodes_per_domain)
                .map(|_| sample_episode(domain, k, n_query, skip_prob, &mut rng))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::in_domain(domain.name(), e))
        })
        .collect::<Result<_>>()?;
    let episodes = per_domain
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(id, mut ep)| {
            ep.episode_id = id;
            ep
        })
        .collect();
    Ok(EpisodeSet {
        episodes,
        k,
        queries_per_episode: n_query,
        rng_seed: seed,
    })
}

#[derive(Serialize, Deserialize)]
struct EpisodeLine {
    #[serde(flatten)]
    episode: Episode,
    k: usize,
    seed: u64,
}

impl EpisodeSet {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Mean support size over all episodes.
    pub fn mean_support_size(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        let total: usize = self.episodes.iter().map(|e| e.support.len()).sum();
        total as f64 / self.episodes.len() as f64
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for ep in &self.episodes {
            let line = EpisodeLine {
                episode: ep.clone(),
                k: self.k,
                seed: self.rng_seed,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io("<episodes>", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut episodes = Vec::new();
        let mut k = 0;
        let mut seed = 0;
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<episodes>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: EpisodeLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            k = parsed.k;
            seed = parsed.seed;
            episodes.push(parsed.episode);
        }
        let queries_per_episode = episodes.first().map_or(0, |e| e.queries.len());
        Ok(EpisodeSet {
            episodes,
            k,
            queries_per_episode,
            rng_seed: seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        EpisodeSet::read_jsonl(BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(pairs: &[(&str, &str)]) -> Sentence {
        Sentence::from_pairs(pairs).unwrap()
    }

    fn weather_domain() -> Domain {
        Domain::new(
            "GetWeather",
            vec![
                sentence(&[("will", "O"), ("it", "O"), ("rain", "B-weather"), ("tonight", "B-time")]),
                sentence(&[("is", "O"), ("it", "O"), ("hot", "B-weather"), ("in", "O"), ("paris", "B-city")]),
                sentence(&[("snow", "B-weather"), ("in", "O"), ("new", "B-city"), ("york", "I-city")]),
                sentence(&[("weather", "O"), ("next", "B-time"), ("week", "I-time")]),
                sentence(&[("sunny", "B-weather"), ("today", "B-time")]),
            ],
        )
        .unwrap()
    }

    fn covered(support: &SupportSet, domain: &Domain, k: usize) -> bool {
        let totals = label_counts(domain.sentences());
        totals.keys().all(|l| support.count(l) >= k)
    }

    #[test]
    fn one_shot_covers_every_label() {
        let domain = weather_domain();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = sample_support(&domain, 1, 0.0, &mut rng).unwrap();
            assert!(covered(&s, &domain, 1));
        }
    }

    #[test]
    fn disjoint_labels_force_one_sentence_per_label() {
        let domain = Domain::new(
            "d",
            vec![
                sentence(&[("a", "B-x")]),
                sentence(&[("b", "B-y")]),
                sentence(&[("c", "B-z")]),
                sentence(&[("d", "O")]),
            ],
        )
        .unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = sample_support(&domain, 1, 0.0, &mut rng).unwrap();
            assert_eq!(s.len(), 4);
            assert!(domain.label_set().labels().iter().filter(|l| l.starts_with("I-")).all(|l| s.count(l) == 0));
        }
    }

    #[test]
    fn infeasible_lists_deficient_labels() {
        let domain = weather_domain();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_support(&domain, 2, 0.0, &mut rng).unwrap_err();
        match err {
            Error::Infeasible(labels) => {
                assert_eq!(labels.len(), 2);
                assert!(labels.iter().any(|l| l.starts_with("I-city")));
                assert!(labels.iter().any(|l| l.starts_with("I-time")));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn zero_k_and_bad_skip_rejected() {
        let domain = weather_domain();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_support(&domain, 0, 0.0, &mut rng).is_err());
        assert!(sample_support(&domain, 1, 1.5, &mut rng).is_err());
    }

    #[test]
    fn empty_query_episode() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ep = sample_episode(&weather_domain(), 1, 0, 0.2, &mut rng).unwrap();
        assert!(ep.queries.is_empty());
        assert!(!ep.support.is_empty());
    }

    #[test]
    fn too_many_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = sample_episode(&weather_domain(), 1, 5, 0.0, &mut rng).unwrap_err();
        assert!(matches!(err, Error::NotEnoughQueries { needed: 5, .. }));
    }

    #[test]
    fn split_errors_name_the_domain() {
        let err = build_split(&[weather_domain()], 2, 3, 1, 0.0, 1).unwrap_err();
        assert!(err.to_string().starts_with("domain GetWeather"), "{err}");
    }

    #[test]
    fn empty_split() {
        let set = build_split(&[weather_domain()], 0, 1, 1, 0.2, 1).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn sub_seeds_differ() {
        assert_ne!(sub_seed(1, 0), sub_seed(1, 1));
        assert_ne!(sub_seed(1, 0), sub_seed(2, 0));
        assert_eq!(sub_seed(7, 3), sub_seed(7, 3));
    }
}
