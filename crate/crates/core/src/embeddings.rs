//! Token and label-name vectors.
//!
//! Two sources implement [`Embedder`]: the context-free [`HashEmbedder`] and a
//! file-backed [`EmbeddingStore`] holding pair-conditioned encoder output.
//! A query token's vector is the mean over its `|S|` pair encodings (one per
//! support sentence); support sentence `i` takes its vectors from the pair it
//! forms with the current query.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corpus::{Tag};
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-token vectors of one sentence, one row per token.
pub type SentenceEmbedding<T> = DMatrix<T>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Query,
    Support,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Query => "query",
            Role::Support => "support",
        })
    }
}

/// Identifies one sentence of an episode together with the partner it was encoded with.
///
/// For a query sentence `pair` is the index of the support sentence; for a
/// support sentence it is the index of the query. `None` means the sentence
/// was encoded on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SentenceKey {
    pub episode_id: usize,
    pub role: Role,
    pub sentence: usize,
    pub pair: Option<usize>,
}

impl fmt::Display for SentenceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(episode {}, {} {}, pair {})",
            self.episode_id,
            self.role,
            self.sentence,
            self.pair.map_or_else(|| "none".to_string(), |p| p.to_string())
        )
    }
}

/// Source of token and label-name vectors.
pub trait Embedder<T: Scalar>: Sync {
    fn dim(&self) -> usize;

    /// True when token vectors ignore the pairing partner.
    fn is_context_free(&self) -> bool;

    /// Vectors for the tokens of `tokens`, encoded as identified by `key`.
    fn sentence(&self, key: SentenceKey, tokens: &[String]) -> Result<SentenceEmbedding<T>>;

    /// Label-name vector of a BIO label within a domain.
    fn label(&self, domain: &str, label: &str) -> Result<DVector<T>>;
}

/// Text a BIO label is embedded as: `begin <slot>`, `inner <slot>` or the O text.
pub fn label_text(label: &str, o_text: &str) -> Result<String> {
    Ok(match Tag::parse(label)? {
        Tag::O => o_text.to_string(),
        Tag::B(slot) => format!("begin {}", slot.replace('_', " ")),
        Tag::I(slot) => format!("inner {}", slot.replace('_', " ")),
    })
}

/// Deterministic unit vector for a token: a Gaussian draw seeded by a 64-bit hash of
/// the lowercased token and `seed`, normalized to unit length.
pub fn hash_embed<T: Scalar>(token: &str, dim: usize, seed: u64) -> DVector<T> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(token.to_lowercase().as_bytes());
    let digest = hasher.finalize();
    let key = u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let mut raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut raw {
        *x /= norm;
    }
    DVector::from_iterator(dim, raw.into_iter().map(T::of))
}

/// Context-free embedder backed by [`hash_embed`].
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
    pub o_text: String,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashEmbedder {
            dim,
            seed,
            o_text: "O".to_string(),
        }
    }

    /// Unit-normalized mean of the word vectors of a whitespace-separated text.
    pub fn text<T: Scalar>(&self, text: &str) -> DVector<T> {
        let mut acc = DVector::<f64>::zeros(self.dim);
        let mut n = 0;
        for word in text.split_whitespace() {
            acc += hash_embed::<f64>(word, self.dim, self.seed);
            n += 1;
        }
        if n > 1 {
            acc /= acc.norm();
        }
        acc.map(T::of)
    }
}

impl<T: Scalar> Embedder<T> for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn is_context_free(&self) -> bool {
        true
    }

    fn sentence(&self, _key: SentenceKey, tokens: &[String]) -> Result<SentenceEmbedding<T>> {
        let mut m = DMatrix::zeros(tokens.len(), self.dim);
        for (i, t) in tokens.iter().enumerate() {
            m.set_row(i, &hash_embed::<T>(t, self.dim, self.seed).transpose());
        }
        Ok(m)
    }

    fn label(&self, _domain: &str, label: &str) -> Result<DVector<T>> {
        Ok(self.text(&label_text(label, &self.o_text)?))
    }
}

/// Mean of the query's pair-conditioned encodings over all support sentences.
///
/// With `pairwise == false` the query is taken from its unpaired encoding.
pub fn pairwise_query_embedding<T: Scalar, E: Embedder<T> + ?Sized>(
    embedder: &E,
    episode: &Episode,
    query: usize,
    pairwise: bool,
) -> Result<SentenceEmbedding<T>> {
    let tokens = episode.queries[query].tokens();
    let key = |pair| SentenceKey {
        episode_id: episode.episode_id,
        role: Role::Query,
        sentence: query,
        pair,
    };
    let n_support = episode.support.len();
    if !pairwise || n_support == 0 {
        return embedder.sentence(key(None), tokens);
    }
    if embedder.is_context_free() {
        return embedder.sentence(key(Some(0)), tokens);
    }
    let mut acc = embedder.sentence(key(Some(0)), tokens)?;
    for pair in 1..n_support {
        acc += embedder.sentence(key(Some(pair)), tokens)?;
    }
    Ok(acc / T::of(n_support as f64))
}

/// Support sentence vectors as encoded together with query `query`.
pub fn support_token_embeddings<T: Scalar, E: Embedder<T> + ?Sized>(
    embedder: &E,
    episode: &Episode,
    query: usize,
    pairwise: bool,
) -> Result<Vec<SentenceEmbedding<T>>> {
    episode
        .support
        .sentences()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let key = SentenceKey {
                episode_id: episode.episode_id,
                role: Role::Support,
                sentence: i,
                pair: if pairwise { Some(query) } else { None },
            };
            embedder.sentence(key, s.tokens())
        })
        .collect()
}

pub fn label_semantic_embedding<T: Scalar, E: Embedder<T> + ?Sized>(
    embedder: &E,
    domain: &str,
    label: &str,
) -> Result<DVector<T>> {
    embedder.label(domain, label)
}

/// Precomputed vectors keyed by sentence encoding and label.
///
/// On disk: a header line `{"dim": D, "kind": "f32"}` followed by one JSON record per
/// line. Token records are keyed `[episode_id, role, sentence, pair, token]` where
/// `pair` may be null; label records are keyed `["label", domain, bio_label]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    tokens: HashMap<SentenceKey, Vec<Vec<f32>>>,
    labels: HashMap<(String, String), Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    dim: usize,
    kind: String,
}

#[derive(Serialize, Deserialize)]
struct StoreRecord {
    key: Vec<Value>,
    vec: Vec<f32>,
}

fn bad_key(key: &[Value]) -> Error {
    Error::Schema(format!("malformed store key {}", Value::Array(key.to_vec())))
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.values().map(Vec::len).sum::<usize>() + self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, vec: &[f32]) -> Result<()> {
        if vec.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: vec.len(),
            });
        }
        if vec.iter().any(|x| !x.is_finite()) {
            return Err(Error::Schema("non-finite embedding entry".into()));
        }
        Ok(())
    }

    pub fn insert_token(&mut self, key: SentenceKey, token: usize, vec: Vec<f32>) -> Result<()> {
        self.check(&vec)?;
        let row = self.tokens.entry(key).or_default();
        if row.len() <= token {
            row.resize(token + 1, Vec::new());
        }
        row[token] = vec;
        Ok(())
    }

    pub fn insert_label(&mut self, domain: &str, label: &str, vec: Vec<f32>) -> Result<()> {
        self.check(&vec)?;
        self.labels
            .insert((domain.to_string(), label.to_string()), vec);
        Ok(())
    }

    fn record_key(key: &SentenceKey, token: usize) -> Vec<Value> {
        vec![
            key.episode_id.into(),
            key.role.to_string().into(),
            key.sentence.into(),
            key.pair.map_or(Value::Null, Value::from),
            token.into(),
        ]
    }

    fn parse_key(key: &[Value]) -> Result<Either> {
        if key.first().and_then(Value::as_str) == Some("label") {
            return match key {
                [_, Value::String(d), Value::String(l)] => Ok(Either::Label(d.clone(), l.clone())),
                _ => Err(bad_key(key)),
            };
        }
        let idx = |v: &Value| v.as_u64().map(|x| x as usize).ok_or_else(|| bad_key(key));
        match key {
            [ep, Value::String(role), sent, pair, tok] => {
                let role = match role.as_str() {
                    "query" => Role::Query,
                    "support" => Role::Support,
                    _ => return Err(bad_key(key)),
                };
                let pair = if pair.is_null() { None } else { Some(idx(pair)?) };
                Ok(Either::Token(
                    SentenceKey {
                        episode_id: idx(ep)?,
                        role,
                        sentence: idx(sent)?,
                        pair,
                    },
                    idx(tok)?,
                ))
            }
            _ => Err(bad_key(key)),
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<store>", e);
        serde_json::to_writer(
            &mut out,
            &StoreHeader {
                dim: self.dim,
                kind: "f32".into(),
            },
        )?;
        out.write_all(b"\n").map_err(io)?;
        let mut keys: Vec<_> = self.tokens.keys().collect();
        keys.sort();
        for key in keys {
            for (t, vec) in self.tokens[key].iter().enumerate() {
                if vec.is_empty() {
                    continue;
                }
                let rec = StoreRecord {
                    key: Self::record_key(key, t),
                    vec: vec.clone(),
                };
                serde_json::to_writer(&mut out, &rec)?;
                out.write_all(b"\n").map_err(io)?;
            }
        }
        let mut labels: Vec<_> = self.labels.keys().collect();
        labels.sort();
        for key in labels {
            let rec = StoreRecord {
                key: vec!["label".into(), key.0.clone().into(), key.1.clone().into()],
                vec: self.labels[key].clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let header = loop {
            match lines.next() {
                None => return Err(Error::Schema("empty store file".into())),
                Some((i, line)) => {
                    let line = line.map_err(|e| Error::io("<store>", e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let h: StoreHeader =
                        serde_json::from_str(&line).map_err(|e| Error::Parse {
                            line: i + 1,
                            message: format!("store header: {e}"),
                        })?;
                    break h;
                }
            }
        };
        if header.kind != "f32" {
            return Err(Error::Schema(format!("unsupported store kind {:?}", header.kind)));
        }
        let mut store = EmbeddingStore::new(header.dim);
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io("<store>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: StoreRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let located = |e: Error| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            };
            match Self::parse_key(&rec.key).map_err(located)? {
                Either::Token(key, t) => store.insert_token(key, t, rec.vec).map_err(located)?,
                Either::Label(d, l) => store.insert_label(&d, &l, rec.vec).map_err(located)?,
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        EmbeddingStore::read(BufReader::new(file))
    }
}

enum Either {
    Token(SentenceKey, usize),
    Label(String, String),
}

impl<T: Scalar> Embedder<T> for EmbeddingStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn is_context_free(&self) -> bool {
        false
    }

    fn sentence(&self, key: SentenceKey, tokens: &[String]) -> Result<SentenceEmbedding<T>> {
        let rows = self
            .tokens
            .get(&key)
            .ok_or_else(|| Error::MissingRecord(key.to_string()))?;
        let mut m = DMatrix::zeros(tokens.len(), self.dim);
        for t in 0..tokens.len() {
            let v = rows
                .get(t)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| Error::MissingRecord(format!("{key} token {t}")))?;
            for (j, x) in v.iter().enumerate() {
                m[(t, j)] = T::of(*x as f64);
            }
        }
        Ok(m)
    }

    fn label(&self, domain: &str, label: &str) -> Result<DVector<T>> {
        let v = self
            .labels
            .get(&(domain.to_string(), label.to_string()))
            .ok_or_else(|| Error::MissingRecord(format!("label {label} of domain {domain}")))?;
        Ok(DVector::from_iterator(
            self.dim,
            v.iter().map(|x| T::of(*x as f64)),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabelSet, Sentence};
    use crate::episodes::SupportSet;

    fn episode() -> Episode {
        let s = |pairs: &[(&str, &str)]| Sentence::from_pairs(pairs).unwrap();
        Episode {
            episode_id: 7,
            domain_name: "d".into(),
            label_set: LabelSet::new(["a"]),
            support: SupportSet::new(vec![
                s(&[("x", "B-a"), ("y", "O")]),
                s(&[("z", "B-a"), ("w", "I-a")]),
                s(&[("v", "O"), ("u", "B-a")]),
            ]),
            queries: vec![s(&[("q1", "O"), ("q2", "B-a")])],
        }
    }

    #[test]
    fn hash_is_deterministic_and_unit() {
        let a = hash_embed::<f64>("Rain", 32, 1);
        let b = hash_embed::<f64>("rain", 32, 1);
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert_ne!(a, hash_embed::<f64>("rain", 32, 2));
        assert_ne!(a, hash_embed::<f64>("snow", 32, 1));
    }

    #[test]
    fn label_texts() {
        assert_eq!(label_text("B-weather", "O").unwrap(), "begin weather");
        assert_eq!(label_text("I-object_type", "O").unwrap(), "inner object type");
        assert_eq!(label_text("O", "O").unwrap(), "O");
        assert_eq!(label_text("O", "outside").unwrap(), "outside");
    }

    #[test]
    fn hash_label_vector_matches_text() {
        let e = HashEmbedder::new(16, 3);
        let v: DVector<f64> = e.label("d", "B-weather").unwrap();
        assert_eq!(v, e.text::<f64>("begin weather"));
        let o: DVector<f64> = e.label("d", "O").unwrap();
        assert_eq!(o, hash_embed::<f64>("O", 16, 3));
    }

    #[test]
    fn context_free_pairwise_equals_plain() {
        let e = HashEmbedder::new(8, 0);
        let ep = episode();
        let q: DMatrix<f64> = pairwise_query_embedding(&e, &ep, 0, true).unwrap();
        let plain: DMatrix<f64> = pairwise_query_embedding(&e, &ep, 0, false).unwrap();
        assert_eq!(q, plain);
        let sup: Vec<DMatrix<f64>> = support_token_embeddings(&e, &ep, 0, true).unwrap();
        for (m, s) in sup.iter().zip(ep.support.sentences()) {
            let own: DMatrix<f64> = e.sentence(
                SentenceKey { episode_id: 0, role: Role::Support, sentence: 0, pair: None },
                s.tokens(),
            )
            .unwrap();
            assert_eq!(m, &own);
        }
    }

    fn store_for(ep: &Episode, dim: usize) -> EmbeddingStore {
        let mut store = EmbeddingStore::new(dim);
        let q = &ep.queries[0];
        for pair in 0..ep.support.len() {
            let key = SentenceKey { episode_id: ep.episode_id, role: Role::Query, sentence: 0, pair: Some(pair) };
            for t in 0..q.len() {
                let v = (0..dim).map(|j| (pair * 10 + t * 3 + j) as f32 * 0.25).collect();
                store.insert_token(key, t, v).unwrap();
            }
        }
        for (i, s) in ep.support.sentences().iter().enumerate() {
            let key = SentenceKey { episode_id: ep.episode_id, role: Role::Support, sentence: i, pair: Some(0) };
            for t in 0..s.len() {
                store.insert_token(key, t, vec![i as f32 + t as f32; dim]).unwrap();
            }
        }
        for l in ep.label_set.labels() {
            store.insert_label("d", l, vec![l.len() as f32; dim]).unwrap();
        }
        store
    }

    #[test]
    fn store_pair_average() {
        let ep = episode();
        let store = store_for(&ep, 4);
        let q: DMatrix<f64> = pairwise_query_embedding(&store, &ep, 0, true).unwrap();
        for t in 0..2 {
            for j in 0..4 {
                let mean = (0..3).map(|p| (p * 10 + t * 3 + j) as f64 * 0.25).sum::<f64>() / 3.0;
                assert!((q[(t, j)] - mean).abs() < 1e-12);
            }
        }
        let err = pairwise_query_embedding::<f64, _>(&store, &ep, 0, false).unwrap_err();
        assert!(matches!(err, Error::MissingRecord(_)));
    }

    #[test]
    fn single_support_pair_is_identity() {
        let mut ep = episode();
        ep.support = SupportSet::new(ep.support.sentences()[..1].to_vec());
        let store = store_for(&ep, 3);
        let q: DMatrix<f64> = pairwise_query_embedding(&store, &ep, 0, true).unwrap();
        let direct: DMatrix<f64> = store
            .sentence(
                SentenceKey { episode_id: 7, role: Role::Query, sentence: 0, pair: Some(0) },
                ep.queries[0].tokens(),
            )
            .unwrap();
        assert_eq!(q, direct);
    }

    #[test]
    fn store_round_trip() {
        let ep = episode();
        let store = store_for(&ep, 4);
        let mut buf = Vec::new();
        store.write(&mut buf).unwrap();
        let back = EmbeddingStore::read(buf.as_slice()).unwrap();
        assert_eq!(back, store);
        let v: DVector<f64> = back.label("d", "B-a").unwrap();
        assert_eq!(v[0], 3.0);
    }

    #[test]
    fn store_dimension_mismatch() {
        let text = "{\"dim\":64,\"kind\":\"f32\"}\n{\"key\":[\"label\",\"d\",\"O\"],\"vec\":[1.0,2.0]}\n";
        let err = EmbeddingStore::read(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn store_missing_label() {
        let store = EmbeddingStore::new(2);
        let err = Embedder::<f64>::label(&store, "d", "B-x").unwrap_err();
        assert!(matches!(err, Error::MissingRecord(_)));
    }
}
