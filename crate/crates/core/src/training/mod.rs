//! Trainable state, episode loss and its analytic gradient.
//!
//! The trainable parameters are the reference pool, the 19 collapsed transition
//! cells and the emission scale `lambda`. Everything else (token vectors,
//! label-name vectors, prototypes) is an input. The error-nulling projection is
//! rebuilt per episode but treated as a constant when differentiating.

mod checkpoint;
mod gradcheck;
mod optim;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabelSet;
use crate::crf::{self, CrfScore};
use crate::embeddings::{pairwise_query_embedding, support_token_embeddings, Embedder};
use crate::emission::{assign_references, compute_prototypes, AssignMode, EpisodeBindings, ReferencePool, ScorerConfig};
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::evaluation::{episode_f1, Prf};
use crate::scalar::Scalar;
use crate::transition::{cell_map, rule_mask, CollapsedTransitionTable, ExpandedTransition, N_CELLS};

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
pub use gradcheck::{gradcheck, gradcheck_with, Fault, GradcheckEntry, GradcheckReport};
pub use optim::{train, Adam, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T: Scalar> {
    pub pool: ReferencePool<T>,
    pub table: CollapsedTransitionTable<T>,
    pub lambda: T,
    pub config: ScorerConfig,
}

impl<T: Scalar> ModelState<T> {
    /// Random unit reference rows, a zero transition table and `lambda = 1`.
    pub fn new(config: ScorerConfig, n_pool: usize, dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_pool == 0 || dim == 0 {
            return Err(Error::Config(format!("pool must be non-empty, got {n_pool}x{dim}")));
        }
        Ok(ModelState {
            pool: ReferencePool::random(n_pool, dim, seed),
            table: CollapsedTransitionTable::default(),
            lambda: T::one(),
            config,
        })
    }

    pub fn dim(&self) -> usize {
        self.pool.dim()
    }

    pub fn n_parameters(&self) -> usize {
        self.pool.len() * self.pool.dim() + N_CELLS + 1
    }

    /// Flat parameter vector: pool rows (row-major), transition cells, `lambda`.
    pub fn parameters(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_parameters());
        for i in 0..self.pool.len() {
            out.extend(self.pool.refs.row(i).iter().copied());
        }
        out.extend_from_slice(self.table.values());
        out.push(self.lambda);
        out
    }

    pub fn set_parameters(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.n_parameters() {
            return Err(Error::Dimension {
                expected: self.n_parameters(),
                found: params.len(),
            });
        }
        let (n, d) = (self.pool.len(), self.pool.dim());
        self.pool.refs = DMatrix::from_row_slice(n, d, &params[..n * d]);
        self.table.values_mut().copy_from_slice(&params[n * d..n * d + N_CELLS]);
        self.lambda = params[n * d + N_CELLS];
        Ok(())
    }

    /// Transition scores used for decoding and training; all zero when transfer is disabled.
    pub fn transition(&self, labels: &LabelSet) -> ExpandedTransition<T> {
        if self.config.transitions {
            self.table.expand(labels)
        } else {
            ExpandedTransition::uniform(labels)
        }
    }
}

/// Support-derived inputs shared by a set of queries.
#[derive(Debug, Clone)]
pub struct SupportGroup<T: Scalar> {
    pub prototypes: DMatrix<T>,
    pub present: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct PreparedQuery<T: Scalar> {
    pub embedding: DMatrix<T>,
    pub gold: Vec<usize>,
    pub group: usize,
}

/// An episode with every embedding looked up, ready for repeated loss evaluation.
#[derive(Debug, Clone)]
pub struct PreparedEpisode<T: Scalar> {
    pub episode_id: usize,
    pub label_set: LabelSet,
    /// Label-name vectors, `L x D`; zero when the scorer ignores them.
    pub semantics: DMatrix<T>,
    pub groups: Vec<SupportGroup<T>>,
    pub queries: Vec<PreparedQuery<T>>,
}

impl<T: Scalar> PreparedEpisode<T> {
    pub fn n_labels(&self) -> usize {
        self.label_set.len()
    }
}

/// Looks up the vectors an episode needs. Context-free embedders share one support group.
pub fn prepare_episode<T: Scalar, E: Embedder<T> + ?Sized>(
    episode: &Episode,
    embedder: &E,
    config: &ScorerConfig,
) -> Result<PreparedEpisode<T>> {
    let labels = &episode.label_set;
    let (l, dim) = (labels.len(), embedder.dim());
    if episode.queries.is_empty() {
        return Err(Error::in_domain(
            &episode.domain_name,
            Error::NotEnoughQueries { needed: 1, available: 0 },
        ));
    }
    let mut semantics = DMatrix::zeros(l, dim);
    if config.needs_label_semantics() {
        for (j, name) in labels.labels().iter().enumerate() {
            let v = embedder.label(&episode.domain_name, name)?;
            check_dim(dim, v.len())?;
            semantics.set_row(j, &v.transpose());
        }
    }
    let support_labels = episode
        .support
        .sentences()
        .iter()
        .map(|s| labels.encode(s.labels()))
        .collect::<Result<Vec<_>>>()?;
    let shared = embedder.is_context_free() || !config.pairwise;
    let mut groups = Vec::new();
    let mut queries = Vec::with_capacity(episode.queries.len());
    for (q, sentence) in episode.queries.iter().enumerate() {
        if !shared || groups.is_empty() {
            let support = support_token_embeddings(embedder, episode, q, config.pairwise)?;
            for s in &support {
                check_dim(dim, s.ncols())?;
            }
            let (prototypes, present) = compute_prototypes(&support, &support_labels, l, dim);
            groups.push(SupportGroup { prototypes, present });
        }
        let embedding = pairwise_query_embedding(embedder, episode, q, config.pairwise)?;
        check_dim(dim, embedding.ncols())?;
        queries.push(PreparedQuery {
            embedding,
            gold: labels.encode(sentence.labels())?,
            group: groups.len() - 1,
        });
    }
    Ok(PreparedEpisode {
        episode_id: episode.episode_id,
        label_set: labels.clone(),
        semantics,
        groups,
        queries,
    })
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}

/// Gradient of the episode loss in the layout of [`ModelState::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Scalar> {
    pub pool: DMatrix<T>,
    pub table: Vec<T>,
    pub lambda: T,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(n_pool: usize, dim: usize) -> Self {
        Gradients {
            pool: DMatrix::zeros(n_pool, dim),
            table: vec![T::zero(); N_CELLS],
            lambda: T::zero(),
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.pool.len() + N_CELLS + 1);
        for i in 0..self.pool.nrows() {
            out.extend(self.pool.row(i).iter().copied());
        }
        out.extend_from_slice(&self.table);
        out.push(self.lambda);
        out
    }

    pub fn add_scaled(&mut self, other: &Gradients<T>, scale: T) {
        self.pool += &other.pool * scale;
        for (a, &b) in self.table.iter_mut().zip(&other.table) {
            *a += b * scale;
        }
        self.lambda += other.lambda * scale;
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.as_f64().is_finite())
    }
}

/// Bindings for every support group, built from the current parameters.
pub fn bind_episode<T: Scalar>(
    model: &ModelState<T>,
    episode: &PreparedEpisode<T>,
    assignment: &[usize],
) -> Result<Vec<EpisodeBindings<T>>> {
    bind_with(model, episode, assignment, None)
}

/// Projections of each support group, as built at the current parameters.
pub fn frozen_projections<T: Scalar>(bindings: &[EpisodeBindings<T>]) -> Vec<Option<DMatrix<T>>> {
    bindings.iter().map(|b| b.projection.clone()).collect()
}

fn bind_with<T: Scalar>(
    model: &ModelState<T>,
    episode: &PreparedEpisode<T>,
    assignment: &[usize],
    frozen: Option<&[Option<DMatrix<T>>]>,
) -> Result<Vec<EpisodeBindings<T>>> {
    if assignment.len() != episode.n_labels() {
        return Err(Error::Dimension {
            expected: episode.n_labels(),
            found: assignment.len(),
        });
    }
    check_dim(model.dim(), episode.semantics.ncols())?;
    let phi = model.pool.gather(assignment);
    episode
        .groups
        .iter()
        .enumerate()
        .map(|(g, group)| {
            let fixed = frozen.and_then(|f| f[g].as_ref());
            EpisodeBindings::build_with_projection(
                &model.config,
                &phi,
                &episode.semantics,
                group.prototypes.clone(),
                group.present.clone(),
                fixed,
            )
        })
        .collect()
}

/// Mean query NLL of an episode.
pub fn episode_loss<T: Scalar>(model: &ModelState<T>, episode: &PreparedEpisode<T>, assignment: &[usize]) -> Result<T> {
    let bindings = bind_episode(model, episode, assignment)?;
    loss_with_bindings(model, episode, &bindings)
}

/// Mean query NLL with the projections fixed to `frozen` instead of re-solved.
pub fn episode_loss_frozen<T: Scalar>(
    model: &ModelState<T>,
    episode: &PreparedEpisode<T>,
    assignment: &[usize],
    frozen: &[Option<DMatrix<T>>],
) -> Result<T> {
    let bindings = bind_with(model, episode, assignment, Some(frozen))?;
    loss_with_bindings(model, episode, &bindings)
}

fn loss_with_bindings<T: Scalar>(
    model: &ModelState<T>,
    episode: &PreparedEpisode<T>,
    bindings: &[EpisodeBindings<T>],
) -> Result<T> {
    let transition = model.transition(&episode.label_set);
    let mut total = T::zero();
    for q in &episode.queries {
        let em = bindings[q.group].emission_scores(&q.embedding);
        let score = CrfScore::new(&em, &transition, model.lambda)?;
        total += crf::nll_loss(&score, &q.gold)?;
    }
    Ok(total / T::of(episode.queries.len() as f64))
}

/// Mean query NLL and its gradient.
pub fn loss_and_gradients<T: Scalar>(
    model: &ModelState<T>,
    episode: &PreparedEpisode<T>,
    assignment: &[usize],
) -> Result<(T, Gradients<T>)> {
    let bindings = bind_episode(model, episode, assignment)?;
    let transition = model.transition(&episode.label_set);
    let cells = cell_map(&episode.label_set);
    let l = episode.n_labels();
    let (start, end) = (l, l + 1);
    let mut grads = Gradients::zeros(model.pool.len(), model.dim());
    let mut d_phi = DMatrix::zeros(l, model.dim());
    let mut total = T::zero();
    for q in &episode.queries {
        let b = &bindings[q.group];
        let em = b.emission_scores(&q.embedding);
        let score = CrfScore::new(&em, &transition, model.lambda)?;
        let m = crf::marginals(&score);
        total += m.log_z - crf::sequence_score(&score, &q.gold)?;

        let mut d_em = &m.unary * model.lambda;
        let mut d_lambda = m.unary.component_mul(&em).sum();
        for (t, &y) in q.gold.iter().enumerate() {
            d_em[(t, y)] -= model.lambda;
            d_lambda -= em[(t, y)];
        }
        grads.lambda += d_lambda;

        if model.config.transitions {
            let mut counts = m.transitions.clone();
            let mut prev = start;
            for &y in &q.gold {
                counts[(prev, y)] -= T::one();
                prev = y;
            }
            counts[(prev, end)] -= T::one();
            for p in 0..l + 2 {
                for r in 0..l + 2 {
                    if let Some(c) = cells[(p, r)] {
                        grads.table[c] += counts[(p, r)];
                    }
                }
            }
        }
        d_phi += b.reference_gradient(&q.embedding, &d_em);
    }
    let n = T::of(episode.queries.len() as f64);
    for (j, &row) in assignment.iter().enumerate() {
        let mut r = grads.pool.row_mut(row);
        r += d_phi.row(j) / n;
    }
    for v in grads.table.iter_mut() {
        *v /= n;
    }
    grads.lambda /= n;
    Ok((total / n, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    Viterbi,
    Greedy,
    /// Greedy restricted to BIO-legal continuations.
    Rule,
}

impl std::str::FromStr for Decoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "viterbi" => Ok(Decoder::Viterbi),
            "greedy" => Ok(Decoder::Greedy),
            "rule" | "rule-greedy" => Ok(Decoder::Rule),
            _ => Err(Error::Config(format!("unknown decoder {s:?}"))),
        }
    }
}

impl std::fmt::Display for Decoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decoder::Viterbi => "viterbi",
            Decoder::Greedy => "greedy",
            Decoder::Rule => "rule",
        })
    }
}

/// Predicted label ids for every query, using the deterministic reference assignment.
pub fn predict<T: Scalar>(model: &ModelState<T>, episode: &PreparedEpisode<T>, decoder: Decoder) -> Result<Vec<Vec<usize>>> {
    let assignment = assign_references(model.pool.len(), episode.n_labels(), AssignMode::Deterministic)?;
    let bindings = bind_episode(model, episode, &assignment)?;
    let transition = model.transition(&episode.label_set);
    let legal = match decoder {
        Decoder::Rule => Some(rule_mask(&episode.label_set)),
        _ => None,
    };
    episode
        .queries
        .iter()
        .map(|q| {
            let em = bindings[q.group].emission_scores(&q.embedding);
            Ok(match decoder {
                Decoder::Viterbi => crf::viterbi(&CrfScore::new(&em, &transition, model.lambda)?).0,
                Decoder::Greedy => crf::greedy_decode(&em),
                Decoder::Rule => crf::constrained_greedy(&em, legal.as_ref().expect("rule mask")),
            })
        })
        .collect()
}

/// Span F1 of one episode's predictions against its gold labels.
pub fn evaluate_episode<T: Scalar>(model: &ModelState<T>, episode: &PreparedEpisode<T>, decoder: Decoder) -> Result<Prf> {
    let preds = predict(model, episode, decoder)?;
    let labels = &episode.label_set;
    let preds: Vec<Vec<String>> = preds.iter().map(|p| labels.decode(p)).collect();
    let golds: Vec<Vec<String>> = episode.queries.iter().map(|q| labels.decode(&q.gold)).collect();
    episode_f1(&preds, &golds)
}

/// Per-episode span F1 in episode order.
pub fn evaluate_episodes<T: Scalar>(
    model: &ModelState<T>,
    episodes: &[PreparedEpisode<T>],
    decoder: Decoder,
) -> Result<Vec<Prf>> {
    episodes.par_iter().map(|e| evaluate_episode(model, e, decoder)).collect()
}

/// Decoder the model was configured for: Viterbi with transitions, greedy without.
pub fn default_decoder(config: &ScorerConfig) -> Decoder {
    if config.transitions {
        Decoder::Viterbi
    } else {
        Decoder::Greedy
    }
}
