//! Linear-chain CRF over emission and expanded transition scores.
//!
//! A label sequence `y` of a length-`n` sentence scores
//! `TRANS(y) + lambda * EMIT(y)`, where `TRANS` includes the START -> y_1 and
//! y_n -> END transitions and `EMIT` sums the per-token emission entries.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};
use crate::transition::ExpandedTransition;

/// Emission rows (`n x L`), transitions over `L + 2` states and the emission weight.
#[derive(Debug, Clone, Copy)]
pub struct CrfScore<'a, T: Scalar> {
    pub emission: &'a DMatrix<T>,
    pub transition: &'a ExpandedTransition<T>,
    pub lambda: T,
}

impl<'a, T: Scalar> CrfScore<'a, T> {
    pub fn new(
        emission: &'a DMatrix<T>,
        transition: &'a ExpandedTransition<T>,
        lambda: T,
    ) -> Result<Self> {
        if emission.ncols() != transition.n_labels() {
            return Err(Error::Dimension {
                expected: transition.n_labels(),
                found: emission.ncols(),
            });
        }
        Ok(CrfScore {
            emission,
            transition,
            lambda,
        })
    }

    pub fn len(&self) -> usize {
        self.emission.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.emission.nrows() == 0
    }

    pub fn n_labels(&self) -> usize {
        self.emission.ncols()
    }

    fn trans(&self, prev: usize, next: usize) -> T {
        self.transition.scores[(prev, next)]
    }

    fn emit(&self, t: usize, j: usize) -> T {
        self.lambda * self.emission[(t, j)]
    }

    fn check(&self, labels: &[usize]) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::Length {
                left: labels.len(),
                right: self.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= self.n_labels()) {
            return Err(Error::UnknownLabel(format!("label id {bad}")));
        }
        Ok(())
    }

    /// Transition part of the score of `labels`, START and END included.
    pub fn transition_score(&self, labels: &[usize]) -> Result<T> {
        self.check(labels)?;
        let mut total = self.trans(self.transition.start(), labels[0]);
        for w in labels.windows(2) {
            total += self.trans(w[0], w[1]);
        }
        Ok(total + self.trans(labels[labels.len() - 1], self.transition.end()))
    }

    /// Unweighted emission sum of `labels`.
    pub fn emission_score(&self, labels: &[usize]) -> Result<T> {
        self.check(labels)?;
        Ok(labels
            .iter()
            .enumerate()
            .map(|(t, &y)| self.emission[(t, y)])
            .sum())
    }
}

pub fn sequence_score<T: Scalar>(score: &CrfScore<'_, T>, labels: &[usize]) -> Result<T> {
    if labels.is_empty() {
        return Err(Error::Length {
            left: 0,
            right: score.len(),
        });
    }
    Ok(score.transition_score(labels)? + score.lambda * score.emission_score(labels)?)
}

fn forward<T: Scalar>(score: &CrfScore<'_, T>) -> DMatrix<T> {
    let (n, l) = (score.len(), score.n_labels());
    let start = score.transition.start();
    let mut alpha = DMatrix::from_element(n, l, T::neg_inf());
    for j in 0..l {
        alpha[(0, j)] = score.trans(start, j) + score.emit(0, j);
    }
    for t in 1..n {
        for j in 0..l {
            let incoming = (0..l).map(|i| alpha[(t - 1, i)] + score.trans(i, j));
            alpha[(t, j)] = log_sum_exp(incoming) + score.emit(t, j);
        }
    }
    alpha
}

fn backward<T: Scalar>(score: &CrfScore<'_, T>) -> DMatrix<T> {
    let (n, l) = (score.len(), score.n_labels());
    let end = score.transition.end();
    let mut beta = DMatrix::from_element(n, l, T::neg_inf());
    for i in 0..l {
        beta[(n - 1, i)] = score.trans(i, end);
    }
    for t in (0..n - 1).rev() {
        for i in 0..l {
            let outgoing =
                (0..l).map(|j| score.trans(i, j) + score.emit(t + 1, j) + beta[(t + 1, j)]);
            beta[(t, i)] = log_sum_exp(outgoing);
        }
    }
    beta
}

/// `log Z`: log-sum-exp of the score over all `L^n` label sequences.
pub fn log_partition<T: Scalar>(score: &CrfScore<'_, T>) -> T {
    assert!(!score.is_empty(), "log_partition needs at least one token");
    let alpha = forward(score);
    let n = score.len();
    let end = score.transition.end();
    log_sum_exp((0..score.n_labels()).map(|j| alpha[(n - 1, j)] + score.trans(j, end)))
}

/// Posterior marginals of a CRF.
#[derive(Debug, Clone)]
pub struct Marginals<T: Scalar> {
    pub log_z: T,
    /// `p(y_t = j)`, `n x L`.
    pub unary: DMatrix<T>,
    /// Expected number of uses of each transition cell, `(L+2) x (L+2)`.
    pub transitions: DMatrix<T>,
}

pub fn marginals<T: Scalar>(score: &CrfScore<'_, T>) -> Marginals<T> {
    let (n, l) = (score.len(), score.n_labels());
    let alpha = forward(score);
    let beta = backward(score);
    let (start, end) = (score.transition.start(), score.transition.end());
    let log_z = log_sum_exp((0..l).map(|j| alpha[(n - 1, j)] + score.trans(j, end)));
    let prob = |x: T| {
        if x.is_impossible() {
            T::zero()
        } else {
            (x - log_z).exp()
        }
    };
    let unary = DMatrix::from_fn(n, l, |t, j| prob(alpha[(t, j)] + beta[(t, j)]));
    let mut transitions = DMatrix::zeros(l + 2, l + 2);
    for j in 0..l {
        transitions[(start, j)] = unary[(0, j)];
        transitions[(j, end)] += unary[(n - 1, j)];
    }
    for t in 1..n {
        for i in 0..l {
            for j in 0..l {
                let x = alpha[(t - 1, i)] + score.trans(i, j) + score.emit(t, j) + beta[(t, j)];
                transitions[(i, j)] += prob(x);
            }
        }
    }
    Marginals {
        log_z,
        unary,
        transitions,
    }
}

/// Negative log-likelihood of `gold`: `log Z - score(gold)`.
pub fn nll_loss<T: Scalar>(score: &CrfScore<'_, T>, gold: &[usize]) -> Result<T> {
    let s = sequence_score(score, gold)?;
    Ok(log_partition(score) - s)
}

/// Highest-scoring label sequence and its score. Ties go to the smallest label id.
pub fn viterbi<T: Scalar>(score: &CrfScore<'_, T>) -> (Vec<usize>, T) {
    let (n, l) = (score.len(), score.n_labels());
    assert!(n > 0, "viterbi needs at least one token");
    let start = score.transition.start();
    let end = score.transition.end();
    let mut delta = DMatrix::from_element(n, l, T::neg_inf());
    let mut back = DMatrix::from_element(n, l, 0usize);
    for j in 0..l {
        delta[(0, j)] = score.trans(start, j) + score.emit(0, j);
    }
    for t in 1..n {
        for j in 0..l {
            let (best_i, best) = argmax((0..l).map(|i| delta[(t - 1, i)] + score.trans(i, j)));
            delta[(t, j)] = best + score.emit(t, j);
            back[(t, j)] = best_i;
        }
    }
    let (mut y, best) = argmax((0..l).map(|j| delta[(n - 1, j)] + score.trans(j, end)));
    let mut path = vec![0; n];
    for t in (0..n).rev() {
        path[t] = y;
        y = back[(t, y)];
    }
    (path, best)
}

/// First index of the maximum (smallest index wins ties).
fn argmax<T: Scalar>(values: impl Iterator<Item = T>) -> (usize, T) {
    let mut best = (0, T::neg_inf());
    for (i, v) in values.enumerate() {
        if i == 0 || v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Per-token argmax of the emission rows.
pub fn greedy_decode<T: Scalar>(emission: &DMatrix<T>) -> Vec<usize> {
    (0..emission.nrows())
        .map(|t| argmax(emission.row(t).iter().copied()).0)
        .collect()
}

/// Left-to-right argmax restricted to labels the mask allows after the previous choice.
///
/// `legal` is over `labels ++ [START, END]`. Falls back to label 0 (`O`) when nothing is legal.
pub fn constrained_greedy<T: Scalar>(emission: &DMatrix<T>, legal: &DMatrix<bool>) -> Vec<usize> {
    let l = emission.ncols();
    let mut prev = l; // START
    let mut out = Vec::with_capacity(emission.nrows());
    for t in 0..emission.nrows() {
        let mut best: Option<(usize, T)> = None;
        for j in 0..l {
            if !legal[(prev, j)] {
                continue;
            }
            let v = emission[(t, j)];
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        let y = best.map_or(0, |(j, _)| j);
        out.push(y);
        prev = y;
    }
    out
}
