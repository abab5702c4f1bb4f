//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use fewtag::{Domain, LabelSet, Sentence};

/// Every label sequence of length `n` over `l` labels.
pub fn all_sequences(n: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..l).map(move |j| {
                    let mut q = p.clone();
                    q.push(j);
                    q
                })
            })
            .collect();
    }
    out
}

/// Score of one path read straight off the matrices; transitions index `labels ++ [START, END]`.
pub fn path_score(emission: &DMatrix<f64>, transition: &DMatrix<f64>, lambda: f64, path: &[usize]) -> f64 {
    let l = emission.ncols();
    let (start, end) = (l, l + 1);
    let mut s = transition[(start, path[0])] + transition[(path[path.len() - 1], end)];
    for w in path.windows(2) {
        s += transition[(w[0], w[1])];
    }
    s + lambda * path.iter().enumerate().map(|(t, &y)| emission[(t, y)]).sum::<f64>()
}

pub struct Exhaustive {
    pub log_z: f64,
    pub best: Vec<usize>,
    pub best_score: f64,
    /// `p(y_t = j)`.
    pub unary: DMatrix<f64>,
}

/// Partition function, argmax (first in lexicographic order on ties) and marginals by enumeration.
pub fn exhaustive_crf(emission: &DMatrix<f64>, transition: &DMatrix<f64>, lambda: f64) -> Exhaustive {
    let (n, l) = emission.shape();
    let paths = all_sequences(n, l);
    let scores: Vec<f64> = paths.iter().map(|p| path_score(emission, transition, lambda, p)).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let log_z = max + total.ln();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let mut unary = DMatrix::zeros(n, l);
    for (p, s) in paths.iter().zip(&scores) {
        let w = (s - log_z).exp();
        for (t, &y) in p.iter().enumerate() {
            unary[(t, y)] += w;
        }
    }
    Exhaustive {
        log_z,
        best: paths[best].clone(),
        best_score: scores[best],
        unary,
    }
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    use rand_distr::{Distribution, StandardNormal};
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn slot_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("slot{i:02}")).collect()
}

/// Abstract transition class decided from label strings alone.
pub fn classify_by_name(prev: &str, next: &str) -> Option<(&'static str, &'static str)> {
    fn split(l: &str) -> (&str, &str) {
        match l.split_once('-') {
            Some((p, s)) => (p, s),
            None => (l, ""),
        }
    }
    let (pp, ps) = split(prev);
    let (np, ns) = split(next);
    let row = match pp {
        "START" => "START",
        "O" => "O",
        "B" => "B",
        "I" => "I",
        _ => return None,
    };
    let col = match np {
        "START" => return None,
        "END" if row == "START" => return None,
        "END" => "END",
        "O" => "O",
        "B" if ps.is_empty() || ps == ns => "sB",
        "B" => "dB",
        "I" if ps.is_empty() || ps == ns => "sI",
        "I" => "dI",
        _ => return None,
    };
    Some((row, col))
}

/// Names of `labels ++ [START, END]`.
pub fn state_names(labels: &LabelSet) -> Vec<String> {
    let mut names = labels.labels().to_vec();
    names.push("START".into());
    names.push("END".into());
    names
}

fn counts<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> BTreeMap<String, usize> {
    let mut c = BTreeMap::new();
    for s in sentences {
        for l in s.labels() {
            *c.entry(l.clone()).or_insert(0) += 1;
        }
    }
    c
}

/// Criterion 1: every label occurring in the domain occurs at least `k` times in the support.
pub fn covers(domain: &Domain, support: &[Sentence], k: usize) -> Result<(), String> {
    let have = counts(support);
    for label in counts(domain.sentences()).keys() {
        let n = have.get(label).copied().unwrap_or(0);
        if n < k {
            return Err(format!("{label} occurs {n} < {k} times"));
        }
    }
    Ok(())
}

/// Criterion 2: dropping any one support sentence breaks criterion 1.
pub fn minimal(domain: &Domain, support: &[Sentence], k: usize) -> Result<(), String> {
    for i in 0..support.len() {
        let rest: Vec<Sentence> = support
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, s)| s.clone())
            .collect();
        if covers(domain, &rest, k).is_ok() {
            return Err(format!("support sentence {i} is redundant"));
        }
    }
    Ok(())
}

/// A 200-sentence domain with uneven label frequencies.
pub fn random_domain(rng: &mut ChaCha8Rng, n_sentences: usize, n_slots: usize) -> Domain {
    let slots = slot_names(n_slots);
    let sentences = (0..n_sentences)
        .map(|i| {
            let mut pairs: Vec<(String, String)> = Vec::new();
            let len = rng.random_range(3..10);
            while pairs.len() < len {
                if rng.random_bool(0.6) {
                    pairs.push((format!("w{}", rng.random_range(0..50)), "O".into()));
                } else {
                    // skewed choice so some slots are rare
                    let s = &slots[(rng.random_range(0..n_slots * n_slots) as f64).sqrt() as usize];
                    pairs.push((format!("b{i}"), format!("B-{s}")));
                    for _ in 0..rng.random_range(0..3) {
                        pairs.push((format!("i{i}"), format!("I-{s}")));
                    }
                }
            }
            Sentence::from_pairs(&pairs).unwrap()
        })
        .collect();
    Domain::new("random", sentences).unwrap()
}

/// Sentences of a conlleval-style file (`token gold pred` per line, blank line between sentences).
pub fn read_conlleval(text: &str) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let (mut golds, mut preds) = (vec![], vec![]);
    let (mut g, mut p) = (vec![], vec![]);
    for line in text.lines().chain(std::iter::once("")) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            if !g.is_empty() {
                golds.push(std::mem::take(&mut g));
                preds.push(std::mem::take(&mut p));
            }
            continue;
        }
        g.push(f[f.len() - 2].to_string());
        p.push(f[f.len() - 1].to_string());
    }
    (golds, preds)
}

/// Overall `(precision, recall, FB1)` from a conlleval report.
pub fn reported_prf(report: &str) -> (f64, f64, f64) {
    let line = report.lines().find(|l| l.starts_with("accuracy")).expect("overall line");
    let grab = |key: &str| -> f64 {
        let rest = &line[line.find(key).expect(key) + key.len()..];
        rest.trim_start()
            .trim_start_matches(':')
            .trim_start()
            .split(|c: char| c == '%' || c == ';' || c.is_whitespace())
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    (grab("precision:"), grab("recall:"), grab("FB1:"))
}
