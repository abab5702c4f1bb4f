//! conlleval-compatible span scoring, episode/seed aggregation and bigram analysis.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::corpus::Tag;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub slot: String,
    pub start: usize,
    pub end: usize,
}

/// Spans under conlleval semantics: an `I-x` that does not continue an `x` span
/// opens a new one. With `strict` such tags are dropped instead.
pub fn extract_spans_with(labels: &[String], strict: bool) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    let mut open: Option<(&str, usize)> = None;
    let close = |open: &mut Option<(&str, usize)>, spans: &mut Vec<Span>, end: usize| {
        if let Some((slot, start)) = open.take() {
            spans.push(Span {
                slot: slot.to_string(),
                start,
                end,
            });
        }
    };
    for (t, label) in labels.iter().enumerate() {
        match Tag::parse(label)? {
            Tag::O => close(&mut open, &mut spans, t.wrapping_sub(1)),
            Tag::B(slot) => {
                close(&mut open, &mut spans, t.wrapping_sub(1));
                open = Some((slot, t));
            }
            Tag::I(slot) => match open {
                Some((s, _)) if s == slot => {}
                _ => {
                    close(&mut open, &mut spans, t.wrapping_sub(1));
                    if !strict {
                        open = Some((slot, t));
                    }
                }
            },
        }
    }
    close(&mut open, &mut spans, labels.len().wrapping_sub(1));
    Ok(spans)
}

pub fn extract_spans(labels: &[String]) -> Result<Vec<Span>> {
    extract_spans_with(labels, false)
}

/// Writes spans back as IOB2 labels over `n` tokens.
pub fn spans_to_labels(spans: &[Span], n: usize) -> Vec<String> {
    let mut out = vec!["O".to_string(); n];
    for s in spans {
        out[s.start] = format!("B-{}", s.slot);
        for label in &mut out[s.start + 1..=s.end] {
            *label = format!("I-{}", s.slot);
        }
    }
    out
}

/// Micro-averaged span scores in percentage points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        if gold == 0 && predicted == 0 {
            return Prf {
                precision: 100.0,
                recall: 100.0,
                f1: 100.0,
                correct,
                predicted,
                gold,
            };
        }
        let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
        let precision = pct(correct, predicted);
        let recall = pct(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            correct,
            predicted,
            gold,
        }
    }
}

impl fmt::Display for Prf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "precision: {:6.2}%; recall: {:6.2}%; FB1: {:6.2}",
            self.precision, self.recall, self.f1
        )
    }
}

/// Span precision, recall and F1 pooled over all sentences of an episode.
///
/// An episode with neither gold nor predicted spans scores 100.
pub fn episode_f1(predictions: &[Vec<String>], golds: &[Vec<String>]) -> Result<Prf> {
    if predictions.len() != golds.len() {
        return Err(Error::Length {
            left: predictions.len(),
            right: golds.len(),
        });
    }
    let (mut correct, mut predicted, mut gold) = (0, 0, 0);
    for (p, g) in predictions.iter().zip(golds) {
        if p.len() != g.len() {
            return Err(Error::Length {
                left: p.len(),
                right: g.len(),
            });
        }
        let ps = extract_spans(p)?;
        let gs = extract_spans(g)?;
        predicted += ps.len();
        gold += gs.len();
        correct += ps.iter().filter(|s| gs.contains(s)).count();
    }
    Ok(Prf::from_counts(correct, predicted, gold))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub mean_f1: f64,
    pub episodes: Vec<Prf>,
}

/// Per-episode scores grouped by seed, with the seed-level mean and population std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<SeedSummary>,
    pub mean_f1: f64,
    pub std_f1: f64,
}

/// Mean F1 over episodes within each seed, then mean and population std over seeds.
pub fn aggregate(per_seed: Vec<(u64, Vec<Prf>)>) -> Result<EvalReport> {
    if per_seed.is_empty() || per_seed.iter().any(|(_, e)| e.is_empty()) {
        return Err(Error::Config("cannot aggregate an empty set of episodes".into()));
    }
    let seeds: Vec<SeedSummary> = per_seed
        .into_iter()
        .map(|(seed, episodes)| {
            let f1s: Vec<f64> = episodes.iter().map(|e| e.f1).collect();
            SeedSummary {
                seed,
                mean_f1: mean_std(&f1s).0,
                episodes,
            }
        })
        .collect();
    let means: Vec<f64> = seeds.iter().map(|s| s.mean_f1).collect();
    let (mean_f1, std_f1) = mean_std(&means);
    Ok(EvalReport {
        seeds,
        mean_f1,
        std_f1,
    })
}

impl EvalReport {
    /// Aligned-column text rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>12}  {:>9}  {:>8}", "seed", "episodes", "mean F1");
        for s in &self.seeds {
            let _ = writeln!(out, "{:>12}  {:>9}  {:>8.2}", s.seed, s.episodes.len(), s.mean_f1);
        }
        let _ = writeln!(out, "{:>12}  {:>9}  {:>8.2}  (std {:.2})", "overall", "", self.mean_f1, self.std_f1);
        out
    }

    /// One line per episode: `seed,episode,precision,recall,f1,correct,predicted,gold`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,episode,precision,recall,f1,correct,predicted,gold\n");
        for s in &self.seeds {
            for (i, e) in s.episodes.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{:.4},{:.4},{:.4},{},{},{}",
                    s.seed, i, e.precision, e.recall, e.f1, e.correct, e.predicted, e.gold
                );
            }
        }
        out
    }
}

/// Abstract categories of adjacent gold label pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bigram {
    #[serde(rename = "O-O")]
    OO,
    #[serde(rename = "O-B")]
    OB,
    #[serde(rename = "B-O")]
    BO,
    #[serde(rename = "I-O")]
    IO,
    #[serde(rename = "I-B/B-B")]
    XB,
    #[serde(rename = "B-I")]
    BI,
    #[serde(rename = "I-I")]
    II,
    /// Only seen in data that opens a span with `I`.
    #[serde(rename = "O-I")]
    OI,
}

impl Bigram {
    pub const ALL: [Bigram; 8] = [
        Bigram::OO,
        Bigram::OB,
        Bigram::BO,
        Bigram::IO,
        Bigram::XB,
        Bigram::BI,
        Bigram::II,
        Bigram::OI,
    ];

    pub fn classify(prev: Tag<'_>, next: Tag<'_>) -> Self {
        match (prev, next) {
            (Tag::O, Tag::O) => Bigram::OO,
            (Tag::O, Tag::B(_)) => Bigram::OB,
            (Tag::O, Tag::I(_)) => Bigram::OI,
            (Tag::B(_), Tag::O) => Bigram::BO,
            (Tag::I(_), Tag::O) => Bigram::IO,
            (_, Tag::B(_)) => Bigram::XB,
            (Tag::B(_), Tag::I(_)) => Bigram::BI,
            (Tag::I(_), Tag::I(_)) => Bigram::II,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Bigram::OO => "O-O",
            Bigram::OB => "O-B",
            Bigram::BO => "B-O",
            Bigram::IO => "I-O",
            Bigram::XB => "I-B/B-B",
            Bigram::BI => "B-I",
            Bigram::II => "I-I",
            Bigram::OI => "O-I",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BigramRow {
    pub total: usize,
    pub correct: usize,
    /// Share of all bigrams, percent.
    pub proportion: f64,
    /// Share of this category's bigrams with both positions right, percent.
    pub accuracy: f64,
}

/// Accuracy per gold bigram category; a bigram is right when both predicted labels match.
pub fn bigram_accuracy(
    predictions: &[Vec<String>],
    golds: &[Vec<String>],
) -> Result<BTreeMap<Bigram, BigramRow>> {
    if predictions.len() != golds.len() {
        return Err(Error::Length {
            left: predictions.len(),
            right: golds.len(),
        });
    }
    let mut table: BTreeMap<Bigram, BigramRow> = BTreeMap::new();
    let mut all = 0usize;
    for (p, g) in predictions.iter().zip(golds) {
        if p.len() != g.len() {
            return Err(Error::Length {
                left: p.len(),
                right: g.len(),
            });
        }
        for t in 1..g.len() {
            let cat = Bigram::classify(Tag::parse(&g[t - 1])?, Tag::parse(&g[t])?);
            let row = table.entry(cat).or_default();
            row.total += 1;
            if p[t - 1] == g[t - 1] && p[t] == g[t] {
                row.correct += 1;
            }
            all += 1;
        }
    }
    for row in table.values_mut() {
        row.proportion = 100.0 * row.total as f64 / all as f64;
        row.accuracy = 100.0 * row.correct as f64 / row.total as f64;
    }
    Ok(table)
}

pub fn bigram_table_text(table: &BTreeMap<Bigram, BigramRow>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<9} {:>8} {:>11} {:>9}", "bigram", "count", "proportion", "accuracy");
    for (cat, row) in table {
        let _ = writeln!(
            out,
            "{:<9} {:>8} {:>10.2}% {:>8.2}%",
            cat.name(),
            row.total,
            row.proportion,
            row.accuracy
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn span(slot: &str, start: usize, end: usize) -> Span {
        Span {
            slot: slot.into(),
            start,
            end,
        }
    }

    #[test]
    fn spans() {
        assert_eq!(extract_spans(&labels("O B-a I-a O")).unwrap(), [span("a", 1, 2)]);
        assert_eq!(extract_spans(&labels("O I-b")).unwrap(), [span("b", 1, 1)]);
        assert_eq!(
            extract_spans(&labels("B-a B-a")).unwrap(),
            [span("a", 0, 0), span("a", 1, 1)]
        );
        assert_eq!(
            extract_spans(&labels("B-a I-b I-b")).unwrap(),
            [span("a", 0, 0), span("b", 1, 2)]
        );
        assert!(extract_spans_with(&labels("O I-b"), true).unwrap().is_empty());
        assert_eq!(
            extract_spans_with(&labels("B-a I-b B-b I-b"), true).unwrap(),
            [span("a", 0, 0), span("b", 2, 3)]
        );
    }

    #[test]
    fn f1_conventions() {
        let g = vec![labels("O B-a I-a"), labels("B-b")];
        assert_eq!(episode_f1(&g, &g).unwrap().f1, 100.0);
        let none = vec![labels("O O O"), labels("O")];
        let prf = episode_f1(&none, &g).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (0.0, 0.0, 0.0));
        assert_eq!(episode_f1(&none, &none).unwrap().f1, 100.0);
        assert_eq!(episode_f1(&g, &none).unwrap().f1, 0.0);
        assert!(episode_f1(&g[..1], &g).is_err());
        assert!(episode_f1(&[labels("O")], &[labels("O O")]).is_err());
    }

    #[test]
    fn partial_match() {
        let gold = vec![labels("B-a I-a O B-b")];
        let pred = vec![labels("B-a O O B-b")];
        let prf = episode_f1(&pred, &gold).unwrap();
        assert_eq!((prf.correct, prf.predicted, prf.gold), (1, 2, 2));
        assert_eq!(prf.f1, 50.0);
    }

    #[test]
    fn aggregation() {
        let one = |f1| Prf { f1, ..Prf::from_counts(0, 0, 0) };
        let r = aggregate(vec![(0, vec![one(70.41)])]).unwrap();
        assert_eq!((r.mean_f1, r.std_f1), (70.41, 0.0));
        let r = aggregate(vec![(1, vec![one(60.0)]), (2, vec![one(80.0)])]).unwrap();
        assert_eq!((r.mean_f1, r.std_f1), (70.0, 10.0));
        let r = aggregate(vec![(1, vec![one(50.0), one(70.0)])]).unwrap();
        assert_eq!(r.seeds[0].mean_f1, 60.0);
        assert!(aggregate(vec![]).is_err());
        assert!(r.to_text().contains("60.00"));
        assert_eq!(r.to_csv().lines().count(), 3);
    }

    #[test]
    fn bigrams() {
        let g = vec![labels("O O O")];
        let t = bigram_accuracy(&g, &g).unwrap();
        assert_eq!(t[&Bigram::OO].accuracy, 100.0);
        assert_eq!(t[&Bigram::OO].proportion, 100.0);
        let t = bigram_accuracy(&[labels("B-a I-b")], &[labels("B-a I-a")]).unwrap();
        assert_eq!(t[&Bigram::BI].accuracy, 0.0);
        assert_eq!(Bigram::classify(Tag::I("a"), Tag::B("b")), Bigram::XB);
        assert_eq!(Bigram::classify(Tag::B("a"), Tag::B("a")), Bigram::XB);
    }
}
