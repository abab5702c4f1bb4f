//! Collapsed label-dependency table and its expansion to concrete label sets.
//!
//! Transitions are scored over abstract source rows `START, O, B, I` and target
//! columns `O, sB, dB, sI, dI, END`, where `s`/`d` mark a target slot that is
//! the same as / different from the source slot. Only 19 cells are live; the
//! expansion to a concrete `(L+2)x(L+2)` matrix copies each live value into
//! every specific transition that collapses onto it.

use std::fmt;

use nalgebra::DMatrix;

use crate::corpus::{LabelSet, Tag};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Row {
    Start,
    O,
    B,
    I,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Col {
    O,
    SameB,
    DiffB,
    SameI,
    DiffI,
    End,
}

/// The live cells in storage order.
pub const LIVE_CELLS: [(Row, Col); 19] = [
    (Row::Start, Col::O),
    (Row::Start, Col::SameB),
    (Row::Start, Col::SameI),
    (Row::O, Col::O),
    (Row::O, Col::SameB),
    (Row::O, Col::SameI),
    (Row::O, Col::End),
    (Row::B, Col::O),
    (Row::B, Col::SameB),
    (Row::B, Col::DiffB),
    (Row::B, Col::SameI),
    (Row::B, Col::DiffI),
    (Row::B, Col::End),
    (Row::I, Col::O),
    (Row::I, Col::SameB),
    (Row::I, Col::DiffB),
    (Row::I, Col::SameI),
    (Row::I, Col::DiffI),
    (Row::I, Col::End),
];

pub const N_CELLS: usize = LIVE_CELLS.len();

pub fn cell_name(cell: usize) -> String {
    let (r, c) = LIVE_CELLS[cell];
    let row = match r {
        Row::Start => "START",
        Row::O => "O",
        Row::B => "B",
        Row::I => "I",
    };
    let col = match c {
        Col::O => "O",
        Col::SameB => "sB",
        Col::DiffB => "dB",
        Col::SameI => "sI",
        Col::DiffI => "dI",
        Col::End => "END",
    };
    format!("{row}->{col}")
}

/// A position in an expanded transition matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum State<'a> {
    Start,
    End,
    Label(Tag<'a>),
}

impl fmt::Display for State<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            State::Start => f.write_str("START"),
            State::End => f.write_str("END"),
            State::Label(Tag::O) => f.write_str("O"),
            State::Label(Tag::B(s)) => write!(f, "B-{s}"),
            State::Label(Tag::I(s)) => write!(f, "I-{s}"),
        }
    }
}

/// Live cell a specific transition collapses onto, or `None` for structurally impossible pairs.
pub fn collapse(prev: State<'_>, next: State<'_>) -> Option<usize> {
    let (row, prev_slot) = match prev {
        State::End => return None,
        State::Start => (Row::Start, None),
        State::Label(Tag::O) => (Row::O, None),
        State::Label(Tag::B(s)) => (Row::B, Some(s)),
        State::Label(Tag::I(s)) => (Row::I, Some(s)),
    };
    let same = |slot: &str| prev_slot.is_none() || prev_slot == Some(slot);
    let col = match next {
        State::Start => return None,
        State::End if row == Row::Start => return None,
        State::End => Col::End,
        State::Label(Tag::O) => Col::O,
        State::Label(Tag::B(s)) if same(s) => Col::SameB,
        State::Label(Tag::B(_)) => Col::DiffB,
        State::Label(Tag::I(s)) if same(s) => Col::SameI,
        State::Label(Tag::I(_)) => Col::DiffI,
    };
    LIVE_CELLS.iter().position(|&c| c == (row, col))
}

/// Expanded-matrix state of index `i` over a label set: labels first, then START, END.
pub fn state_of(labels: &LabelSet, i: usize) -> State<'_> {
    let l = labels.len();
    match i {
        _ if i < l => State::Label(labels.tag(i)),
        _ if i == l => State::Start,
        _ => State::End,
    }
}

/// Live cell for the transition between two expanded-matrix states.
pub fn collapsed_index(labels: &LabelSet, prev: usize, next: usize) -> Result<usize> {
    let (p, n) = (state_of(labels, prev), state_of(labels, next));
    collapse(p, n).ok_or_else(|| Error::Config(format!("impossible transition {p} -> {n}")))
}

/// For every `(prev, next)` of the expanded matrix, the live cell it reads (row-major).
pub fn cell_map(labels: &LabelSet) -> DMatrix<Option<usize>> {
    let n = labels.len() + 2;
    DMatrix::from_fn(n, n, |p, q| collapse(state_of(labels, p), state_of(labels, q)))
}

/// The 19 learnable abstract transition scores (unnormalized log-potentials).
#[derive(Debug, Clone, PartialEq)]
pub struct CollapsedTransitionTable<T: Scalar> {
    values: Vec<T>,
}

impl<T: Scalar> Default for CollapsedTransitionTable<T> {
    fn default() -> Self {
        CollapsedTransitionTable {
            values: vec![T::zero(); N_CELLS],
        }
    }
}

impl<T: Scalar> CollapsedTransitionTable<T> {
    pub fn from_values(values: Vec<T>) -> Result<Self> {
        if values.len() != N_CELLS {
            return Err(Error::Dimension {
                expected: N_CELLS,
                found: values.len(),
            });
        }
        Ok(CollapsedTransitionTable { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn get(&self, row: Row, col: Col) -> Option<T> {
        LIVE_CELLS
            .iter()
            .position(|&c| c == (row, col))
            .map(|i| self.values[i])
    }

    /// Fills a concrete transition matrix for `labels`; impossible cells hold the minus-infinity sentinel.
    pub fn expand(&self, labels: &LabelSet) -> ExpandedTransition<T> {
        let map = cell_map(labels);
        ExpandedTransition {
            scores: map.map(|c| c.map_or_else(T::neg_inf, |i| self.values[i])),
        }
    }
}

/// Transition scores over `labels ++ [START, END]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedTransition<T: Scalar> {
    pub scores: DMatrix<T>,
}

impl<T: Scalar> ExpandedTransition<T> {
    /// Number of real labels (excludes START and END).
    pub fn n_labels(&self) -> usize {
        self.scores.nrows() - 2
    }

    pub fn start(&self) -> usize {
        self.n_labels()
    }

    pub fn end(&self) -> usize {
        self.n_labels() + 1
    }

    /// All-zero transitions among possible cells.
    pub fn uniform(labels: &LabelSet) -> Self {
        CollapsedTransitionTable::<T>::default().expand(labels)
    }

    /// Keeps the scores of legal cells and sets every other cell to minus infinity.
    pub fn masked(&self, legal: &DMatrix<bool>) -> Self {
        ExpandedTransition {
            scores: self
                .scores
                .zip_map(legal, |s, ok| if ok { s } else { T::neg_inf() }),
        }
    }
}

/// BIO legality over `labels ++ [START, END]`: `I-x` only after `B-x` or `I-x`.
pub fn rule_mask(labels: &LabelSet) -> DMatrix<bool> {
    let n = labels.len() + 2;
    DMatrix::from_fn(n, n, |p, q| {
        let (prev, next) = (state_of(labels, p), state_of(labels, q));
        if collapse(prev, next).is_none() {
            return false;
        }
        match next {
            State::Label(Tag::I(slot)) => matches!(
                prev,
                State::Label(Tag::B(s)) | State::Label(Tag::I(s)) if s == slot
            ),
            _ => true,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(row: Row, col: Col) -> usize {
        LIVE_CELLS.iter().position(|&c| c == (row, col)).unwrap()
    }

    #[test]
    fn worked_examples() {
        let loc_team = collapse(State::Label(Tag::B("loc")), State::Label(Tag::B("team")));
        assert_eq!(loc_team, Some(cell(Row::B, Col::DiffB)));
        assert_eq!(
            collapse(State::Label(Tag::O), State::Label(Tag::B("x"))),
            Some(cell(Row::O, Col::SameB))
        );
        assert_eq!(
            collapse(State::Label(Tag::B("loc")), State::Label(Tag::I("loc"))),
            Some(cell(Row::B, Col::SameI))
        );
        assert_eq!(
            collapse(State::Label(Tag::I("a")), State::Label(Tag::O)),
            Some(cell(Row::I, Col::O))
        );
        assert_eq!(
            collapse(State::Start, State::Label(Tag::I("a"))),
            Some(cell(Row::Start, Col::SameI))
        );
    }

    #[test]
    fn impossible_pairs() {
        assert_eq!(collapse(State::Start, State::End), None);
        assert_eq!(collapse(State::End, State::Label(Tag::O)), None);
        assert_eq!(collapse(State::Label(Tag::O), State::Start), None);
        let labels = LabelSet::new(["a"]);
        assert!(collapsed_index(&labels, 3, 4).is_err());
        assert_eq!(collapsed_index(&labels, 0, 4).unwrap(), cell(Row::O, Col::End));
    }

    #[test]
    fn expansion_reads_tied_cells() {
        let labels = LabelSet::new(["loc", "team"]);
        let table = CollapsedTransitionTable::from_values((0..19).map(|i| i as f64).collect()).unwrap();
        let t = table.expand(&labels);
        let b_loc = labels.id("B-loc").unwrap();
        let i_team = labels.id("I-team").unwrap();
        assert_eq!(t.scores[(b_loc, i_team)], table.get(Row::B, Col::DiffI).unwrap());
        assert!(t.scores[(t.start(), t.end())].is_impossible());
        assert!(t.scores[(b_loc, t.start())].is_impossible());
        assert!(t.scores[(t.end(), b_loc)].is_impossible());
    }

    #[test]
    fn zero_table_expands_to_zero() {
        let labels = LabelSet::new(["a", "b", "c"]);
        let t = ExpandedTransition::<f64>::uniform(&labels);
        let map = cell_map(&labels);
        for p in 0..t.scores.nrows() {
            for q in 0..t.scores.ncols() {
                if map[(p, q)].is_some() {
                    assert_eq!(t.scores[(p, q)], 0.0);
                } else {
                    assert!(t.scores[(p, q)].is_impossible());
                }
            }
        }
    }

    #[test]
    fn rules() {
        let labels = LabelSet::new(["a", "b"]);
        let m = rule_mask(&labels);
        let (o, ba, ia, ib) = (0, 1, 2, 4);
        let start = labels.len();
        assert!(!m[(o, ia)]);
        assert!(m[(ba, ia)]);
        assert!(!m[(ba, ib)]);
        assert!(m[(ia, ia)]);
        assert!(!m[(start, ia)]);
        assert!(m[(start, ba)]);
        assert!(m[(ia, start + 1)]);
    }
}
