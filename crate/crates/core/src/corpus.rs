//! Labeled sentences, per-domain BIO label sets and corpus file formats.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parsed form of a BIO label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag<'a> {
    O,
    B(&'a str),
    I(&'a str),
}

impl<'a> Tag<'a> {
    pub fn parse(label: &'a str) -> Result<Self> {
        if label == "O" {
            return Ok(Tag::O);
        }
        let slot = |rest: &'a str| {
            if rest.is_empty() {
                Err(Error::BadLabel(label.to_string()))
            } else {
                Ok(rest)
            }
        };
        if let Some(rest) = label.strip_prefix("B-") {
            Ok(Tag::B(slot(rest)?))
        } else if let Some(rest) = label.strip_prefix("I-") {
            Ok(Tag::I(slot(rest)?))
        } else {
            Err(Error::BadLabel(label.to_string()))
        }
    }

    pub fn slot(&self) -> Option<&'a str> {
        match *self {
            Tag::O => None,
            Tag::B(s) | Tag::I(s) => Some(s),
        }
    }
}

/// A tokenized utterance with one BIO label per token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSentence", into = "RawSentence")]
pub struct Sentence {
    tokens: Vec<String>,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawSentence {
    tokens: Vec<String>,
    labels: Vec<String>,
}

impl TryFrom<RawSentence> for Sentence {
    type Error = Error;

    fn try_from(raw: RawSentence) -> Result<Self> {
        Sentence::new(raw.tokens, raw.labels)
    }
}

impl From<Sentence> for RawSentence {
    fn from(s: Sentence) -> Self {
        RawSentence {
            tokens: s.tokens,
            labels: s.labels,
        }
    }
}

impl Sentence {
    pub fn new(tokens: Vec<String>, labels: Vec<String>) -> Result<Self> {
        if tokens.len() != labels.len() {
            return Err(Error::Length {
                left: tokens.len(),
                right: labels.len(),
            });
        }
        if tokens.is_empty() {
            return Err(Error::Schema("empty sentence".into()));
        }
        for label in &labels {
            Tag::parse(label)?;
        }
        Ok(Sentence { tokens, labels })
    }

    /// Convenience constructor from string slices.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<Self> {
        let (tokens, labels) = pairs
            .iter()
            .map(|(t, l)| (t.as_ref().to_string(), l.as_ref().to_string()))
            .unzip();
        Sentence::new(tokens, labels)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tags(&self) -> impl Iterator<Item = Tag<'_>> {
        self.labels
            .iter()
            .map(|l| Tag::parse(l).expect("validated at construction"))
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.tags().filter_map(|t| t.slot())
    }
}

/// Ordered BIO label inventory of one domain.
///
/// Id 0 is `O`; slot `k` (in sorted order) owns ids `2k+1` (B) and `2k+2` (I).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    slots: Vec<String>,
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

/// Serialized as the full BIO label list.
impl TryFrom<Vec<String>> for LabelSet {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        let mut slots = Vec::new();
        for label in &labels {
            if let Some(slot) = Tag::parse(label)?.slot() {
                slots.push(slot.to_string());
            }
        }
        Ok(LabelSet::new(slots))
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(set: LabelSet) -> Self {
        set.labels
    }
}

impl LabelSet {
    pub fn new<I, S>(slots: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let slots: Vec<String> = slots
            .into_iter()
            .map(Into::into)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut labels = Vec::with_capacity(2 * slots.len() + 1);
        labels.push("O".to_string());
        for slot in &slots {
            labels.push(format!("B-{slot}"));
            labels.push(format!("I-{slot}"));
        }
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        LabelSet {
            slots,
            labels,
            index,
        }
    }

    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        let mut slots = BTreeSet::new();
        for s in sentences {
            slots.extend(s.slots().map(str::to_string));
        }
        LabelSet::new(slots)
    }

    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn tag(&self, id: usize) -> Tag<'_> {
        Tag::parse(&self.labels[id]).expect("label set holds valid labels")
    }

    /// Label ids of a sentence, failing on labels outside the set.
    pub fn encode(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| self.id(l).ok_or_else(|| Error::UnknownLabel(l.clone())))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.labels[i].clone()).collect()
    }
}

/// A named collection of sentences sharing one label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domain {
    name: String,
    sentences: Vec<Sentence>,
    label_set: LabelSet,
}

#[derive(Serialize, Deserialize)]
struct DomainDoc {
    name: String,
    sentences: Vec<Sentence>,
}

impl Domain {
    pub fn new(name: impl Into<String>, sentences: Vec<Sentence>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::NoSentences);
        }
        let label_set = LabelSet::from_sentences(&sentences);
        Ok(Domain {
            name: name.into(),
            sentences,
            label_set,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    /// Parses two-column CoNLL text: `token<TAB>label`, blank line between sentences.
    pub fn parse_conll(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut sentences = Vec::new();
        let mut tokens = Vec::new();
        let mut labels = Vec::new();
        let mut start_line = 1;
        let mut flush = |tokens: &mut Vec<String>, labels: &mut Vec<String>, line: usize| {
            if tokens.is_empty() {
                return Ok(());
            }
            let s = Sentence::new(std::mem::take(tokens), std::mem::take(labels)).map_err(|e| {
                Error::Parse {
                    line,
                    message: e.to_string(),
                }
            })?;
            sentences.push(s);
            Ok::<_, Error>(())
        };
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                flush(&mut tokens, &mut labels, start_line)?;
                continue;
            }
            if tokens.is_empty() {
                start_line = line_no;
            }
            let mut fields = line.split('\t');
            let (token, label) = match (fields.next(), fields.next(), fields.next()) {
                (Some(t), Some(l), None) if !t.is_empty() => (t, l.trim()),
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("expected \"token<TAB>label\", got {line:?}"),
                    })
                }
            };
            if Tag::parse(label).is_err() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("invalid label {label:?}"),
                });
            }
            tokens.push(token.to_string());
            labels.push(label.to_string());
        }
        flush(&mut tokens, &mut labels, start_line)?;
        Domain::new(name, sentences)
    }

    pub fn load_conll(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Domain::parse_conll(name, &text)
    }

    pub fn to_conll(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sentences.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            for (t, l) in s.tokens.iter().zip(&s.labels) {
                out.push_str(t);
                out.push('\t');
                out.push_str(l);
                out.push('\n');
            }
        }
        out
    }

    pub fn write_conll(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_conll()).map_err(|e| Error::io(path, e))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: DomainDoc =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Domain::new(doc.name, doc.sentences)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Domain::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let doc = DomainDoc {
            name: self.name.clone(),
            sentences: self.sentences.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }

    /// Loads `.json` files as JSON documents and anything else as CoNLL.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Domain::load_json(path),
            _ => Domain::load_conll(path),
        }
    }
}

/// An `I-x` that does not continue a `B-x`/`I-x` span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BioViolation {
    pub index: usize,
    pub label: String,
    pub previous: Option<String>,
}

impl fmt::Display for BioViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "token {}: {} follows {}",
            self.index,
            self.label,
            self.previous.as_deref().unwrap_or("sentence start")
        )
    }
}

/// Lists BIO violations. Lenient mode accepts any well-formed label sequence.
pub fn validate_bio(sentence: &Sentence, strict: bool) -> Vec<BioViolation> {
    if !strict {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut prev: Option<Tag<'_>> = None;
    for (i, tag) in sentence.tags().enumerate() {
        if let Tag::I(slot) = tag {
            let continues = matches!(prev, Some(Tag::B(p)) | Some(Tag::I(p)) if p == slot);
            if !continues {
                out.push(BioViolation {
                    index: i,
                    label: sentence.labels[i].clone(),
                    previous: i.checked_sub(1).map(|p| sentence.labels[p].clone()),
                });
            }
        }
        prev = Some(tag);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(labels: &[&str]) -> Sentence {
        let tokens = (0..labels.len()).map(|i| format!("w{i}")).collect();
        Sentence::new(tokens, labels.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn conll_single_sentence() {
        let d = Domain::parse_conll("We", "will\tO\nit\tO\nrain\tB-weather\n").unwrap();
        assert_eq!(d.sentences().len(), 1);
        assert_eq!(d.label_set().slots(), ["weather"]);
        assert_eq!(d.label_set().labels(), ["O", "B-weather", "I-weather"]);
    }

    #[test]
    fn conll_empty_file() {
        assert!(matches!(Domain::parse_conll("x", ""), Err(Error::NoSentences)));
        assert!(matches!(Domain::parse_conll("x", "\n\n"), Err(Error::NoSentences)));
    }

    #[test]
    fn conll_bad_label_names_it() {
        let err = Domain::parse_conll("x", "a\tO\nb\tX-foo\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("X-foo"), "{msg}");
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn conll_malformed_line() {
        let err = Domain::parse_conll("x", "a\tO\nno-tab-here\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = Domain::parse_conll("x", "a\tO\textra\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn conll_sentence_order_and_crlf() {
        let d = Domain::parse_conll("x", "a\tO\r\nb\tB-s\r\n\r\n\r\nc\tI-t\r\n").unwrap();
        assert_eq!(d.sentences().len(), 2);
        assert_eq!(d.sentences()[0].tokens(), ["a", "b"]);
        assert_eq!(d.sentences()[1].labels(), ["I-t"]);
        assert_eq!(d.label_set().slots(), ["s", "t"]);
    }

    #[test]
    fn json_single_sentence() {
        let d = Domain::from_json_str(
            r#"{"name":"We","sentences":[{"tokens":["will"],"labels":["O"]}]}"#,
        )
        .unwrap();
        assert_eq!(d.name(), "We");
        assert_eq!(d.sentences().len(), 1);
        assert!(d.label_set().slots().is_empty());
        assert_eq!(d.label_set().len(), 1);
    }

    #[test]
    fn json_length_mismatch() {
        let err = Domain::from_json_str(
            r#"{"name":"We","sentences":[{"tokens":["will","it"],"labels":["O"]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn json_missing_field() {
        assert!(Domain::from_json_str(r#"{"sentences":[]}"#).is_err());
        assert!(matches!(
            Domain::from_json_str(r#"{"name":"a","sentences":[]}"#),
            Err(Error::NoSentences)
        ));
    }

    #[test]
    fn label_set_is_sorted_and_indexed() {
        let set = LabelSet::new(["zeta", "alpha", "mid", "alpha"]);
        assert_eq!(set.slots(), ["alpha", "mid", "zeta"]);
        assert_eq!(set.len(), 7);
        assert_eq!(set.id("O"), Some(0));
        assert_eq!(set.id("B-alpha"), Some(1));
        assert_eq!(set.id("I-zeta"), Some(6));
        for id in 0..set.len() {
            assert_eq!(set.id(set.label(id).unwrap()), Some(id));
        }
    }

    #[test]
    fn strict_bio() {
        let v = validate_bio(&sent(&["O", "I-a"]), true);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].index, 1);
        assert!(validate_bio(&sent(&["B-a", "I-a"]), true).is_empty());
        assert!(validate_bio(&sent(&["O", "I-a"]), false).is_empty());
        let v = validate_bio(&sent(&["I-a", "B-b", "I-a", "I-b"]), true);
        assert_eq!(v.iter().map(|v| v.index).collect::<Vec<_>>(), [0, 2, 3]);
    }
}
