//! Shared domain types.
//!
//! Token indices are 0-based and spans are inclusive on both ends. The
//! 1-based convention only appears in serialized prediction records, via
//! [`SpanAnnotation::to_one_based`] and [`SpanAnnotation::from_one_based`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A tokenized sentence with character offsets into its source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<String>,
    char_offsets: Vec<(usize, usize)>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>, char_offsets: Vec<(usize, usize)>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidSequence("empty token sequence".into()));
        }
        if tokens.len() != char_offsets.len() {
            return Err(Error::InvalidSequence(format!(
                "{} tokens but {} offsets",
                tokens.len(),
                char_offsets.len()
            )));
        }
        let mut prev_end = None;
        for (i, &(begin, end)) in char_offsets.iter().enumerate() {
            if begin >= end {
                return Err(Error::InvalidSequence(format!(
                    "token {i} has empty offset range ({begin}, {end})"
                )));
            }
            if let Some(prev) = prev_end {
                if begin < prev {
                    return Err(Error::InvalidSequence(format!(
                        "token {i} offset {begin} overlaps previous token ending at {prev}"
                    )));
                }
            }
            prev_end = Some(end);
        }
        Ok(Self {
            tokens,
            char_offsets,
        })
    }

    /// Builds a sequence from pre-split tokens, assuming they were joined by
    /// `separator` in the source text.
    pub fn from_tokens<S: Into<String>>(
        tokens: impl IntoIterator<Item = S>,
        separator: &str,
    ) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let sep = separator.chars().count();
        let mut offsets = Vec::with_capacity(tokens.len());
        let mut cursor = 0;
        for (i, tok) in tokens.iter().enumerate() {
            if i > 0 {
                cursor += sep;
            }
            let len = tok.chars().count();
            offsets.push((cursor, cursor + len));
            cursor += len;
        }
        Self::new(tokens, offsets)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn char_offsets(&self) -> &[(usize, usize)] {
        &self.char_offsets
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Query flavour used to describe an entity type to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryStyle {
    /// A bare ordinal such as "one".
    Index,
    /// A single category word such as "person".
    Pseudo,
    /// A full question such as "Which location is mentioned in the text?".
    Natural,
}

impl QueryStyle {
    pub const ALL: [QueryStyle; 3] = [QueryStyle::Index, QueryStyle::Pseudo, QueryStyle::Natural];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryStyle::Index => "index",
            QueryStyle::Pseudo => "pseudo",
            QueryStyle::Natural => "natural",
        }
    }
}

impl fmt::Display for QueryStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for QueryStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "index" => Ok(QueryStyle::Index),
            "pseudo" => Ok(QueryStyle::Pseudo),
            "natural" => Ok(QueryStyle::Natural),
            other => Err(Error::InvalidConfig(format!("unknown query style `{other}`"))),
        }
    }
}

/// The ordered set of entity types. A type's id is its position in the set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::InvalidConfig("empty entity type name".into()));
            }
            if names[..i].contains(name) {
                return Err(Error::InvalidConfig(format!("duplicate entity type `{name}`")));
            }
        }
        Ok(Self { names })
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, type_id: usize) -> &str {
        &self.names[type_id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// An entity category bound to the query text that asks for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityTypeSpec {
    pub type_id: usize,
    pub name: String,
    pub query_text: String,
    pub query_style: QueryStyle,
}

/// A typed, inclusive `[start, end]` token span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub start: usize,
    pub end: usize,
    pub type_id: usize,
}

impl SpanAnnotation {
    /// Validates `start <= end < n`.
    pub fn new(start: usize, end: usize, type_id: usize, n: usize) -> Result<Self> {
        if start > end || end >= n {
            return Err(Error::InvalidSpan { start, end, n });
        }
        Ok(Self {
            start,
            end,
            type_id,
        })
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &SpanAnnotation) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn to_one_based(&self) -> (usize, usize) {
        (self.start + 1, self.end + 1)
    }

    pub fn from_one_based(start: usize, end: usize, type_id: usize, n: usize) -> Result<Self> {
        if start == 0 || end == 0 {
            return Err(Error::InvalidSpan { start, end, n });
        }
        Self::new(start - 1, end - 1, type_id, n)
    }
}

/// One (query, context) unit with gold start/end indicator vectors for a
/// single entity type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrcInstance {
    pub query: TokenSequence,
    pub context: TokenSequence,
    pub g_start: Vec<bool>,
    pub g_end: Vec<bool>,
    pub type_id: usize,
}

impl MrcInstance {
    /// Builds the indicator vectors from every span of `type_id` in `spans`.
    pub fn new(
        query: TokenSequence,
        context: TokenSequence,
        spans: &[SpanAnnotation],
        type_id: usize,
    ) -> Result<Self> {
        let n = context.len();
        let mut g_start = vec![false; n];
        let mut g_end = vec![false; n];
        for span in spans.iter().filter(|s| s.type_id == type_id) {
            if span.start > span.end || span.end >= n {
                return Err(Error::InvalidSpan {
                    start: span.start,
                    end: span.end,
                    n,
                });
            }
            g_start[span.start] = true;
            g_end[span.end] = true;
        }
        Ok(Self {
            query,
            context,
            g_start,
            g_end,
            type_id,
        })
    }

    pub fn gold_start(&self) -> Vec<f64> {
        indicator(&self.g_start)
    }

    pub fn gold_end(&self) -> Vec<f64> {
        indicator(&self.g_end)
    }
}

fn indicator(bits: &[bool]) -> Vec<f64> {
    bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// Per-token start and end probabilities over the context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutput {
    pub p_start: Vec<f64>,
    pub p_end: Vec<f64>,
}

impl PredictionOutput {
    pub fn new(p_start: Vec<f64>, p_end: Vec<f64>) -> Result<Self> {
        if p_start.len() != p_end.len() {
            return Err(Error::LengthMismatch(p_start.len(), p_end.len()));
        }
        if let Some(bad) = p_start
            .iter()
            .chain(&p_end)
            .find(|p| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::InvalidSequence(format!(
                "probability {bad} outside [0, 1]"
            )));
        }
        Ok(Self { p_start, p_end })
    }

    pub fn len(&self) -> usize {
        self.p_start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_start.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_based_indices_shift_by_one() {
        let s = SpanAnnotation::new(0, 0, 0, 3).unwrap();
        assert_eq!(s.to_one_based(), (1, 1));
        let s = SpanAnnotation::new(2, 5, 0, 8).unwrap();
        assert_eq!(s.to_one_based(), (3, 6));
    }

    #[test]
    fn one_based_indices_round_trip_exhaustive() {
        for n in 1..=8 {
            for start in 0..n {
                for end in start..n {
                    let s = SpanAnnotation::new(start, end, 1, n).unwrap();
                    let (a, b) = s.to_one_based();
                    assert_eq!(SpanAnnotation::from_one_based(a, b, 1, n).unwrap(), s);
                }
            }
        }
    }

    #[test]
    fn invalid_spans_rejected() {
        assert!(SpanAnnotation::new(3, 2, 0, 5).is_err());
        assert!(SpanAnnotation::new(0, 5, 0, 5).is_err());
        assert!(SpanAnnotation::from_one_based(0, 1, 0, 5).is_err());
    }

    #[test]
    fn sequence_invariants() {
        assert!(TokenSequence::from_tokens(Vec::<String>::new(), " ").is_err());
        let seq = TokenSequence::from_tokens(["ab", "c"], " ").unwrap();
        assert_eq!(seq.char_offsets(), &[(0, 2), (3, 4)]);
        assert!(TokenSequence::new(vec!["a".into(), "b".into()], vec![(0, 2), (1, 3)]).is_err());
        assert!(TokenSequence::new(vec!["a".into()], vec![(0, 1), (1, 2)]).is_err());
    }

    #[test]
    fn overlapping_spans_of_distinct_types_are_legal() {
        let ctx = TokenSequence::from_tokens(["a", "b", "c"], " ").unwrap();
        let q = TokenSequence::from_tokens(["q"], " ").unwrap();
        let spans = [
            SpanAnnotation::new(0, 2, 0, 3).unwrap(),
            SpanAnnotation::new(0, 2, 1, 3).unwrap(),
            SpanAnnotation::new(1, 1, 2, 3).unwrap(),
        ];
        for t in 0..3 {
            let inst = MrcInstance::new(q.clone(), ctx.clone(), &spans, t).unwrap();
            assert_eq!(inst.g_start.iter().filter(|&&b| b).count(), 1);
            assert_eq!(inst.g_end.iter().filter(|&&b| b).count(), 1);
        }
    }

    #[test]
    fn prediction_output_rejects_out_of_range() {
        assert!(PredictionOutput::new(vec![0.0, 1.0], vec![0.5, 0.5]).is_ok());
        assert!(PredictionOutput::new(vec![1.5], vec![0.5]).is_err());
        assert!(PredictionOutput::new(vec![0.5], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn label_set_rejects_duplicates() {
        assert!(LabelSet::new(["PER", "PER"]).is_err());
        let l = LabelSet::new(["PER", "LOC"]).unwrap();
        assert_eq!(l.id_of("LOC"), Some(1));
        assert_eq!(l.id_of("ORG"), None);
    }
}
