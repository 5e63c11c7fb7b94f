use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data_model::{QueryStyle, TokenSequence};
use crate::error::Result;
use crate::ingestion::{Document, QueryTemplateSet, Tokenization};

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const UNK: &str = "[UNK]";

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const SEP_ID: usize = 2;
pub const UNK_ID: usize = 3;

/// Token ↔ id map. Reserved tokens take ids 0..4, the rest follow in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Collects every corpus token and every token of every query style.
    pub fn build(docs: &[Document], templates: &QueryTemplateSet, tokenization: Tokenization) -> Result<Self> {
        let mut words = BTreeSet::new();
        for doc in docs {
            words.extend(doc.sequence.tokens().iter().cloned());
        }
        for (_, t) in templates.iter() {
            for style in QueryStyle::ALL {
                words.extend(tokenization.tokenize(t.get(style))?.tokens().iter().cloned());
            }
        }
        for reserved in [PAD, CLS, SEP, UNK] {
            words.remove(reserved);
        }
        let mut tokens: Vec<String> = [PAD, CLS, SEP, UNK].iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        Ok(Self::from(tokens))
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn ids(&self, seq: &TokenSequence) -> Vec<usize> {
        seq.tokens().iter().map(|t| self.id(t)).collect()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::SpanAnnotation;

    fn doc(tokens: &[&str]) -> Document {
        Document::new(
            "d",
            TokenSequence::from_tokens(tokens.iter().copied(), " ").unwrap(),
            Vec::<SpanAnnotation>::new(),
        )
        .unwrap()
    }

    #[test]
    fn reserved_only_when_empty() {
        let v = Vocab::build(&[], &QueryTemplateSet::default(), Tokenization::Word).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id(CLS), CLS_ID);
        assert_eq!(v.id(SEP), SEP_ID);
        assert_eq!(v.id("anything"), UNK_ID);
    }

    #[test]
    fn deterministic_lexicographic_ids() {
        let a = Vocab::build(&[doc(&["b", "a"])], &QueryTemplateSet::default(), Tokenization::Word).unwrap();
        let b = Vocab::build(&[doc(&["a", "b", "a"])], &QueryTemplateSet::default(), Tokenization::Word).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.id("a"), 4);
        assert_eq!(a.id("b"), 5);
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocab::build(&[doc(&["x", "y"])], &QueryTemplateSet::standard(), Tokenization::Word).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }
}
