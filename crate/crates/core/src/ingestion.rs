//! Corpus readers and writers, query templates, and MRC instance construction.
//!
//! Three on-disk formats are supported:
//!
//! * BIO: one `token<TAB>tag` per line, blank line between sentences.
//! * Nested span lists: one JSON object per line with `tokens` and `spans`
//!   (`{start, end, type}`, 0-based inclusive). Overlapping spans are allowed.
//! * Query templates: one JSON object per line with `type`, `index_query`,
//!   `pseudo_query` and `natural_query`.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data_model::{LabelSet, MrcInstance, QueryStyle, SpanAnnotation, TokenSequence};
use crate::error::{Error, Result};

/// How raw text (queries, synthesized sentences) is split into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    /// Whitespace-separated words.
    #[default]
    Word,
    /// One token per non-whitespace character.
    Char,
}

impl Tokenization {
    /// Separator assumed between consecutive tokens of a pre-tokenized corpus.
    pub fn separator(self) -> &'static str {
        match self {
            Tokenization::Word => " ",
            Tokenization::Char => "",
        }
    }

    pub fn tokenize(self, text: &str) -> Result<TokenSequence> {
        let mut tokens = Vec::new();
        let mut offsets = Vec::new();
        match self {
            Tokenization::Word => {
                let mut current: Option<(usize, String)> = None;
                for (ci, ch) in text.chars().enumerate() {
                    if ch.is_whitespace() {
                        if let Some((begin, tok)) = current.take() {
                            offsets.push((begin, ci));
                            tokens.push(tok);
                        }
                    } else {
                        current.get_or_insert_with(|| (ci, String::new())).1.push(ch);
                    }
                }
                if let Some((begin, tok)) = current {
                    offsets.push((begin, begin + tok.chars().count()));
                    tokens.push(tok);
                }
            }
            Tokenization::Char => {
                for (ci, ch) in text.chars().enumerate() {
                    if !ch.is_whitespace() {
                        tokens.push(ch.to_string());
                        offsets.push((ci, ci + 1));
                    }
                }
            }
        }
        TokenSequence::new(tokens, offsets)
    }
}

impl std::str::FromStr for Tokenization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Tokenization::Word),
            "char" => Ok(Tokenization::Char),
            other => Err(Error::InvalidConfig(format!("unknown tokenization `{other}`"))),
        }
    }
}

/// A sentence with its gold spans. Spans of different types may overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub sequence: TokenSequence,
    pub gold_spans: Vec<SpanAnnotation>,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        sequence: TokenSequence,
        gold_spans: Vec<SpanAnnotation>,
    ) -> Result<Self> {
        let n = sequence.len();
        let mut seen = HashSet::new();
        for s in &gold_spans {
            if s.start > s.end || s.end >= n {
                return Err(Error::InvalidSpan {
                    start: s.start,
                    end: s.end,
                    n,
                });
            }
            if !seen.insert(*s) {
                return Err(Error::DuplicateSpan {
                    line: 0,
                    start: s.start,
                    end: s.end,
                    type_name: s.type_id.to_string(),
                });
            }
        }
        Ok(Self {
            doc_id: doc_id.into(),
            sequence,
            gold_spans,
        })
    }

    pub fn has_overlap(&self) -> bool {
        self.gold_spans.iter().enumerate().any(|(i, a)| {
            self.gold_spans[i + 1..].iter().any(|b| a.overlaps(b))
        })
    }
}

fn parse_tag(tag: &str, labels: &LabelSet, line: usize) -> Result<Option<(bool, usize)>> {
    if tag == "O" {
        return Ok(None);
    }
    let (begin, name) = match tag.split_once('-') {
        Some(("B", name)) => (true, name),
        Some(("I", name)) => (false, name),
        _ => {
            return Err(Error::MalformedLine {
                line,
                reason: format!("tag `{tag}` is not O, B-T or I-T"),
            })
        }
    };
    let id = labels.id_of(name).ok_or_else(|| Error::UnknownType {
        line,
        name: name.to_string(),
    })?;
    Ok(Some((begin, id)))
}

/// Parses a BIO corpus.
///
/// An `I-T` that does not continue a run of type `T` opens a new span, as if
/// it were `B-T`.
pub fn parse_bio(text: &str, labels: &LabelSet, tokenization: Tokenization) -> Result<Vec<Document>> {
    struct Pending {
        tokens: Vec<String>,
        spans: Vec<SpanAnnotation>,
        open: Option<(usize, usize)>,
    }

    impl Pending {
        fn close(&mut self) {
            if let Some((start, type_id)) = self.open.take() {
                self.spans.push(SpanAnnotation {
                    start,
                    end: self.tokens.len() - 1,
                    type_id,
                });
            }
        }
    }

    let mut docs = Vec::new();
    let mut cur = Pending {
        tokens: Vec::new(),
        spans: Vec::new(),
        open: None,
    };

    let flush = |cur: &mut Pending, docs: &mut Vec<Document>| -> Result<()> {
        if cur.tokens.is_empty() {
            return Ok(());
        }
        cur.close();
        let tokens = std::mem::take(&mut cur.tokens);
        let spans = std::mem::take(&mut cur.spans);
        let seq = TokenSequence::from_tokens(tokens, tokenization.separator())?;
        docs.push(Document::new(docs.len().to_string(), seq, spans)?);
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            flush(&mut cur, &mut docs)?;
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 2 || fields[0].is_empty() {
            return Err(Error::MalformedLine {
                line,
                reason: format!("expected token<TAB>tag, found {} field(s)", fields.len()),
            });
        }
        let tag = parse_tag(fields[1].trim(), labels, line)?;
        match tag {
            None => cur.close(),
            Some((true, id)) => {
                cur.close();
                cur.open = Some((cur.tokens.len(), id));
            }
            Some((false, id)) => match cur.open {
                Some((_, open_id)) if open_id == id => {}
                _ => {
                    cur.close();
                    cur.open = Some((cur.tokens.len(), id));
                }
            },
        }
        cur.tokens.push(fields[0].to_string());
    }
    flush(&mut cur, &mut docs)?;
    Ok(docs)
}

/// Writes documents as BIO. Fails on documents with overlapping spans.
pub fn emit_bio(docs: &[Document], labels: &LabelSet) -> Result<String> {
    let mut out = String::new();
    for doc in docs {
        if doc.has_overlap() {
            return Err(Error::OverlapNotExpressible(doc.doc_id.clone()));
        }
        let mut tags = vec![String::from("O"); doc.sequence.len()];
        for s in &doc.gold_spans {
            let name = labels.name(s.type_id);
            tags[s.start] = format!("B-{name}");
            for t in &mut tags[s.start + 1..=s.end] {
                *t = format!("I-{name}");
            }
        }
        for (tok, tag) in doc.sequence.tokens().iter().zip(&tags) {
            let _ = writeln!(out, "{tok}\t{tag}");
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct NestedSpanRecord {
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    type_name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct NestedRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    doc_id: Option<String>,
    tokens: Vec<String>,
    spans: Vec<NestedSpanRecord>,
}

/// Parses a nested span-list corpus (JSON lines).
pub fn parse_nested(text: &str, labels: &LabelSet, tokenization: Tokenization) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: NestedRecord = serde_json::from_str(raw).map_err(|e| Error::MalformedLine {
            line,
            reason: e.to_string(),
        })?;
        if rec.tokens.is_empty() || rec.tokens.iter().any(|t| t.is_empty()) {
            return Err(Error::MalformedLine {
                line,
                reason: "tokens must be a non-empty list of non-empty strings".into(),
            });
        }
        let n = rec.tokens.len();
        let mut spans = Vec::with_capacity(rec.spans.len());
        let mut seen = HashSet::new();
        for s in rec.spans {
            let type_id = labels.id_of(&s.type_name).ok_or_else(|| Error::UnknownType {
                line,
                name: s.type_name.clone(),
            })?;
            if s.start > s.end || s.end >= n {
                return Err(Error::SpanOutOfRange {
                    line,
                    start: s.start,
                    end: s.end,
                    n,
                });
            }
            let span = SpanAnnotation {
                start: s.start,
                end: s.end,
                type_id,
            };
            if !seen.insert(span) {
                return Err(Error::DuplicateSpan {
                    line,
                    start: s.start,
                    end: s.end,
                    type_name: s.type_name,
                });
            }
            spans.push(span);
        }
        let doc_id = rec.doc_id.unwrap_or_else(|| docs.len().to_string());
        let seq = TokenSequence::from_tokens(rec.tokens, tokenization.separator())?;
        docs.push(Document::new(doc_id, seq, spans)?);
    }
    Ok(docs)
}

/// Writes documents in the nested span-list format.
pub fn emit_nested(docs: &[Document], labels: &LabelSet) -> Result<String> {
    let mut out = String::new();
    for doc in docs {
        let rec = NestedRecord {
            doc_id: Some(doc.doc_id.clone()),
            tokens: doc.sequence.tokens().to_vec(),
            spans: doc
                .gold_spans
                .iter()
                .map(|s| NestedSpanRecord {
                    start: s.start,
                    end: s.end,
                    type_name: labels.name(s.type_id).to_string(),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

/// The three query phrasings for one entity type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTemplates {
    pub index_query: String,
    pub pseudo_query: String,
    pub natural_query: String,
}

impl QueryTemplates {
    pub fn get(&self, style: QueryStyle) -> &str {
        match style {
            QueryStyle::Index => &self.index_query,
            QueryStyle::Pseudo => &self.pseudo_query,
            QueryStyle::Natural => &self.natural_query,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TemplateRecord {
    #[serde(rename = "type")]
    type_name: String,
    index_query: String,
    pseudo_query: String,
    natural_query: String,
}

/// Query templates keyed by entity type name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTemplateSet {
    entries: BTreeMap<String, QueryTemplates>,
}

impl QueryTemplateSet {
    /// Templates for the common entity types.
    pub fn standard() -> Self {
        let rows = [
            ("PER", "one", "person", "Which is Person mentioned in the text?"),
            ("LOC", "two", "location", "Which location is mentioned in the text?"),
            ("ORG", "three", "organization", "Which organization is mentioned in the text?"),
            ("FAC", "four", "facility", "Which facility is mentioned in the text?"),
            ("GPE", "five", "country", "Which geopolitical entity is mentioned in the text?"),
            ("MISC", "six", "miscellaneous", "Which other entity is mentioned in the text?"),
        ];
        let mut set = Self::default();
        for (ty, index, pseudo, natural) in rows {
            set.insert(
                ty,
                QueryTemplates {
                    index_query: index.into(),
                    pseudo_query: pseudo.into(),
                    natural_query: natural.into(),
                },
            )
            .expect("built-in templates are non-empty");
        }
        set
    }

    pub fn insert(&mut self, type_name: impl Into<String>, templates: QueryTemplates) -> Result<()> {
        let type_name = type_name.into();
        for (style, q) in QueryStyle::ALL.iter().map(|&s| (s, templates.get(s))) {
            if q.trim().is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "empty {style} query for entity type `{type_name}`"
                )));
            }
        }
        self.entries.insert(type_name, templates);
        Ok(())
    }

    pub fn get(&self, type_name: &str) -> Option<&QueryTemplates> {
        self.entries.get(type_name)
    }

    pub fn type_names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &QueryTemplates)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Fails with [`Error::MissingTemplate`] for the first uncovered type.
    pub fn check_covers(&self, labels: &LabelSet) -> Result<()> {
        match labels.names().iter().find(|n| !self.entries.contains_key(*n)) {
            Some(missing) => Err(Error::MissingTemplate(missing.clone())),
            None => Ok(()),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut set = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let rec: TemplateRecord = serde_json::from_str(raw).map_err(|e| Error::MalformedLine {
                line: idx + 1,
                reason: e.to_string(),
            })?;
            set.insert(
                rec.type_name,
                QueryTemplates {
                    index_query: rec.index_query,
                    pseudo_query: rec.pseudo_query,
                    natural_query: rec.natural_query,
                },
            )?;
        }
        Ok(set)
    }

    pub fn emit(&self) -> Result<String> {
        let mut out = String::new();
        for (name, t) in &self.entries {
            let rec = TemplateRecord {
                type_name: name.clone(),
                index_query: t.index_query.clone(),
                pseudo_query: t.pseudo_query.clone(),
                natural_query: t.natural_query.clone(),
            };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn select_query<'a>(templates: &'a QueryTemplateSet, type_name: &str, style: QueryStyle) -> Result<&'a str> {
    templates
        .get(type_name)
        .map(|t| t.get(style))
        .ok_or_else(|| Error::MissingTemplate(type_name.to_string()))
}

/// One instance per entity type in `labels`, in label order. Types without
/// gold spans yield all-zero indicator vectors.
pub fn build_instances(
    doc: &Document,
    labels: &LabelSet,
    templates: &QueryTemplateSet,
    style: QueryStyle,
    tokenization: Tokenization,
) -> Result<Vec<MrcInstance>> {
    labels
        .names()
        .iter()
        .enumerate()
        .map(|(type_id, name)| {
            let query = tokenization.tokenize(select_query(templates, name, style)?)?;
            MrcInstance::new(query, doc.sequence.clone(), &doc.gold_spans, type_id)
        })
        .collect()
}

/// Infers the label set from the `type` fields of a nested corpus, in order of
/// first appearance.
pub fn scan_nested_types(text: &str) -> Result<Vec<String>> {
    let mut names: Vec<String> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let rec: NestedRecord = serde_json::from_str(raw).map_err(|e| Error::MalformedLine {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        for s in rec.spans {
            if !names.contains(&s.type_name) {
                names.push(s.type_name);
            }
        }
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> LabelSet {
        LabelSet::new(["PER", "LOC", "ORG"]).unwrap()
    }

    #[test]
    fn bio_single_token_entity() {
        let docs = parse_bio("Washington\tB-PER\nwas\tO\nborn\tO\n", &labels(), Tokenization::Word).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].gold_spans, vec![SpanAnnotation { start: 0, end: 0, type_id: 0 }]);
    }

    #[test]
    fn bio_runs_become_spans() {
        let text = "a\tB-LOC\nb\tI-LOC\nc\tO\nd\tB-LOC\n\ne\tO\n";
        let docs = parse_bio(text, &labels(), Tokenization::Word).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(
            docs[0].gold_spans,
            vec![
                SpanAnnotation { start: 0, end: 1, type_id: 1 },
                SpanAnnotation { start: 3, end: 3, type_id: 1 },
            ]
        );
        assert!(docs[1].gold_spans.is_empty());
    }

    #[test]
    fn bio_dangling_inside_is_repaired() {
        let text = "a\tO\nb\tI-PER\nc\tI-PER\nd\tI-LOC\n";
        let docs = parse_bio(text, &labels(), Tokenization::Word).unwrap();
        assert_eq!(
            docs[0].gold_spans,
            vec![
                SpanAnnotation { start: 1, end: 2, type_id: 0 },
                SpanAnnotation { start: 3, end: 3, type_id: 1 },
            ]
        );
    }

    #[test]
    fn bio_errors_carry_line_numbers() {
        match parse_bio("a\tO\nb\tB-PER\textra\n", &labels(), Tokenization::Word) {
            Err(Error::MalformedLine { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_bio("a\tO\n\nb\tB-DATE\n", &labels(), Tokenization::Word) {
            Err(Error::UnknownType { line: 3, name }) => assert_eq!(name, "DATE"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_bio("a\tX-PER\n", &labels(), Tokenization::Word),
            Err(Error::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn char_mode_offsets_are_contiguous() {
        let docs = parse_bio("北\tB-LOC\n京\tI-LOC\n", &labels(), Tokenization::Char).unwrap();
        assert_eq!(docs[0].sequence.char_offsets(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn nested_keeps_overlaps() {
        let text = r#"{"tokens":["a","b","c","d","e"],"spans":[{"start":0,"end":4,"type":"ORG"},{"start":1,"end":2,"type":"PER"}]}"#;
        let docs = parse_nested(text, &labels(), Tokenization::Word).unwrap();
        assert_eq!(docs[0].gold_spans.len(), 2);
        assert!(docs[0].has_overlap());
    }

    #[test]
    fn nested_errors() {
        let oob = r#"{"tokens":["a","b","c","d","e"],"spans":[{"start":3,"end":7,"type":"ORG"}]}"#;
        assert!(matches!(
            parse_nested(oob, &labels(), Tokenization::Word),
            Err(Error::SpanOutOfRange { start: 3, end: 7, n: 5, .. })
        ));
        let dup = r#"{"tokens":["a","b"],"spans":[{"start":0,"end":1,"type":"ORG"},{"start":0,"end":1,"type":"ORG"}]}"#;
        assert!(matches!(
            parse_nested(dup, &labels(), Tokenization::Word),
            Err(Error::DuplicateSpan { .. })
        ));
        let unk = r#"{"tokens":["a"],"spans":[{"start":0,"end":0,"type":"DATE"}]}"#;
        assert!(matches!(
            parse_nested(unk, &labels(), Tokenization::Word),
            Err(Error::UnknownType { line: 1, .. })
        ));
        // same bounds, different types: legal
        let ok = r#"{"tokens":["a","b"],"spans":[{"start":0,"end":1,"type":"ORG"},{"start":0,"end":1,"type":"LOC"}]}"#;
        assert_eq!(parse_nested(ok, &labels(), Tokenization::Word).unwrap()[0].gold_spans.len(), 2);
    }

    #[test]
    fn natural_and_pseudo_queries() {
        let t = QueryTemplateSet::standard();
        assert_eq!(
            select_query(&t, "PER", QueryStyle::Natural).unwrap(),
            "Which is Person mentioned in the text?"
        );
        assert_eq!(
            select_query(&t, "LOC", QueryStyle::Natural).unwrap(),
            "Which location is mentioned in the text?"
        );
        assert_eq!(select_query(&t, "PER", QueryStyle::Pseudo).unwrap(), "person");
        assert!(matches!(
            select_query(&t, "DATE", QueryStyle::Index),
            Err(Error::MissingTemplate(_))
        ));
    }

    #[test]
    fn templates_round_trip_and_reject_empty() {
        let t = QueryTemplateSet::standard();
        assert_eq!(QueryTemplateSet::parse(&t.emit().unwrap()).unwrap(), t);
        let bad = r#"{"type":"PER","index_query":"one","pseudo_query":" ","natural_query":"who"}"#;
        assert!(QueryTemplateSet::parse(bad).is_err());
    }

    #[test]
    fn instances_one_per_type() {
        let labels = LabelSet::new(["PER", "LOC"]).unwrap();
        let seq = TokenSequence::from_tokens(["x", "y", "z"], " ").unwrap();
        let doc = Document::new("d", seq, vec![SpanAnnotation { start: 0, end: 0, type_id: 0 }]).unwrap();
        let insts =
            build_instances(&doc, &labels, &QueryTemplateSet::standard(), QueryStyle::Natural, Tokenization::Word)
                .unwrap();
        assert_eq!(insts.len(), 2);
        assert_eq!(insts[0].g_start, vec![true, false, false]);
        assert_eq!(insts[0].g_end, vec![true, false, false]);
        assert!(insts[1].g_start.iter().chain(&insts[1].g_end).all(|b| !b));
        assert_eq!(insts[1].query.tokens()[0], "Which");
    }

    #[test]
    fn instances_multi_mention() {
        let labels = LabelSet::new(["PER", "LOC"]).unwrap();
        let seq = TokenSequence::from_tokens(["a", "b", "c", "d"], " ").unwrap();
        let doc = Document::new(
            "d",
            seq,
            vec![
                SpanAnnotation { start: 0, end: 1, type_id: 0 },
                SpanAnnotation { start: 3, end: 3, type_id: 0 },
            ],
        )
        .unwrap();
        let insts =
            build_instances(&doc, &labels, &QueryTemplateSet::standard(), QueryStyle::Index, Tokenization::Word)
                .unwrap();
        assert_eq!(insts[0].g_start, vec![true, false, false, true]);
        assert_eq!(insts[0].g_end, vec![false, true, false, true]);
    }

    #[test]
    fn instances_require_templates() {
        let labels = LabelSet::new(["PER", "DATE"]).unwrap();
        let seq = TokenSequence::from_tokens(["a"], " ").unwrap();
        let doc = Document::new("d", seq, vec![]).unwrap();
        let err = build_instances(&doc, &labels, &QueryTemplateSet::standard(), QueryStyle::Index, Tokenization::Word)
            .unwrap_err();
        assert!(matches!(err, Error::MissingTemplate(name) if name == "DATE"));
    }

    #[test]
    fn tokenizers() {
        let s = Tokenization::Word.tokenize("  Which  is it? ").unwrap();
        assert_eq!(s.tokens(), &["Which", "is", "it?"]);
        assert_eq!(s.char_offsets(), &[(2, 7), (9, 11), (12, 15)]);
        let c = Tokenization::Char.tokenize("地 名").unwrap();
        assert_eq!(c.tokens(), &["地", "名"]);
        assert!(Tokenization::Word.tokenize("   ").is_err());
    }
}
