//! Seeded synthetic NER corpora with controllable entity density and nesting.
//!
//! Sentences hold at most one mention per entity type (PER, LOC, ORG). A
//! nested sentence contains an ORG that strictly contains its PER or LOC
//! mention, e.g. `[ORG [PER Ada Moreau] Foundation]` or
//! `[ORG University of [LOC Lyon]]`.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{LabelSet, SpanAnnotation, TokenSequence};
use crate::error::{Error, Result};
use crate::ingestion::{emit_nested, Document, QueryTemplateSet, QueryTemplates};

const FIRST_NAMES: &[&str] = &[
    "Ada", "Bruno", "Clara", "Dmitri", "Elena", "Farid", "Greta", "Hugo", "Ines", "Jonas", "Kira", "Luca",
    "Mara", "Nils", "Olga", "Pavel", "Quinn", "Rosa", "Sven", "Tara", "Umar", "Vera", "Wim", "Yara",
];
const LAST_NAMES: &[&str] = &[
    "Moreau", "Novak", "Okafor", "Petrov", "Quist", "Rahman", "Silva", "Tanaka", "Ueda", "Varga", "Weber",
    "Xu", "Yilmaz", "Zeller", "Abbott", "Becker", "Castro", "Dahl", "Eriksen", "Fischer", "Gruber", "Haas",
];
const CITIES: &[&str] = &[
    "Lyon", "Porto", "Turin", "Ghent", "Krakow", "Bergen", "Malaga", "Utrecht", "Graz", "Tartu", "Split",
    "Brno", "Aarhus", "Basel", "Cork", "Dijon", "Essen", "Faro", "Gdansk", "Haarlem", "Izmir", "Kaunas",
];
const REGIONS: &[&str] = &["North", "East", "South", "West", "Harbor", "Valley", "Heights", "Bay"];
const ORG_HEADS: &[&str] = &[
    "Acme", "Globex", "Initech", "Umbra", "Vertex", "Zenith", "Orbis", "Helix", "Nimbus", "Quanta", "Stratus",
    "Lumen", "Cobalt", "Argent",
];
const ORG_SUFFIXES: &[&str] = &["Foundation", "Institute", "Group", "Holdings", "Trust", "Labs", "Partners"];
const ORG_PREFIXES: &[&str] = &["University", "Bank", "Museum", "Council", "Port"];
const FILLERS: &[&str] = &[
    "a", "about", "after", "again", "also", "among", "and", "announced", "around", "because", "before",
    "between", "but", "by", "came", "continued", "during", "early", "each", "for", "had", "has", "her",
    "his", "into", "last", "late", "later", "many", "more", "most", "new", "not", "often", "on", "once",
    "only", "other", "over", "plans", "report", "said", "several", "since", "some", "that", "their",
    "then", "there", "they", "this", "through", "under", "until", "was", "week", "were", "when", "while",
    "with", "would", "year",
];
const PER_CUES: &[&str] = &["mr", "ms", "dr", "minister", "coach"];
const LOC_CUES: &[&str] = &["in", "near", "from", "toward"];
const ORG_CUES: &[&str] = &["the", "joined", "at", "funded"];

pub const TYPES: [&str; 3] = ["PER", "LOC", "ORG"];
const PER: usize = 0;
const LOC: usize = 1;
const ORG: usize = 2;

/// Cue tokens that reuse the content word of each type's natural query.
const SHARED_CUES: [&str; 3] = ["Person", "location", "organization"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Training sentences.
    pub size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    /// Probability that a sentence with at least one entity contains a nested ORG.
    pub nesting_rate: f64,
    /// In [0, 1]: longer sentences and fewer entities as it grows.
    pub imbalance: f64,
    /// Precede mentions with the content word of their type's natural query.
    pub shared_query_vocab: bool,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(size: usize, nesting_rate: f64, imbalance: f64, seed: u64) -> Self {
        let held_out = (size / 5).max(1);
        Self {
            size,
            dev_size: held_out,
            test_size: held_out,
            nesting_rate,
            imbalance,
            shared_query_vocab: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::InvalidConfig("synthetic corpus size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.nesting_rate) {
            return Err(Error::InvalidConfig(format!("nesting_rate {} outside [0, 1]", self.nesting_rate)));
        }
        if !(0.0..=1.0).contains(&self.imbalance) {
            return Err(Error::InvalidConfig(format!("imbalance {} outside [0, 1]", self.imbalance)));
        }
        Ok(())
    }

    fn filler_range(&self) -> (usize, usize) {
        let lo = 4.0 + 30.0 * self.imbalance;
        let hi = 10.0 + 50.0 * self.imbalance;
        (lo.round() as usize, hi.round() as usize)
    }

    fn entity_prob(&self) -> f64 {
        0.6 - 0.35 * self.imbalance
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub labels: LabelSet,
    pub templates: QueryTemplateSet,
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
}

pub fn templates() -> QueryTemplateSet {
    let standard = QueryTemplateSet::standard();
    let mut t = QueryTemplateSet::default();
    for name in TYPES {
        let entry: QueryTemplates = standard.get(name).expect("standard types").clone();
        t.insert(name, entry).expect("non-empty");
    }
    t
}

struct Chunk {
    tokens: Vec<String>,
    /// Spans relative to the chunk start.
    spans: Vec<SpanAnnotation>,
    cue_type: usize,
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("non-empty lexicon")
}

fn person(rng: &mut ChaCha8Rng) -> Vec<String> {
    if rng.random_bool(0.6) {
        vec![pick(rng, FIRST_NAMES).into(), pick(rng, LAST_NAMES).into()]
    } else {
        vec![pick(rng, LAST_NAMES).into()]
    }
}

fn location(rng: &mut ChaCha8Rng) -> Vec<String> {
    if rng.random_bool(0.7) {
        vec![pick(rng, CITIES).into()]
    } else {
        vec![pick(rng, CITIES).into(), pick(rng, REGIONS).into()]
    }
}

fn whole(tokens: Vec<String>, type_id: usize) -> Chunk {
    let end = tokens.len() - 1;
    Chunk {
        tokens,
        spans: vec![SpanAnnotation { start: 0, end, type_id }],
        cue_type: type_id,
    }
}

fn nested_org(rng: &mut ChaCha8Rng, inner_type: usize) -> Chunk {
    let (tokens, inner) = if inner_type == PER {
        let p = person(rng);
        let n = p.len();
        let mut t = p;
        t.push(pick(rng, ORG_SUFFIXES).into());
        (t, SpanAnnotation { start: 0, end: n - 1, type_id: PER })
    } else if rng.random_bool(0.5) {
        let l = location(rng);
        let n = l.len();
        let mut t = vec![pick(rng, ORG_PREFIXES).to_string(), "of".to_string()];
        t.extend(l);
        (t, SpanAnnotation { start: 2, end: 1 + n, type_id: LOC })
    } else {
        let l = location(rng);
        let n = l.len();
        let mut t = l;
        t.push(pick(rng, ORG_SUFFIXES).into());
        (t, SpanAnnotation { start: 0, end: n - 1, type_id: LOC })
    };
    let end = tokens.len() - 1;
    Chunk {
        tokens,
        spans: vec![SpanAnnotation { start: 0, end, type_id: ORG }, inner],
        cue_type: ORG,
    }
}

fn sentence(cfg: &SynthConfig, rng: &mut ChaCha8Rng, doc_id: String) -> Result<Document> {
    let p = cfg.entity_prob();
    let mut present = [rng.random_bool(p), rng.random_bool(p), rng.random_bool(p)];
    let mut chunks = Vec::new();
    if present.iter().any(|&b| b) && rng.random_bool(cfg.nesting_rate) {
        let inner = if rng.random_bool(0.5) { PER } else { LOC };
        chunks.push(nested_org(rng, inner));
        present[ORG] = false;
        present[inner] = false;
    }
    if present[PER] {
        chunks.push(whole(person(rng), PER));
    }
    if present[LOC] {
        chunks.push(whole(location(rng), LOC));
    }
    if present[ORG] {
        chunks.push(whole(
            vec![pick(rng, ORG_HEADS).into(), pick(rng, ORG_SUFFIXES).into()],
            ORG,
        ));
    }
    chunks.shuffle(rng);

    let (lo, hi) = cfg.filler_range();
    let n_fill = rng.random_range(lo..=hi);
    let mut cuts: Vec<usize> = (0..chunks.len()).map(|_| rng.random_range(0..=n_fill)).collect();
    cuts.sort_unstable();

    let mut tokens: Vec<String> = Vec::new();
    let mut spans = Vec::new();
    let mut placed = 0;
    for (chunk, cut) in chunks.into_iter().zip(cuts) {
        while placed < cut {
            tokens.push(pick(rng, FILLERS).into());
            placed += 1;
        }
        if cfg.shared_query_vocab && rng.random_bool(0.8) {
            tokens.push(SHARED_CUES[chunk.cue_type].into());
        } else if rng.random_bool(0.6) {
            let cues = [PER_CUES, LOC_CUES, ORG_CUES][chunk.cue_type];
            tokens.push(pick(rng, cues).into());
        }
        let base = tokens.len();
        spans.extend(chunk.spans.iter().map(|s| SpanAnnotation {
            start: s.start + base,
            end: s.end + base,
            type_id: s.type_id,
        }));
        tokens.extend(chunk.tokens);
    }
    while placed < n_fill {
        tokens.push(pick(rng, FILLERS).into());
        placed += 1;
    }
    if tokens.is_empty() {
        tokens.push(pick(rng, FILLERS).into());
    }
    spans.sort();
    Document::new(doc_id, TokenSequence::from_tokens(tokens, " ")?, spans)
}

fn split(cfg: &SynthConfig, name: &str, count: usize, stream: u64) -> Result<Vec<Document>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    (0..count)
        .map(|i| sentence(cfg, &mut rng, format!("{name}-{i:05}")))
        .collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    Ok(SynthCorpus {
        labels: LabelSet::new(TYPES)?,
        templates: templates(),
        train: split(cfg, "train", cfg.size, 1)?,
        dev: split(cfg, "dev", cfg.dev_size, 2)?,
        test: split(cfg, "test", cfg.test_size, 3)?,
    })
}

/// Writes `train.jsonl`, `dev.jsonl`, `test.jsonl` and `templates.jsonl`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("train.jsonl", emit_nested(&corpus.train, &corpus.labels)?),
        ("dev.jsonl", emit_nested(&corpus.dev, &corpus.labels)?),
        ("test.jsonl", emit_nested(&corpus.test, &corpus.labels)?),
        ("templates.jsonl", corpus.templates.emit()?),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Fraction of context positions that are gold starts, over all
/// (sentence, entity type) instances.
pub fn positive_rate(docs: &[Document], labels: &LabelSet) -> f64 {
    let positions: usize = docs.iter().map(|d| d.sequence.len() * labels.len()).sum();
    let starts: usize = docs
        .iter()
        .map(|d| {
            let mut s: Vec<(usize, usize)> = d.gold_spans.iter().map(|s| (s.start, s.type_id)).collect();
            s.sort_unstable();
            s.dedup();
            s.len()
        })
        .sum();
    if positions == 0 {
        0.0
    } else {
        starts as f64 / positions as f64
    }
}

/// True when the document contains a span strictly inside another span.
pub fn has_nested_pair(doc: &Document) -> bool {
    doc.gold_spans.iter().any(|outer| {
        doc.gold_spans.iter().any(|inner| {
            inner != outer && outer.start <= inner.start && inner.end <= outer.end && outer.len() > inner.len()
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_overlap_without_nesting() {
        let c = generate(&SynthConfig::new(100, 0.0, 0.0, 1)).unwrap();
        for d in c.train.iter().chain(&c.dev).chain(&c.test) {
            assert!(!d.has_overlap(), "{:?}", d);
        }
    }

    #[test]
    fn full_nesting_rate() {
        let c = generate(&SynthConfig::new(200, 1.0, 0.0, 2)).unwrap();
        let mut with_entities = 0;
        for d in c.train.iter().chain(&c.dev).chain(&c.test) {
            if !d.gold_spans.is_empty() {
                with_entities += 1;
                assert!(has_nested_pair(d), "{:?}", d);
            }
        }
        assert!(with_entities > 100);
    }

    #[test]
    fn one_mention_per_type() {
        let c = generate(&SynthConfig::new(300, 0.5, 0.3, 3)).unwrap();
        for d in &c.train {
            for t in 0..3 {
                assert!(d.gold_spans.iter().filter(|s| s.type_id == t).count() <= 1);
            }
        }
    }

    #[test]
    fn imbalance_lowers_positive_rate() {
        let dense = generate(&SynthConfig::new(300, 0.0, 0.0, 4)).unwrap();
        let sparse = generate(&SynthConfig::new(300, 0.0, 1.0, 4)).unwrap();
        let a = positive_rate(&dense.train, &dense.labels);
        let b = positive_rate(&sparse.train, &sparse.labels);
        assert!(b < 0.02, "{b}");
        assert!(a > b);
    }

    #[test]
    fn deterministic_by_seed() {
        let cfg = SynthConfig::new(50, 0.5, 0.5, 9);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = generate(&SynthConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate(&SynthConfig::new(0, 0.5, 0.5, 1)).is_err());
        assert!(generate(&SynthConfig::new(5, 1.5, 0.5, 1)).is_err());
    }
}
