//! Test-only oracles, independent of the library's implementation paths.
#![allow(dead_code)]

use mrc_ner::data_model::{MrcInstance, SpanAnnotation, TokenSequence};
use mrc_ner::encoder::{build_input, CombinedInput, EncoderConfig, Vocab};
use mrc_ner::model::ModelParams;
use mrc_ner::span_model::{LossConfig, SpanStrategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

/// Dice loss written directly from its formula with plain loops.
pub fn dice_reference(p: &[f64], g: &[f64], lambda: f64) -> f64 {
    let mut num = lambda;
    let mut den = lambda;
    for i in 0..p.len() {
        num += 2.0 * p[i] * g[i];
        den += p[i] * p[i];
        den += g[i] * g[i];
    }
    1.0 - num / den
}

pub fn cross_entropy_reference(p: &[f64], g: &[f64]) -> f64 {
    let eps = 1e-7;
    let mut total = 0.0;
    for i in 0..p.len() {
        let q = p[i].max(eps).min(1.0 - eps);
        total -= if g[i] == 1.0 { q.ln() } else { (1.0 - q).ln() };
    }
    total / p.len() as f64
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// `|a − n| / max(|a|, |n|)`, with gradients that are both below `floor`
/// in magnitude treated as agreeing (finite differences cannot resolve them).
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < floor {
        return 0.0;
    }
    (analytic - numeric).abs() / scale
}

/// Brute-force decoding straight from the tie-break rules: collect candidate
/// sets, take the smallest start and largest end, reject inverted spans.
pub fn decode_reference(start_mask: u32, end_mask: u32, n: usize) -> Option<(usize, usize)> {
    let starts: Vec<usize> = (0..n).filter(|i| start_mask >> i & 1 == 1).collect();
    let ends: Vec<usize> = (0..n).filter(|i| end_mask >> i & 1 == 1).collect();
    if starts.is_empty() || ends.is_empty() {
        return None;
    }
    let s = *starts.iter().min().unwrap();
    let e = *ends.iter().max().unwrap();
    if s > e {
        None
    } else {
        Some((s, e))
    }
}

pub fn tiny_vocab() -> Vocab {
    let mut tokens: Vec<String> = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"].iter().map(|s| s.to_string()).collect();
    tokens.extend((0..12).map(|i| format!("w{i}")));
    Vocab::from(tokens)
}

pub fn tiny_config(vocab_size: usize) -> EncoderConfig {
    EncoderConfig {
        vocab_size,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 12,
        max_len: 24,
        dropout: 0.0,
    }
}

/// A random small instance with random gold spans of type 0.
pub fn random_instance(rng: &mut ChaCha8Rng, vocab: &Vocab) -> (MrcInstance, CombinedInput) {
    let nq = rng.random_range(1..=3);
    let n = rng.random_range(2..=7);
    let word = |rng: &mut ChaCha8Rng| format!("w{}", rng.random_range(0..12));
    let q: Vec<String> = (0..nq).map(|_| word(rng)).collect();
    let c: Vec<String> = (0..n).map(|_| word(rng)).collect();
    let query = TokenSequence::from_tokens(q, " ").unwrap();
    let context = TokenSequence::from_tokens(c, " ").unwrap();
    let mut spans = Vec::new();
    if rng.random_bool(0.7) {
        let s = rng.random_range(0..n);
        let e = rng.random_range(s..n);
        spans.push(SpanAnnotation { start: s, end: e, type_id: 0 });
    }
    let inst = MrcInstance::new(query, context, &spans, 0).unwrap();
    let input = build_input(&inst.query, &inst.context, vocab, 24).unwrap();
    (inst, input)
}

/// Random parameters with perturbed layer-norm scales and non-zero biases so
/// that every tensor carries a generic gradient.
pub fn random_params(seed: u64, vocab: &Vocab, strategy: SpanStrategy) -> ModelParams {
    let mut params = ModelParams::init(tiny_config(vocab.len()), strategy, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    params
}

pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Compares `loss_and_grad` to central differences of `loss` on up to
/// `per_tensor` coordinates of every parameter tensor.
pub fn check_model_gradients(
    params: &ModelParams,
    inst: &MrcInstance,
    input: &CombinedInput,
    loss: &LossConfig,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
) -> GradCheck {
    let (_, grads) = params.loss_and_grad(input, inst, loss, None).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, t)| (n, t.to_vec())).collect();
    let mut out = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    let mut work = params.clone();
    for (ti, (name, grad)) in analytic.iter().enumerate() {
        let len = grad.len();
        let picks: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..len)).collect()
        };
        for i in picks {
            let orig = work.tensors_mut()[ti][i];
            work.tensors_mut()[ti][i] = orig + FD_STEP;
            let up = work.loss(input, inst, loss, None).unwrap();
            work.tensors_mut()[ti][i] = orig - FD_STEP;
            let down = work.loss(input, inst, loss, None).unwrap();
            work.tensors_mut()[ti][i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(grad[i], numeric, 1e-7);
            out.checked += 1;
            if err > out.max_rel_err {
                out.max_rel_err = err;
                out.worst = format!("{name}[{i}]: analytic {:e} numeric {:e}", grad[i], numeric);
            }
        }
    }
    out
}

pub struct DiceSuite {
    pub max_value_err: f64,
    pub max_decomposition_err: f64,
    pub examples_exact: bool,
}

/// Library dice values against [`dice_reference`] on `draws` random triples,
/// the decomposition identity, and the three worked examples.
pub fn dice_suite(draws: usize, seed: u64) -> DiceSuite {
    use mrc_ner::span_model::{dice_decomposition, dice_loss};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DiceSuite {
        max_value_err: 0.0,
        max_decomposition_err: 0.0,
        examples_exact: true,
    };
    for _ in 0..draws {
        let n = rng.random_range(1..=32);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let lambda = rng.random_range(1e-3..4.0);
        let lib = dice_loss(&p, &g, lambda).unwrap();
        out.max_value_err = out.max_value_err.max((lib - dice_reference(&p, &g, lambda)).abs());
        let (r, q) = dice_decomposition(&p, &g, lambda).unwrap();
        out.max_decomposition_err = out.max_decomposition_err.max((r + q + lib - 1.0).abs());
    }
    out.examples_exact = dice_loss(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], 0.0).unwrap() == 0.0
        && dice_loss(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], 0.0).unwrap() == 1.0
        && (dice_loss(&[0.5, 0.5], &[1.0, 0.0], 1.0).unwrap() - 0.2).abs() < 1e-15;
    out
}

/// Exhaustive decode check for every start/end candidate pattern with
/// n ≤ `max_n`. Returns (cases, mismatches).
pub fn decode_suite(max_n: usize) -> (usize, usize) {
    use mrc_ner::data_model::PredictionOutput;
    use mrc_ner::pipeline::{decode_span, DecodeConfig};
    let cfg = DecodeConfig::default();
    let mut cases = 0;
    let mut bad = 0;
    for n in 1..=max_n {
        for sm in 0u32..1 << n {
            for em in 0u32..1 << n {
                let probs = |m: u32| (0..n).map(|i| if m >> i & 1 == 1 { 0.9 } else { 0.1 }).collect();
                let pred = PredictionOutput::new(probs(sm), probs(em)).unwrap();
                cases += 1;
                if decode_span(&pred, &cfg) != decode_reference(sm, em, n) {
                    bad += 1;
                }
            }
        }
    }
    (cases, bad)
}

pub const BIO_TYPES: [&str; 3] = ["PER", "LOC", "ORG"];

/// A random sentence with non-overlapping spans, and its BIO text written by
/// hand from the span list.
pub fn random_bio_sentence(rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<SpanAnnotation>, String) {
    let n = rng.random_range(1..=15);
    let tokens: Vec<String> = (0..n).map(|i| format!("t{}x{}", i, rng.random_range(0..50))).collect();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        if rng.random_bool(0.3) {
            let end = (i + rng.random_range(0..3)).min(n - 1);
            spans.push(SpanAnnotation {
                start: i,
                end,
                type_id: rng.random_range(0..3),
            });
            i = end + 1;
        } else {
            i += 1;
        }
    }
    let mut text = String::new();
    for (k, tok) in tokens.iter().enumerate() {
        let tag = match spans.iter().find(|s| s.start <= k && k <= s.end) {
            None => "O".to_string(),
            Some(s) if s.start == k => format!("B-{}", BIO_TYPES[s.type_id]),
            Some(s) => format!("I-{}", BIO_TYPES[s.type_id]),
        };
        text.push_str(&format!("{tok}\t{tag}\n"));
    }
    text.push('\n');
    (tokens, spans, text)
}

/// BIO parse/emit round trip on `count` random sentences. Returns failures.
pub fn bio_suite(count: usize, seed: u64) -> usize {
    use mrc_ner::data_model::LabelSet;
    use mrc_ner::ingestion::{emit_bio, parse_bio, Tokenization};
    let labels = LabelSet::new(BIO_TYPES).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = String::new();
    let mut expected = Vec::new();
    for _ in 0..count {
        let (tokens, spans, text) = random_bio_sentence(&mut rng);
        corpus.push_str(&text);
        expected.push((tokens, spans));
    }
    let docs = parse_bio(&corpus, &labels, Tokenization::Word).unwrap();
    let mut failures = count.abs_diff(docs.len());
    for (doc, (tokens, spans)) in docs.iter().zip(&expected) {
        if doc.sequence.tokens() != tokens.as_slice() || &doc.gold_spans != spans {
            failures += 1;
        }
    }
    if emit_bio(&docs, &labels).unwrap() != corpus {
        failures += 1;
    }
    failures
}

/// Random overlapping spans written as JSON by hand, parsed, and compared.
/// Returns (overlapping docs seen, failures).
pub fn nested_suite(count: usize, seed: u64) -> (usize, usize) {
    use mrc_ner::data_model::LabelSet;
    use mrc_ner::ingestion::{emit_nested, parse_nested, Tokenization};
    let labels = LabelSet::new(BIO_TYPES).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = String::new();
    let mut expected = Vec::new();
    for d in 0..count {
        let n = rng.random_range(1..=12);
        let tokens: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let mut spans: Vec<SpanAnnotation> = Vec::new();
        for _ in 0..rng.random_range(0..6) {
            let s = rng.random_range(0..n);
            let span = SpanAnnotation {
                start: s,
                end: rng.random_range(s..n),
                type_id: rng.random_range(0..3),
            };
            if !spans.contains(&span) {
                spans.push(span);
            }
        }
        let json = serde_json::json!({
            "doc_id": format!("d{d}"),
            "tokens": tokens,
            "spans": spans.iter().map(|s| serde_json::json!({
                "start": s.start, "end": s.end, "type": BIO_TYPES[s.type_id]
            })).collect::<Vec<_>>(),
        });
        lines.push_str(&json.to_string());
        lines.push('\n');
        expected.push((format!("d{d}"), tokens, spans));
    }
    let docs = parse_nested(&lines, &labels, Tokenization::Word).unwrap();
    let mut overlapping = 0;
    let mut failures = count.abs_diff(docs.len());
    for (doc, (id, tokens, spans)) in docs.iter().zip(&expected) {
        if doc.has_overlap() {
            overlapping += 1;
        }
        if &doc.doc_id != id || doc.sequence.tokens() != tokens.as_slice() || &doc.gold_spans != spans {
            failures += 1;
        }
    }
    let again = parse_nested(&emit_nested(&docs, &labels).unwrap(), &labels, Tokenization::Word).unwrap();
    if again != docs {
        failures += 1;
    }
    (overlapping, failures)
}

/// Corpus-wide identity: one instance per (document, type), and each
/// instance's indicator vectors mark exactly the boundaries of that type's
/// gold spans. Returns failures.
pub fn counting_identity(docs: &[mrc_ner::ingestion::Document], labels: &mrc_ner::data_model::LabelSet) -> usize {
    use mrc_ner::data_model::QueryStyle;
    use mrc_ner::ingestion::{build_instances, Tokenization};
    let templates = mrc_ner::synth::templates();
    let mut failures = 0;
    let mut instances = 0;
    let mut marked = 0;
    let mut boundaries = 0;
    for doc in docs {
        let insts = build_instances(doc, labels, &templates, QueryStyle::Natural, Tokenization::Word).unwrap();
        instances += insts.len();
        for (t, inst) in insts.iter().enumerate() {
            let starts: std::collections::BTreeSet<usize> =
                doc.gold_spans.iter().filter(|s| s.type_id == t).map(|s| s.start).collect();
            let ends: std::collections::BTreeSet<usize> =
                doc.gold_spans.iter().filter(|s| s.type_id == t).map(|s| s.end).collect();
            let got_s: std::collections::BTreeSet<usize> = (0..inst.g_start.len()).filter(|&i| inst.g_start[i]).collect();
            let got_e: std::collections::BTreeSet<usize> = (0..inst.g_end.len()).filter(|&i| inst.g_end[i]).collect();
            if got_s != starts || got_e != ends || inst.type_id != t || inst.context != doc.sequence {
                failures += 1;
            }
            marked += got_s.len() + got_e.len();
            boundaries += starts.len() + ends.len();
        }
    }
    if instances != docs.len() * labels.len() || marked != boundaries {
        failures += 1;
    }
    failures
}
