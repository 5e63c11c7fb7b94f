//! Command-line front end: `synth`, `train`, `predict`, `eval`, `ablate`.
//!
//! Run settings come from an optional TOML file; any flag overrides the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data_model::{LabelSet, QueryStyle};
use crate::error::{Error, Result};
use crate::ingestion::{parse_bio, parse_nested, scan_nested_types, Document, QueryTemplateSet, Tokenization};
use crate::model::Checkpoint;
use crate::pipeline::records::{parse_predictions, to_jsonl, MetricsRecord, PredictionRecord};
use crate::pipeline::train::gold_map;
use crate::pipeline::{
    ablate_data_fraction, ablate_loss, ablate_query_style, evaluate, predict_corpus, train, AblationData,
    AblationRow, AdamConfig, DecodeConfig, EvalReport, TrainSettings,
};
use crate::span_model::{LossConfig, LossKind, SpanStrategy};
use crate::synth::{generate, write_corpus, SynthConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFiniteLoss { .. } | Error::DegenerateInput => EXIT_NUMERIC,
        Error::InvalidConfig(_) | Error::Io { .. } | Error::SchemaMismatch { .. } => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Parser)]
#[command(name = "mrc-ner", version, about = "Query-driven span extraction for nested NER")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic nested corpus.
    Synth(SynthArgs),
    /// Train a model and keep the best dev checkpoint.
    Train(RunArgs),
    /// Run a checkpoint over a corpus and write span records.
    Predict(PredictArgs),
    /// Score prediction records against a gold corpus.
    Eval(EvalArgs),
    /// Train one model per condition along an ablation axis.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of training sentences.
    #[arg(long, default_value_t = 500)]
    pub size: usize,
    /// Dev and test sentences each (default: size / 5).
    #[arg(long)]
    pub held_out: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub nesting_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub imbalance: f64,
    #[arg(long)]
    pub shared_query_vocab: bool,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Nested,
    Bio,
}

/// Every setting of a training run. Paths are resolved relative to the
/// working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub format: CorpusFormat,
    /// Entity types; inferred from the training corpus when empty.
    pub types: Vec<String>,
    pub tokenization: Tokenization,
    pub query_style: QueryStyle,
    pub loss: LossKind,
    pub lambda: f64,
    pub strategy: SpanStrategy,
    pub threshold: f64,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: Option<usize>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Run directory name under `output_dir`; a timestamp when absent.
    pub run_name: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainSettings::default();
        Self {
            train: None,
            dev: None,
            test: None,
            templates: None,
            format: CorpusFormat::Nested,
            types: Vec::new(),
            tokenization: t.tokenization,
            query_style: t.query_style,
            loss: t.loss.kind,
            lambda: t.loss.lambda,
            strategy: t.strategy,
            threshold: t.threshold,
            d_model: t.d_model,
            n_layers: t.n_layers,
            n_heads: t.n_heads,
            d_ff: t.d_ff,
            max_len: t.max_len,
            dropout: t.dropout,
            learning_rate: t.optimizer.learning_rate,
            clip_norm: t.optimizer.clip_norm,
            batch_size: t.batch_size,
            epochs: t.epochs,
            patience: t.patience,
            seed: 42,
            output_dir: PathBuf::from("runs"),
            run_name: None,
        }
    }
}

impl RunConfig {
    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_len: self.max_len,
            dropout: self.dropout,
            strategy: self.strategy,
            query_style: self.query_style,
            tokenization: self.tokenization,
            loss: LossConfig {
                kind: self.loss,
                lambda: self.lambda,
            },
            threshold: self.threshold,
            optimizer: AdamConfig {
                learning_rate: self.learning_rate,
                clip_norm: self.clip_norm,
                ..AdamConfig::default()
            },
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            target_dev_f1: None,
        }
    }

    fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        let p = path
            .clone()
            .ok_or_else(|| Error::InvalidConfig(format!("no {what} path given")))?;
        if !p.exists() {
            return Err(Error::InvalidConfig(format!("{what} path `{}` does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn validate_paths(&self) -> Result<()> {
        Self::require(&self.train, "train")?;
        Self::require(&self.dev, "dev")?;
        Self::require(&self.templates, "templates")?;
        if self.test.is_some() {
            Self::require(&self.test, "test")?;
        }
        Ok(())
    }
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<CorpusFormat>,
    /// Comma-separated entity types.
    #[arg(long, value_delimiter = ',')]
    pub types: Option<Vec<String>>,
    #[arg(long)]
    pub tokenization: Option<Tokenization>,
    #[arg(long)]
    pub query_style: Option<QueryStyle>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub strategy: Option<SpanStrategy>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub run_name: Option<String>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str(&text)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        macro_rules! over {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field { c.$field = v.clone().into(); }
            )*};
        }
        over!(
            train, dev, test, templates, format, types, tokenization, query_style, loss, lambda, strategy,
            threshold, d_model, n_layers, n_heads, d_ff, max_len, dropout, learning_rate, clip_norm,
            batch_size, epochs, patience, seed, output_dir, run_name
        );
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = CorpusFormat::Nested)]
    pub format: CorpusFormat,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, value_enum, default_value_t = CorpusFormat::Nested)]
    pub format: CorpusFormat,
    /// Comma-separated entity types; inferred from gold and predictions when absent.
    #[arg(long, value_delimiter = ',')]
    pub types: Option<Vec<String>>,
    /// Machine-readable report (default: `<predictions>.eval.json`).
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationAxis {
    Query,
    Loss,
    Fraction,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub axis: AblationAxis,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1.0")]
    pub fractions: Vec<f64>,
    /// Seeds to repeat every condition with (default: the run seed).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Entity types named by a corpus, in order of first appearance.
pub fn infer_types(text: &str, format: CorpusFormat) -> Result<Vec<String>> {
    match format {
        CorpusFormat::Nested => scan_nested_types(text),
        CorpusFormat::Bio => {
            let mut names: Vec<String> = Vec::new();
            for line in text.lines() {
                if let Some((_, tag)) = line.split_once('\t') {
                    if let Some((_, name)) = tag.trim().split_once('-') {
                        if !names.iter().any(|n| n == name) {
                            names.push(name.to_string());
                        }
                    }
                }
            }
            Ok(names)
        }
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat, labels: &LabelSet, tok: Tokenization) -> Result<Vec<Document>> {
    let text = read(path)?;
    match format {
        CorpusFormat::Nested => parse_nested(&text, labels, tok),
        CorpusFormat::Bio => parse_bio(&text, labels, tok),
    }
}

struct LoadedRun {
    config: RunConfig,
    labels: LabelSet,
    templates: QueryTemplateSet,
    train: Vec<Document>,
    dev: Vec<Document>,
    test: Option<Vec<Document>>,
}

fn load_run(config: RunConfig) -> Result<LoadedRun> {
    config.validate_paths()?;
    let templates = QueryTemplateSet::parse(&read(config.templates.as_ref().expect("validated"))?)?;
    let train_path = config.train.clone().expect("validated");
    let names = if config.types.is_empty() {
        let mut names = infer_types(&read(&train_path)?, config.format)?;
        names.sort();
        names
    } else {
        config.types.clone()
    };
    let labels = LabelSet::new(names)?;
    if labels.is_empty() {
        return Err(Error::InvalidConfig("no entity types given or found in the training corpus".into()));
    }
    templates.check_covers(&labels)?;
    let tok = config.tokenization;
    let train = load_corpus(&train_path, config.format, &labels, tok)?;
    let dev = load_corpus(config.dev.as_ref().expect("validated"), config.format, &labels, tok)?;
    let test = config
        .test
        .as_ref()
        .map(|p| load_corpus(p, config.format, &labels, tok))
        .transpose()?;
    Ok(LoadedRun {
        config,
        labels,
        templates,
        train,
        dev,
        test,
    })
}

fn run_dir(config: &RunConfig) -> PathBuf {
    let name = config.run_name.clone().unwrap_or_else(|| {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        format!("run-{secs}")
    });
    config.output_dir.join(name)
}

fn run_id(config: &RunConfig) -> String {
    config
        .run_name
        .clone()
        .unwrap_or_else(|| format!("{}-{}-seed{}", config.query_style, config.loss, config.seed))
}

fn metrics_record(
    run_id: &str,
    epoch: usize,
    split: &str,
    scores: (f64, f64, f64),
    settings: &TrainSettings,
    fraction: f64,
    seed: u64,
    train_loss: Option<f64>,
) -> MetricsRecord {
    MetricsRecord {
        run_id: run_id.to_string(),
        epoch,
        split: split.to_string(),
        precision: scores.0,
        recall: scores.1,
        f1: scores.2,
        loss_kind: settings.loss.kind.to_string(),
        query_style: settings.query_style.to_string(),
        fraction,
        seed,
        train_loss,
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::new(args.size, args.nesting_rate, args.imbalance, args.seed);
    if let Some(h) = args.held_out {
        cfg.dev_size = h;
        cfg.test_size = h;
    }
    cfg.shared_query_vocab = args.shared_query_vocab;
    let corpus = generate(&cfg)?;
    write_corpus(&corpus, &args.out)?;
    log::info!(
        "wrote {} / {} / {} sentences to {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        args.out.display()
    );
    Ok(())
}

/// Trains and writes `checkpoint.json`, `metrics.jsonl` and `config.toml`
/// into the run directory, which is returned.
pub fn cmd_train(args: &RunArgs) -> Result<PathBuf> {
    let run = load_run(args.resolve()?)?;
    let settings = run.config.train_settings();
    let seed = run.config.seed;
    let outcome = train(&run.train, &run.dev, &run.labels, &run.templates, &settings, seed)?;

    let dir = run_dir(&run.config);
    let id = run_id(&run.config);
    let mut records: Vec<MetricsRecord> = outcome
        .history
        .iter()
        .map(|h| {
            let d = &h.dev;
            metrics_record(&id, h.epoch, "dev", (d.precision, d.recall, d.f1), &settings, 1.0, seed, Some(h.train_loss))
        })
        .collect();
    if let Some(test) = &run.test {
        let r = crate::pipeline::train::evaluate_model(test, &outcome.checkpoint, &settings.decode_config())?;
        records.push(metrics_record(&id, outcome.best_epoch, "test", (r.precision, r.recall, r.f1), &settings, 1.0, seed, None));
    }
    write(&dir.join("metrics.jsonl"), &to_jsonl(&records)?)?;
    write(
        &dir.join("config.toml"),
        &toml::to_string(&run.config).map_err(|e| Error::InvalidConfig(e.to_string()))?,
    )?;
    outcome.checkpoint.save(&dir.join("checkpoint.json"))?;
    log::info!("best dev F1 {:.4} at epoch {}; run directory {}", outcome.best_dev.f1, outcome.best_epoch, dir.display());
    Ok(dir)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = Checkpoint::load(&args.checkpoint)?;
    let decode = DecodeConfig {
        threshold: args.threshold,
        strategy: model.params.head.strategy,
    };
    decode.validate()?;
    let docs = load_corpus(&args.input, args.format, &model.labels, model.tokenization)?;
    let predicted = predict_corpus(&docs, &model, &decode)?;
    let records: Vec<PredictionRecord> = docs
        .iter()
        .zip(&predicted)
        .map(|(d, spans)| PredictionRecord::new(d.doc_id.clone(), spans, &model.labels))
        .collect();
    write(&args.output, &to_jsonl(&records)?)
}

/// Scores predictions, prints a table to stdout and writes the JSON report.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let gold_text = read(&args.gold)?;
    let pred_text = read(&args.predictions)?;
    let names = match &args.types {
        Some(t) => t.clone(),
        None => {
            let mut names = infer_types(&gold_text, args.format)?;
            for rec in crate::pipeline::records::from_jsonl::<PredictionRecord>(&pred_text)? {
                for s in rec.spans {
                    if !names.contains(&s.type_name) {
                        names.push(s.type_name);
                    }
                }
            }
            names.sort();
            names
        }
    };
    let labels = LabelSet::new(names)?;
    let gold_docs = match args.format {
        CorpusFormat::Nested => parse_nested(&gold_text, &labels, Tokenization::Word)?,
        CorpusFormat::Bio => parse_bio(&gold_text, &labels, Tokenization::Word)?,
    };
    let gold = gold_map(&gold_docs);
    let mut predicted = parse_predictions(&pred_text, &labels)?;
    // documents without any record predicted nothing
    if pred_text.trim().is_empty() {
        predicted = gold.keys().map(|k| (k.clone(), Vec::new())).collect::<BTreeMap<_, _>>();
    }
    let report = evaluate(&predicted, &gold, &labels)?;
    print!("{}", format_report(&report));
    let out = args
        .metrics_out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.eval.json", args.predictions.display())));
    write(&out, &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

pub fn format_report(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>8} {:>6} {:>6} {:>6}", "type", "P", "R", "F", "tp", "pred", "gold");
    for (name, t) in &r.per_type {
        let _ = writeln!(
            s,
            "{:<10} {:>8.4} {:>8.4} {:>8.4} {:>6} {:>6} {:>6}",
            name, t.precision, t.recall, t.f1, t.true_positives, t.predicted, t.gold
        );
    }
    let _ = writeln!(
        s,
        "{:<10} {:>8.4} {:>8.4} {:>8.4} {:>6} {:>6} {:>6}",
        "micro", r.precision, r.recall, r.f1, r.true_positives, r.predicted, r.gold
    );
    s
}

pub const ABLATION_HEADER: &str = "axis\tcondition\tseed\tfraction\tquery_style\tloss_kind\tbest_epoch\tP\tR\tF";

/// Runs the ablation and writes `ablation.tsv` plus one metrics file per
/// condition and seed. Returns the rows and the run directory.
pub fn cmd_ablate(args: &AblateArgs) -> Result<(Vec<AblationRow>, PathBuf)> {
    let run = load_run(args.run.resolve()?)?;
    let settings = run.config.train_settings();
    let test = run.test.as_deref().unwrap_or(&run.dev);
    let data = AblationData {
        train: &run.train,
        dev: &run.dev,
        test,
        labels: &run.labels,
        templates: &run.templates,
    };
    let seeds = args.seeds.clone().unwrap_or_else(|| vec![run.config.seed]);
    let axis = format!("{:?}", args.axis).to_lowercase();
    let dir = run_dir(&run.config);

    let mut rows = Vec::new();
    for &seed in &seeds {
        rows.extend(match args.axis {
            AblationAxis::Query => ablate_query_style(&data, &settings, seed)?,
            AblationAxis::Loss => ablate_loss(&data, &settings, seed)?,
            AblationAxis::Fraction => ablate_data_fraction(&data, &settings, &args.fractions, seed)?,
        });
    }

    let mut table = String::from(ABLATION_HEADER);
    table.push('\n');
    for row in &rows {
        let _ = writeln!(
            table,
            "{axis}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            row.condition,
            row.seed,
            row.fraction,
            row.query_style,
            row.loss_kind,
            row.best_epoch,
            row.test.precision,
            row.test.recall,
            row.test.f1
        );
        let row_settings = TrainSettings {
            query_style: row.query_style,
            loss: LossConfig {
                kind: row.loss_kind,
                ..settings.loss
            },
            ..settings.clone()
        };
        let id = format!("{axis}-{}-seed{}", row.condition, row.seed);
        let mut records: Vec<MetricsRecord> = row
            .history
            .iter()
            .map(|h| {
                let d = &h.dev;
                metrics_record(&id, h.epoch, "dev", (d.precision, d.recall, d.f1), &row_settings, row.fraction, row.seed, Some(h.train_loss))
            })
            .collect();
        let t = &row.test;
        records.push(metrics_record(&id, row.best_epoch, "test", (t.precision, t.recall, t.f1), &row_settings, row.fraction, row.seed, None));
        write(&dir.join(format!("{id}.metrics.jsonl")), &to_jsonl(&records)?)?;
    }
    write(&dir.join("ablation.tsv"), &table)?;
    Ok((rows, dir))
}

/// Parses `argv` and runs the chosen command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a).map(|dir| println!("{}", dir.display())),
        Command::Predict(a) => cmd_predict(&a),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Ablate(a) => cmd_ablate(&a).map(|(_, dir)| println!("{}", dir.display())),
    }
}
