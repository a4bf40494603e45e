//! Command-line driver.
//!
//! Artifact-producing subcommands read their parameters as one JSON
//! document: an optional `--config` file, then `--set key=value` overrides
//! (dotted keys reach into sections), then the subcommand's own flags.
//! Unknown keys are rejected. The resolved document is written to
//! `config.json` in the output directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::agreement::{agreement_report, Judgment, Level};
use crate::corpus::{
    build_vocab, detokenize, learn_bpe, read_corpus, read_jsonl, tokenize, write_jsonl,
    CorpusRecord, MergeTable, ParallelSentence, TextCodec, Vocabulary, EOS,
};
use crate::feedback::{random_markings, simulate_markings, DEFAULT_P_MARK};
use crate::metrics::{approx_randomization, corpus_score, EvalReport, Metric, SegmentStats};
use crate::mixedfx::{
    fit_reml, rank_group_intercepts, significance, DataTable, MixedModelSpec, LENGTH_BIN_LIMIT,
};
use crate::model::{Checkpoint, ModelConfig, ModelParams, Precision};
use crate::optim::OptimizerKind;
use crate::planner::{
    assign, ids, pick_agreement_sentences, verify_assignment, AssignmentPlan, AGREEMENT_SENTENCES,
};
use crate::service::{self, Service, ServiceData, SystemClock};
use crate::synthetic::{to_records, ComparisonConfig, ToyTask, ToyTaskConfig};
use crate::training::{
    build_examples, fine_tune, translate_all, AnnotatedRecord, DevSet, FeedbackMode, LogEntry,
    Objective, ObjectiveSpec, Polarity, TrainConfig, TrainExample, WeightScheme,
};

type Result<T> = anyhow::Result<T>;

#[derive(Parser, Debug)]
#[command(
    name = "markfeed",
    version,
    about = "Translation feedback collection and weighted fine-tuning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Shared by subcommands that take a config document.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set schedule.epochs=5`. Values are parsed
    /// as JSON and fall back to strings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Learn subword merges and vocabularies from a corpus.
    Prepare {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Repeat for several files.
        #[arg(long)]
        corpus: Vec<PathBuf>,
    },
    /// Derive markings from hypotheses and references, or random ones.
    SimulateMarkings {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Corpus records carrying `hyp` and `trg`.
        #[arg(long)]
        hyps: Option<PathBuf>,
        #[arg(long)]
        random: bool,
    },
    /// Train a model from scratch on a parallel corpus.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Continue training a checkpoint on annotations.
    Finetune {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        objective: Option<String>,
        /// zero_one, signed, custom or tune.
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Score a checkpoint or a translations file.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Paired approximate randomization against a baseline.
    Significance {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Krippendorff's alpha per mode from judgments.
    Agreement {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        judgments: Option<PathBuf>,
    },
    /// Fit a linear mixed-effects model by REML.
    Lmem {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        formula: Option<String>,
    },
    /// Assign talk parts to annotators and modes.
    Assign {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        talks: Option<usize>,
        #[arg(long)]
        annotators: Option<usize>,
    },
    /// Run the annotation service.
    Serve {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Rebuild service state offline from its event log and export it.
    Export {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Fine-tune on growing subsets of the annotations.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated subset sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Write the synthetic two-domain corpora.
    ToyData {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Entry point used by the binary. Returns the process exit status.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare { cfg, corpus } => {
            let c: PrepareConfig = resolve(
                &cfg,
                vec![(
                    "corpus",
                    (!corpus.is_empty())
                        .then(|| Value::Array(corpus.into_iter().map(path_value).collect())),
                )],
            )?;
            prepare(&c)
        }
        Command::SimulateMarkings { cfg, hyps, random } => {
            let c: SimulateConfig = resolve(
                &cfg,
                vec![
                    ("hyps", hyps.map(path_value)),
                    ("random", random.then_some(Value::Bool(true))),
                ],
            )?;
            simulate(&c)
        }
        Command::Train { cfg } => {
            let c: TrainRunConfig = resolve(&cfg, vec![])?;
            train(&c).map(|_| ())
        }
        Command::Finetune {
            cfg,
            objective,
            scheme,
        } => {
            let c: FinetuneConfig = resolve(
                &cfg,
                vec![
                    ("objective", objective.map(Value::String)),
                    ("scheme", scheme.map(Value::String)),
                ],
            )?;
            finetune(&c).map(|_| ())
        }
        Command::Evaluate { cfg } => {
            let c: EvaluateConfig = resolve(&cfg, vec![])?;
            let report = evaluate_cmd(&c)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Significance { cfg } => {
            let c: SignificanceConfig = resolve(&cfg, vec![])?;
            let report = significance_cmd(&c)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Agreement { cfg, judgments } => {
            let c: AgreementConfig = resolve(&cfg, vec![("judgments", judgments.map(path_value))])?;
            let rows = agreement_cmd(&c)?;
            println!("{}", serde_json::to_string_pretty(&rows)?);
            Ok(())
        }
        Command::Lmem { cfg, data, formula } => {
            let c: LmemConfig = resolve(
                &cfg,
                vec![
                    ("data", data.map(path_value)),
                    ("formula", formula.map(Value::String)),
                ],
            )?;
            let out = lmem(&c)?;
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
        Command::Assign {
            cfg,
            talks,
            annotators,
        } => {
            let c: AssignConfig = resolve(
                &cfg,
                vec![
                    ("talks", talks.map(|v| json!(v))),
                    ("annotators", annotators.map(|v| json!(v))),
                ],
            )?;
            assign_cmd(&c)
        }
        Command::Serve { cfg, addr, store } => {
            let c: ServeConfig = resolve(
                &cfg,
                vec![
                    ("addr", addr.map(Value::String)),
                    ("store", store.map(path_value)),
                ],
            )?;
            serve(&c)
        }
        Command::Export { cfg, store } => {
            let c: ExportConfig = resolve(&cfg, vec![("store", store.map(path_value))])?;
            export_cmd(&c)
        }
        Command::Sweep { cfg, sizes } => {
            let c: SweepConfig = resolve(&cfg, vec![("sizes", sizes.map(|v| json!(v)))])?;
            sweep(&c).map(|_| ())
        }
        Command::ToyData { cfg } => {
            let c: ToyDataConfig = resolve(&cfg, vec![])?;
            toy_data(&c)
        }
    }
}

fn path_value(p: PathBuf) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

/// Builds the config document from file, `--set` pairs and flags, in that
/// order of increasing precedence.
pub fn resolve<T: DeserializeOwned>(
    args: &ConfigArgs,
    flags: Vec<(&str, Option<Value>)>,
) -> Result<T> {
    let mut doc = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<Value>(&text)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => Value::Object(Map::new()),
    };
    if !doc.is_object() {
        bail!("config must be a JSON object");
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        set_path(&mut doc, k, value)?;
    }
    let mut flags = flags;
    flags.push(("out", args.out.clone().map(path_value)));
    flags.push(("seed", args.seed.map(|s| json!(s))));
    for (k, v) in flags {
        if let Some(v) = v {
            set_path(&mut doc, k, v)?;
        }
    }
    serde_json::from_value(doc).context("invalid config")
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| anyhow!("{key}: {part} is not inside an object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn create_run_dir<T: Serialize>(out: &Path, config: &T) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), config)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_log(path: &Path, log: &[LogEntry]) -> Result<()> {
    write_jsonl(path, log).with_context(|| format!("writing {}", path.display()))
}

fn one() -> usize {
    1
}

fn default_seed() -> u64 {
    1
}

// ---------------------------------------------------------------- prepare

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepareConfig {
    pub corpus: Vec<PathBuf>,
    pub out: PathBuf,
    /// Subword merges per side; 0 keeps whole words.
    #[serde(default)]
    pub bpe_merges: usize,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_vocab_size() -> usize {
    30_000
}

/// Source and target codecs stored in a prepared directory.
pub struct Codecs {
    pub src: TextCodec,
    pub trg: TextCodec,
}

impl Codecs {
    pub fn load(dir: &Path) -> Result<Self> {
        let side = |name: &str| -> Result<TextCodec> {
            let vocab = Vocabulary::load(&dir.join(format!("{name}.vocab")))
                .with_context(|| format!("loading {name} vocabulary from {}", dir.display()))?;
            let bpe = dir.join(format!("{name}.bpe"));
            let merges = if bpe.exists() {
                Some(MergeTable::load(&bpe)?)
            } else {
                None
            };
            Ok(TextCodec::new(vocab, merges))
        };
        Ok(Codecs {
            src: side("src")?,
            trg: side("trg")?,
        })
    }

    fn hashes(&self) -> (String, String) {
        (self.src.vocab.fingerprint(), self.trg.vocab.fingerprint())
    }

    pub fn load_checkpoint(&self, path: &Path) -> Result<ModelParams> {
        let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        let (s, t) = self.hashes();
        ck.check_vocabs(&s, &t)?;
        Ok(ck.into_params()?)
    }

    fn save_checkpoint(&self, params: &ModelParams, path: &Path) -> Result<()> {
        let (s, t) = self.hashes();
        Checkpoint::from_params(params, &s, &t).save(path)?;
        Ok(())
    }

    /// Held-out set over records that carry a reference.
    fn dev_set(&self, records: &[CorpusRecord]) -> Result<DevSet> {
        let mut sources = Vec::new();
        let mut references = Vec::new();
        for r in records {
            let t = r
                .trg
                .as_ref()
                .ok_or_else(|| anyhow!("{}: no reference", r.id))?;
            sources.push(self.src.encode(&r.src));
            references.push(tokenize(t));
        }
        Ok(DevSet {
            sources,
            references,
            codec: self.trg.clone(),
        })
    }
}

pub fn prepare(c: &PrepareConfig) -> Result<()> {
    let mut records = Vec::new();
    for p in &c.corpus {
        records.extend(read_corpus(p)?);
    }
    let src_words: Vec<Vec<String>> = records.iter().map(|r| tokenize(&r.src)).collect();
    let trg_words: Vec<Vec<String>> = records
        .iter()
        .filter_map(|r| r.trg.as_deref())
        .map(tokenize)
        .collect();
    if trg_words.is_empty() {
        bail!("no target sentences in {:?}", c.corpus);
    }
    create_run_dir(&c.out, c)?;
    for (name, words) in [("src", &src_words), ("trg", &trg_words)] {
        let units = if c.bpe_merges > 0 {
            let table = learn_bpe(words, c.bpe_merges);
            table.save(&c.out.join(format!("{name}.bpe")))?;
            words
                .iter()
                .map(|w| crate::corpus::apply_bpe(&table, w))
                .collect()
        } else {
            words.clone()
        };
        build_vocab(&units, c.vocab_size)?.save(&c.out.join(format!("{name}.vocab")))?;
    }
    let codecs = Codecs::load(&c.out)?;
    write_json(
        &c.out.join("metrics.json"),
        &json!({
            "sentences": records.len(),
            "src_vocab": codecs.src.vocab.len(),
            "trg_vocab": codecs.trg.vocab.len(),
        }),
    )
}

// ------------------------------------------------------- simulate-markings

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub hyps: PathBuf,
    pub out: PathBuf,
    #[serde(default)]
    pub random: bool,
    #[serde(default = "default_p_mark")]
    pub p_mark: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_p_mark() -> f64 {
    DEFAULT_P_MARK
}

pub fn simulate(c: &SimulateConfig) -> Result<()> {
    let records = read_corpus(&c.hyps)?;
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let hyp = tokenize(
            r.hyp
                .as_deref()
                .ok_or_else(|| anyhow!("{}: no hypothesis", r.id))?,
        );
        let flags = if c.random {
            random_markings(&r.id, hyp.len(), c.p_mark, c.seed.wrapping_add(i as u64))?.flags
        } else {
            let reference = tokenize(
                r.trg
                    .as_deref()
                    .ok_or_else(|| anyhow!("{}: no reference", r.id))?,
            );
            simulate_markings(&r.id, &hyp, &reference).flags
        };
        out.push(AnnotatedRecord {
            sentence_id: r.id.clone(),
            hyp_tokens: hyp,
            mode: FeedbackMode::Marking,
            flags: Some(flags),
            postedit: None,
            weights: None,
        });
    }
    create_run_dir(&c.out, c)?;
    write_jsonl(&c.out.join("annotations.jsonl"), &out)?;
    Ok(())
}

// ------------------------------------------------------------------ train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    #[serde(default)]
    pub precision: Precision,
}

/// Optimization settings; the run seed is kept at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default = "one")]
    pub dev_beam_width: usize,
    #[serde(default)]
    pub min_improvement: f64,
}

/// Defaults match the synthetic comparison task.
fn toy_model() -> ModelSection {
    let c = ComparisonConfig::default();
    ModelSection {
        embed_dim: c.embed_dim,
        hidden_dim: c.hidden_dim,
        precision: Precision::default(),
    }
}

fn toy_pretrain_schedule() -> Schedule {
    Schedule::from(&ComparisonConfig::default().pretrain)
}

fn toy_finetune_schedule() -> Schedule {
    Schedule::from(&ComparisonConfig::default().finetune)
}

impl From<&TrainConfig> for Schedule {
    fn from(t: &TrainConfig) -> Self {
        Schedule {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            optimizer: t.optimizer,
            patience: t.patience,
            clip_norm: t.clip_norm,
            dev_beam_width: t.dev_beam_width,
            min_improvement: t.min_improvement,
        }
    }
}

impl Schedule {
    fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            optimizer: self.optimizer,
            seed,
            patience: self.patience,
            clip_norm: self.clip_norm,
            dev_beam_width: self.dev_beam_width,
            min_improvement: self.min_improvement,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    /// Directory written by `prepare`.
    pub prepared: PathBuf,
    pub train: PathBuf,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    pub out: PathBuf,
    #[serde(default = "toy_model")]
    pub model: ModelSection,
    #[serde(default = "toy_pretrain_schedule")]
    pub schedule: Schedule,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub best_epoch: usize,
    pub dev_ter: Option<f64>,
    pub dev_bleu: Option<f64>,
    pub n_train: usize,
    /// Present when a test set was given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<WeightScheme>,
}

fn metrics_from(log: &[LogEntry], best_epoch: usize, n_train: usize) -> RunMetrics {
    let best = log.iter().find(|e| e.epoch == best_epoch);
    RunMetrics {
        best_epoch,
        dev_ter: best.and_then(|e| e.dev_ter),
        dev_bleu: best.and_then(|e| e.dev_bleu),
        n_train,
        test: None,
        scheme: None,
    }
}

pub fn train(c: &TrainRunConfig) -> Result<RunMetrics> {
    let codecs = Codecs::load(&c.prepared)?;
    let records = read_corpus(&c.train)?;
    let examples: Vec<TrainExample> = records
        .iter()
        .filter_map(|r| {
            r.trg.as_ref().map(|t| {
                let mut y = codecs.trg.encode(t);
                y.push(EOS);
                TrainExample::supervised(&r.id, codecs.src.encode(&r.src), y)
            })
        })
        .collect();
    if examples.is_empty() {
        bail!("{}: no sentence pairs", c.train.display());
    }
    let dev = c
        .dev
        .as_ref()
        .map(|p| codecs.dev_set(&read_corpus(p)?))
        .transpose()?;
    let params = ModelParams::init(ModelConfig {
        src_vocab_size: codecs.src.vocab.len(),
        trg_vocab_size: codecs.trg.vocab.len(),
        embed_dim: c.model.embed_dim,
        hidden_dim: c.model.hidden_dim,
        seed: c.seed,
        precision: c.model.precision,
    })?;
    create_run_dir(&c.out, c)?;
    let outcome = fine_tune(
        params,
        &examples,
        dev.as_ref(),
        Objective::Corrections,
        &c.schedule.with_seed(c.seed),
    )?;
    write_log(&c.out.join("log.jsonl"), &outcome.log)?;
    fs::create_dir_all(c.out.join("checkpoints"))?;
    codecs.save_checkpoint(&outcome.params, &c.out.join("checkpoints/best.json"))?;
    let metrics = metrics_from(&outcome.log, outcome.best_epoch, examples.len());
    write_json(&c.out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

// --------------------------------------------------------------- finetune

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub prepared: PathBuf,
    pub checkpoint: PathBuf,
    /// Corpus providing the source side of every annotated sentence.
    pub sources: PathBuf,
    pub annotations: PathBuf,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    pub out: PathBuf,
    pub objective: Objective,
    /// zero_one, signed, custom (with `delta_plus`/`delta_minus`) or tune.
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default)]
    pub delta_plus: Option<f64>,
    #[serde(default)]
    pub delta_minus: Option<f64>,
    #[serde(default)]
    pub polarity: Polarity,
    #[serde(default = "toy_finetune_schedule")]
    pub schedule: Schedule,
    #[serde(default = "default_beam")]
    pub test_beam_width: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_scheme() -> String {
    "signed".into()
}

fn default_beam() -> usize {
    5
}

impl FinetuneConfig {
    fn schemes(&self) -> Result<Vec<WeightScheme>> {
        Ok(match self.scheme.as_str() {
            "zero_one" => vec![WeightScheme::zero_one()],
            "signed" => vec![WeightScheme::signed()],
            "custom" => {
                let (Some(p), Some(m)) = (self.delta_plus, self.delta_minus) else {
                    bail!("scheme custom needs delta_plus and delta_minus");
                };
                vec![WeightScheme::custom(p, m)?]
            }
            "tune" => WeightScheme::tuning_grid(),
            other => bail!("unknown scheme {other:?}"),
        })
    }
}

struct FinetuneInputs {
    codecs: Codecs,
    baseline: ModelParams,
    annotations: Vec<AnnotatedRecord>,
    sources: HashMap<String, Vec<usize>>,
    dev: Option<DevSet>,
    test: Option<Vec<CorpusRecord>>,
}

fn finetune_inputs(c: &FinetuneConfig) -> Result<FinetuneInputs> {
    let codecs = Codecs::load(&c.prepared)?;
    let baseline = codecs.load_checkpoint(&c.checkpoint)?;
    let annotations: Vec<AnnotatedRecord> = read_jsonl(&c.annotations)?;
    let sources = read_corpus(&c.sources)?
        .iter()
        .map(|r| (r.id.clone(), codecs.src.encode(&r.src)))
        .collect();
    let dev = c
        .dev
        .as_ref()
        .map(|p| codecs.dev_set(&read_corpus(p)?))
        .transpose()?;
    let test = c.test.as_ref().map(|p| read_corpus(p)).transpose()?;
    Ok(FinetuneInputs {
        codecs,
        baseline,
        annotations,
        sources,
        dev,
        test,
    })
}

struct Trained {
    params: ModelParams,
    log: Vec<LogEntry>,
    metrics: RunMetrics,
}

/// Fine-tunes once per candidate scheme and keeps the best on dev.
fn finetune_on(
    c: &FinetuneConfig,
    inp: &FinetuneInputs,
    records: &[AnnotatedRecord],
    seed: u64,
) -> Result<Trained> {
    let schemes = c.schemes()?;
    if schemes.len() > 1 && inp.dev.is_none() {
        bail!("scheme tuning needs a dev set");
    }
    let mut best: Option<Trained> = None;
    for scheme in schemes {
        let spec = ObjectiveSpec {
            objective: c.objective,
            scheme,
            polarity: c.polarity,
        };
        let examples = build_examples(records, &inp.sources, &inp.codecs.trg, &spec)?;
        let out = fine_tune(
            inp.baseline.clone(),
            &examples,
            inp.dev.as_ref(),
            c.objective,
            &c.schedule.with_seed(seed),
        )?;
        let mut metrics = metrics_from(&out.log, out.best_epoch, examples.len());
        metrics.scheme = Some(scheme);
        let better = match &best {
            None => true,
            Some(b) => {
                metrics.dev_ter.unwrap_or(f64::INFINITY)
                    < b.metrics.dev_ter.unwrap_or(f64::INFINITY)
            }
        };
        if better {
            best = Some(Trained {
                params: out.params,
                log: out.log,
                metrics,
            });
        }
    }
    let mut best = best.expect("at least one scheme");
    if let Some(test) = &inp.test {
        best.metrics.test =
            Some(score_model(&best.params, &inp.codecs, test, c.test_beam_width)?.0);
    }
    Ok(best)
}

pub fn finetune(c: &FinetuneConfig) -> Result<RunMetrics> {
    let inp = finetune_inputs(c)?;
    create_run_dir(&c.out, c)?;
    let t = finetune_on(c, &inp, &inp.annotations, c.seed)?;
    write_log(&c.out.join("log.jsonl"), &t.log)?;
    fs::create_dir_all(c.out.join("checkpoints"))?;
    inp.codecs
        .save_checkpoint(&t.params, &c.out.join("checkpoints/best.json"))?;
    write_json(&c.out.join("metrics.json"), &t.metrics)?;
    Ok(t.metrics)
}

// --------------------------------------------------------------- evaluate

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Records with `trg`; with `checkpoint` they are translated, otherwise
    /// their `hyp` field is scored.
    pub test: PathBuf,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub prepared: Option<PathBuf>,
    /// Translations (records with `hyp`) to test against.
    #[serde(default)]
    pub baseline: Option<PathBuf>,
    #[serde(default = "default_beam")]
    pub beam_width: usize,
    #[serde(default = "default_shuffles")]
    pub shuffles: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_shuffles() -> usize {
    1000
}

fn segment_stats(records: &[CorpusRecord]) -> Result<Vec<SegmentStats>> {
    records
        .iter()
        .map(|r| {
            let hyp = r
                .hyp
                .as_deref()
                .ok_or_else(|| anyhow!("{}: no hypothesis", r.id))?;
            let reference = r
                .trg
                .as_deref()
                .ok_or_else(|| anyhow!("{}: no reference", r.id))?;
            Ok(SegmentStats::compute(&tokenize(hyp), &tokenize(reference)))
        })
        .collect()
}

fn report(stats: &[SegmentStats]) -> EvalReport {
    let refs: Vec<&SegmentStats> = stats.iter().collect();
    EvalReport {
        ter: corpus_score(Metric::Ter, &refs),
        bleu: corpus_score(Metric::Bleu, &refs),
        n_segments: stats.len(),
        p_vs_baseline: None,
    }
}

/// Translates `records` and scores them; returns the filled-in records too.
fn score_model(
    params: &ModelParams,
    codecs: &Codecs,
    records: &[CorpusRecord],
    beam: usize,
) -> Result<(EvalReport, Vec<CorpusRecord>)> {
    let sources: Vec<Vec<usize>> = records.iter().map(|r| codecs.src.encode(&r.src)).collect();
    let hyps = translate_all(params, &sources, &codecs.trg, beam)?;
    let filled: Vec<CorpusRecord> = records
        .iter()
        .zip(hyps)
        .map(|(r, h)| CorpusRecord {
            hyp: Some(detokenize(&h)),
            ..r.clone()
        })
        .collect();
    Ok((report(&segment_stats(&filled)?), filled))
}

/// Aligns `b` to the ids of `a`.
fn paired(a: &[CorpusRecord], b: Vec<CorpusRecord>) -> Result<Vec<CorpusRecord>> {
    let mut by_id: HashMap<String, CorpusRecord> =
        b.into_iter().map(|r| (r.id.clone(), r)).collect();
    a.iter()
        .map(|r| {
            let mut other = by_id
                .remove(&r.id)
                .ok_or_else(|| anyhow!("{}: missing from baseline", r.id))?;
            if other.trg.is_none() {
                other.trg = r.trg.clone();
            }
            Ok(other)
        })
        .collect()
}

pub fn evaluate_cmd(c: &EvaluateConfig) -> Result<EvalReport> {
    let test = read_corpus(&c.test)?;
    let (mut rep, system) = match &c.checkpoint {
        Some(ck) => {
            let prepared = c
                .prepared
                .as_ref()
                .ok_or_else(|| anyhow!("checkpoint needs prepared"))?;
            let codecs = Codecs::load(prepared)?;
            let params = codecs.load_checkpoint(ck)?;
            score_model(&params, &codecs, &test, c.beam_width)?
        }
        None => (report(&segment_stats(&test)?), test),
    };
    if let Some(b) = &c.baseline {
        let base = paired(&system, read_corpus(b)?)?;
        let sa = segment_stats(&system)?;
        let sb = segment_stats(&base)?;
        rep.p_vs_baseline = Some(approx_randomization(
            &sa,
            &sb,
            |s| corpus_score(Metric::Ter, s),
            c.shuffles,
            c.seed,
        )?);
    }
    if let Some(out) = &c.out {
        create_run_dir(out, c)?;
        write_jsonl(&out.join("translations.jsonl"), &system)?;
        write_json(&out.join("metrics.json"), &rep)?;
    }
    Ok(rep)
}

// ----------------------------------------------------------- significance

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignificanceConfig {
    /// One translations file per run of the system.
    pub systems: Vec<PathBuf>,
    pub baseline: PathBuf,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_shuffles")]
    pub shuffles: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_metric() -> Metric {
    Metric::Ter
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub system: String,
    pub score: f64,
    pub baseline_score: f64,
    pub p_value: f64,
    pub n_segments: usize,
}

/// Tests every run against the baseline separately.
pub fn significance_cmd(c: &SignificanceConfig) -> Result<Vec<SignificanceRow>> {
    if c.systems.is_empty() {
        bail!("no systems given");
    }
    let baseline = read_corpus(&c.baseline)?;
    let mut rows = Vec::new();
    for path in &c.systems {
        let sys = read_corpus(path)?;
        let base = paired(&sys, baseline.clone())?;
        let sa = segment_stats(&sys)?;
        let sb = segment_stats(&base)?;
        let score = |s: &[&SegmentStats]| corpus_score(c.metric, s);
        rows.push(SignificanceRow {
            system: path.display().to_string(),
            score: score(&sa.iter().collect::<Vec<_>>()),
            baseline_score: score(&sb.iter().collect::<Vec<_>>()),
            p_value: approx_randomization(&sa, &sb, score, c.shuffles, c.seed)?,
            n_segments: sa.len(),
        });
    }
    if let Some(out) = &c.out {
        create_run_dir(out, c)?;
        write_json(&out.join("metrics.json"), &rows)?;
    }
    Ok(rows)
}

// -------------------------------------------------------------- agreement

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementConfig {
    pub judgments: PathBuf,
    #[serde(default = "default_level")]
    pub level: Level,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_level() -> Level {
    Level::Interval
}

pub fn agreement_cmd(c: &AgreementConfig) -> Result<Vec<crate::agreement::AgreementRow>> {
    let judgments: Vec<Judgment> = read_jsonl(&c.judgments)?;
    let rows = agreement_report(&judgments, c.level);
    if let Some(out) = &c.out {
        create_run_dir(out, c)?;
        write_json(&out.join("metrics.json"), &rows)?;
    }
    Ok(rows)
}

// ------------------------------------------------------------------- lmem

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmemConfig {
    /// CSV or JSONL table.
    pub data: PathBuf,
    pub formula: String,
    /// Adds `<column>_bin` with levels short/long.
    #[serde(default)]
    pub bin_length: Option<String>,
    #[serde(default = "default_bin_limit")]
    pub bin_limit: usize,
    /// Fixed-effect name to test, e.g. `mode=marking`.
    #[serde(default)]
    pub contrast: Option<String>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Grouping whose intercepts are ranked.
    #[serde(default)]
    pub rank: Option<String>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_bin_limit() -> usize {
    LENGTH_BIN_LIMIT
}

fn default_alpha() -> f64 {
    0.05
}

pub fn lmem(c: &LmemConfig) -> Result<Value> {
    let mut table = DataTable::load(&c.data)?;
    if let Some(col) = &c.bin_length {
        table.bin_length(col, &format!("{col}_bin"), c.bin_limit)?;
    }
    let spec = MixedModelSpec::parse(&c.formula)?;
    let fit = fit_reml(&spec, &table)?;
    let mut out = json!({ "fit": fit });
    if let Some(contrast) = &c.contrast {
        out["test"] = serde_json::to_value(significance(&fit, contrast, c.alpha)?)?;
    }
    if let Some(g) = &c.rank {
        out["ranking"] = serde_json::to_value(rank_group_intercepts(&fit, g)?)?;
    }
    if let Some(dir) = &c.out {
        create_run_dir(dir, c)?;
        write_json(&dir.join("metrics.json"), &out)?;
    }
    Ok(out)
}

// ----------------------------------------------------------------- assign

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignConfig {
    /// Number of talks, named talk01...; ignored when `corpus` is given.
    #[serde(default)]
    pub talks: Option<usize>,
    /// Take talk ids from this corpus instead.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    pub annotators: usize,
    pub out: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

pub fn assign_cmd(c: &AssignConfig) -> Result<()> {
    let talks = match (&c.corpus, c.talks) {
        (Some(p), _) => {
            let mut t: Vec<String> = read_corpus(p)?.into_iter().map(|r| r.talk_id).collect();
            t.sort();
            t.dedup();
            t
        }
        (None, Some(n)) => ids("talk", n),
        (None, None) => bail!("give talks or corpus"),
    };
    let plan = assign(&talks, &ids("ann", c.annotators), c.seed)?;
    let violations = verify_assignment(&plan);
    if !violations.is_empty() {
        bail!("plan fails verification: {violations:?}");
    }
    create_run_dir(&c.out, c)?;
    plan.save(&c.out.join("plan.jsonl"))?;
    write_json(
        &c.out.join("metrics.json"),
        &json!({ "entries": plan.entries.len(), "violations": 0 }),
    )?;
    println!("{}", c.out.join("plan.jsonl").display());
    Ok(())
}

// ------------------------------------------------------------ serve/export

fn default_agreement() -> usize {
    AGREEMENT_SENTENCES
}

/// Builds the served data from a corpus (records with `hyp` and `trg`) and
/// a plan. Agreement sentences are chosen deterministically from the corpus.
pub fn load_service_data(
    corpus: &Path,
    plan: &Path,
    agreement_sentences: usize,
) -> Result<ServiceData> {
    let records = read_corpus(corpus)?;
    let plan = AssignmentPlan::load(plan)?;
    let sentences: Vec<ParallelSentence> = records
        .iter()
        .map(|r| ParallelSentence {
            id: r.id.clone(),
            source: vec![],
            reference: None,
            talk_id: r.talk_id.clone(),
            position: r.position,
            topic: r.topic.clone(),
        })
        .collect();
    let agreement = pick_agreement_sentences(&sentences, agreement_sentences);
    Ok(ServiceData::build(&records, &plan, &agreement)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    pub corpus: PathBuf,
    pub plan: PathBuf,
    #[serde(default = "default_agreement")]
    pub agreement_sentences: usize,
    pub store: PathBuf,
    #[serde(default = "default_addr")]
    pub addr: String,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_addr() -> String {
    "127.0.0.1:8080".into()
}

fn default_snapshot_every() -> u64 {
    100
}

pub fn serve(c: &ServeConfig) -> Result<()> {
    let data = load_service_data(&c.corpus, &c.plan, c.agreement_sentences)?;
    let addr: std::net::SocketAddr = c
        .addr
        .parse()
        .with_context(|| format!("bad address {:?}", c.addr))?;
    let svc = Service::open(&c.store, data, Arc::new(SystemClock), c.snapshot_every)?;
    write_json(&c.store.join("config.json"), c)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::http::serve(Arc::new(svc), addr, |a| {
        use std::io::Write;
        println!("listening on {a}");
        let _ = std::io::stdout().flush();
    }))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportConfig {
    pub corpus: PathBuf,
    pub plan: PathBuf,
    #[serde(default = "default_agreement")]
    pub agreement_sentences: usize,
    pub store: PathBuf,
    pub out: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

/// Writes `dataset.jsonl`, `effort.csv`, `judgments.jsonl` and
/// `choices.jsonl` from a replay of the store's event log.
pub fn export_cmd(c: &ExportConfig) -> Result<()> {
    let data = load_service_data(&c.corpus, &c.plan, c.agreement_sentences)?;
    let state = service::replay(&c.store, &data)?;
    let e = service::export(&data, &state)?;
    create_run_dir(&c.out, c)?;
    fs::write(c.out.join("dataset.jsonl"), &e.dataset_jsonl)?;
    fs::write(c.out.join("effort.csv"), &e.effort_csv)?;
    write_jsonl(
        &c.out.join("judgments.jsonl"),
        &service::judgments(&data, &state),
    )?;
    write_jsonl(
        &c.out.join("choices.jsonl"),
        &service::choice_judgments(&state),
    )?;
    write_json(&c.out.join("state.json"), &state)?;
    Ok(())
}

// ------------------------------------------------------------------ sweep

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Fine-tuning settings; its `out` and `seed` are ignored.
    pub finetune: FinetuneConfig,
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    /// One run per seed at every size.
    #[serde(default = "default_runs")]
    pub runs: Vec<u64>,
    pub out: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_sizes() -> Vec<usize> {
    (1..=7).map(|i| 125 * i).collect()
}

fn default_runs() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub run: u64,
    pub best_epoch: usize,
    pub dev_ter: Option<f64>,
    pub test_ter: Option<f64>,
}

/// For each run seed, shuffles the annotations once and fine-tunes on
/// nested prefixes of the requested sizes.
pub fn sweep(c: &SweepConfig) -> Result<Vec<SweepRow>> {
    if c.sizes.is_empty() || c.runs.is_empty() {
        bail!("sizes and runs must be non-empty");
    }
    let inp = finetune_inputs(&c.finetune)?;
    let n = inp.annotations.len();
    if let Some(&k) = c.sizes.iter().find(|&&k| k == 0 || k > n) {
        bail!("size {k} outside 1..={n} annotations");
    }
    create_run_dir(&c.out, c)?;
    let mut rows = Vec::new();
    let mut log = Vec::new();
    for &run in &c.runs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(
            c.seed ^ run.wrapping_mul(0x9e37_79b9_7f4a_7c15),
        ));
        for &k in &c.sizes {
            let subset: Vec<AnnotatedRecord> = order[..k]
                .iter()
                .map(|&i| inp.annotations[i].clone())
                .collect();
            let t = finetune_on(&c.finetune, &inp, &subset, run)?;
            log.extend(
                t.log
                    .iter()
                    .map(|e| json!({ "size": k, "run": run, "entry": e })),
            );
            rows.push(SweepRow {
                size: k,
                run,
                best_epoch: t.metrics.best_epoch,
                dev_ter: t.metrics.dev_ter,
                test_ter: t.metrics.test.as_ref().map(|r| r.ter),
            });
        }
    }
    write_jsonl(&c.out.join("log.jsonl"), &log)?;
    write_json(&c.out.join("metrics.json"), &rows)?;
    let mut table = String::from("size\trun\tbest_epoch\tdev_ter\ttest_ter\n");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
    for r in &rows {
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.size,
            r.run,
            r.best_epoch,
            fmt(r.dev_ter),
            fmt(r.test_ter)
        ));
    }
    fs::write(c.out.join("sweep.tsv"), &table)?;
    print!("{table}");
    Ok(rows)
}

// --------------------------------------------------------------- toy-data

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyDataConfig {
    #[serde(default)]
    pub task: ToyTaskConfig,
    pub out: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

/// Writes `pretrain.jsonl`, `indomain.jsonl`, `dev.jsonl` and `test.jsonl`.
pub fn toy_data(c: &ToyDataConfig) -> Result<()> {
    let t = ToyTask::generate(&c.task, c.seed);
    create_run_dir(&c.out, c)?;
    let parts: BTreeMap<&str, (&[crate::synthetic::Pair], &str)> = BTreeMap::from([
        ("pretrain", (&t.pretrain[..], "p")),
        ("indomain", (&t.annotated[..], "a")),
        ("dev", (&t.dev[..], "d")),
        ("test", (&t.test[..], "t")),
    ]);
    for (name, (pairs, prefix)) in parts {
        write_jsonl(
            &c.out.join(format!("{name}.jsonl")),
            &to_records(pairs, prefix, 30),
        )?;
    }
    Ok(())
}
