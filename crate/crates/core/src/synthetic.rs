//! A two-domain toy translation task for end-to-end checks at desk scale.
//!
//! Translation is word by word. Out-of-domain data translates each
//! ambiguous source word to its common sense 70% of the time and to its
//! rare sense otherwise; in-domain data always uses the rare sense and also
//! contains domain words that never occur out of domain. A model trained
//! out of domain therefore makes two kinds of in-domain errors: wrong
//! senses, which markings can correct by pushing the common sense down, and
//! unknown domain words, which only corrections can teach.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocab, CorpusRecord, Position, TextCodec, EOS};
use crate::error::Result;
use crate::feedback::{random_markings, simulate_markings, DEFAULT_P_MARK};
use crate::model::{ModelConfig, ModelParams, Precision};
use crate::training::{
    build_examples, evaluate, fine_tune, translate_all, AnnotatedRecord, DevSet, FeedbackMode,
    Objective, ObjectiveSpec, Polarity, TrainConfig, TrainExample, WeightScheme,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTaskConfig {
    pub n_pretrain: usize,
    pub n_annotated: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub n_content: usize,
    pub n_ambiguous: usize,
    pub n_domain: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of the common sense out of domain.
    pub common_sense_p: f64,
    pub ambiguous_rate: f64,
    pub domain_word_rate: f64,
}

impl Default for ToyTaskConfig {
    fn default() -> Self {
        ToyTaskConfig {
            n_pretrain: 2000,
            n_annotated: 500,
            n_dev: 500,
            n_test: 500,
            n_content: 24,
            n_ambiguous: 4,
            n_domain: 6,
            min_len: 3,
            max_len: 6,
            common_sense_p: 0.7,
            ambiguous_rate: 0.25,
            domain_word_rate: 0.15,
        }
    }
}

pub type Pair = (Vec<String>, Vec<String>);

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub pretrain: Vec<Pair>,
    pub annotated: Vec<Pair>,
    pub dev: Vec<Pair>,
    pub test: Vec<Pair>,
}

fn sentence(cfg: &ToyTaskConfig, in_domain: bool, rng: &mut ChaCha8Rng) -> Pair {
    let len = rng.random_range(cfg.min_len..=cfg.max_len);
    let mut src = Vec::with_capacity(len);
    let mut trg = Vec::with_capacity(len);
    for _ in 0..len {
        let u: f64 = rng.random();
        if u < cfg.ambiguous_rate {
            let i = rng.random_range(0..cfg.n_ambiguous);
            src.push(format!("amb{i}"));
            let common = !in_domain && rng.random_bool(cfg.common_sense_p);
            trg.push(if common {
                format!("COMMON{i}")
            } else {
                format!("RARE{i}")
            });
        } else if in_domain && u < cfg.ambiguous_rate + cfg.domain_word_rate {
            let i = rng.random_range(0..cfg.n_domain);
            src.push(format!("dom{i}"));
            trg.push(format!("DOM{i}"));
        } else {
            let i = rng.random_range(0..cfg.n_content);
            src.push(format!("w{i}"));
            trg.push(format!("W{i}"));
        }
    }
    (src, trg)
}

impl ToyTask {
    pub fn generate(cfg: &ToyTaskConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen = |n: usize, in_domain: bool| -> Vec<Pair> {
            (0..n).map(|_| sentence(cfg, in_domain, &mut rng)).collect()
        };
        let pretrain = gen(cfg.n_pretrain, false);
        let annotated = gen(cfg.n_annotated, true);
        let dev = gen(cfg.n_dev, true);
        let test = gen(cfg.n_test, true);
        ToyTask {
            pretrain,
            annotated,
            dev,
            test,
        }
    }
}

/// Corpus records with ids `{prefix}{index}`, grouped into talks of
/// `per_talk` sentences split into three positions.
pub fn to_records(pairs: &[Pair], prefix: &str, per_talk: usize) -> Vec<CorpusRecord> {
    let per_talk = per_talk.max(3);
    pairs
        .iter()
        .enumerate()
        .map(|(i, (s, t))| {
            let within = i % per_talk;
            CorpusRecord {
                id: format!("{prefix}{i}"),
                src: s.join(" "),
                trg: Some(t.join(" ")),
                talk_id: format!("{prefix}talk{}", i / per_talk),
                position: Some(Position::ALL[(within * 3 / per_talk).min(2)]),
                topic: String::new(),
                hyp: None,
            }
        })
        .collect()
}

/// Model and schedule for [`run_comparison`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    pub task: ToyTaskConfig,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            task: ToyTaskConfig::default(),
            embed_dim: 32,
            hidden_dim: 64,
            pretrain: TrainConfig {
                learning_rate: 5e-3,
                batch_size: 16,
                epochs: 40,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                learning_rate: 1e-3,
                batch_size: 16,
                epochs: 10,
                min_improvement: 0.5,
                ..TrainConfig::default()
            },
        }
    }
}

/// Held-out in-domain TER (percent) per system, with the selected epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub baseline: f64,
    pub corrections: f64,
    pub markings: f64,
    pub random: f64,
    pub best_epochs: [usize; 3],
}

fn words(codec: &TextCodec, pairs: &[Pair]) -> (Vec<Vec<usize>>, Vec<Vec<String>>) {
    pairs
        .iter()
        .map(|(s, t)| (codec.vocab.encode(s), t.clone()))
        .unzip()
}

/// A task with its codecs and the model pretrained out of domain.
pub struct Pretrained {
    pub task: ToyTask,
    pub src: TextCodec,
    pub trg: TextCodec,
    pub baseline: ModelParams,
}

pub fn pretrain(cfg: &ComparisonConfig, seed: u64) -> Result<Pretrained> {
    let task = ToyTask::generate(&cfg.task, seed);
    let train_side = task.pretrain.iter().chain(&task.annotated);
    let src_vocab = build_vocab(
        &train_side.clone().map(|p| p.0.clone()).collect::<Vec<_>>(),
        1000,
    )?;
    let trg_vocab = build_vocab(&train_side.map(|p| p.1.clone()).collect::<Vec<_>>(), 1000)?;
    let src = TextCodec::new(src_vocab, None);
    let trg = TextCodec::new(trg_vocab, None);

    let params = ModelParams::init(ModelConfig {
        src_vocab_size: src.vocab.len(),
        trg_vocab_size: trg.vocab.len(),
        embed_dim: cfg.embed_dim,
        hidden_dim: cfg.hidden_dim,
        seed,
        precision: Precision::F64,
    })?;
    let examples: Vec<TrainExample> = task
        .pretrain
        .iter()
        .enumerate()
        .map(|(i, (s, t))| {
            let mut y = trg.vocab.encode(t);
            y.push(EOS);
            TrainExample::supervised(format!("p{i}"), src.vocab.encode(s), y)
        })
        .collect();
    let pre_cfg = TrainConfig {
        seed,
        ..cfg.pretrain.clone()
    };
    let baseline = fine_tune(params, &examples, None, Objective::Corrections, &pre_cfg)?.params;
    Ok(Pretrained {
        task,
        src,
        trg,
        baseline,
    })
}

/// Pretrains out of domain, then fine-tunes the same baseline on the
/// in-domain annotation set from post-edits (references), simulated
/// markings under the signed scheme, and random markings under the same
/// scheme. Model selection uses the dev set; scores are on the test set.
pub fn run_comparison(cfg: &ComparisonConfig, seed: u64) -> Result<ComparisonReport> {
    let Pretrained {
        task,
        src,
        trg,
        baseline,
    } = pretrain(cfg, seed)?;
    let (dev_src, dev_ref) = words(&src, &task.dev);
    let dev = DevSet {
        sources: dev_src,
        references: dev_ref,
        codec: trg.clone(),
    };
    let (test_src, test_ref) = words(&src, &task.test);
    let test = DevSet {
        sources: test_src,
        references: test_ref,
        codec: trg.clone(),
    };
    let beam = cfg.finetune.dev_beam_width;
    let baseline_ter = evaluate(&baseline, &test, beam)?.0;

    let (ann_src, _) = words(&src, &task.annotated);
    let hyps = translate_all(&baseline, &ann_src, &trg, beam)?;
    let sources: HashMap<String, Vec<usize>> = ann_src
        .iter()
        .enumerate()
        .map(|(i, x)| (format!("a{i}"), x.clone()))
        .collect();
    let mut corrections = Vec::new();
    let mut markings = Vec::new();
    let mut random = Vec::new();
    for (i, (hyp, (_, reference))) in hyps.iter().zip(&task.annotated).enumerate() {
        let id = format!("a{i}");
        let record = |mode, flags, postedit| AnnotatedRecord {
            sentence_id: id.clone(),
            hyp_tokens: hyp.clone(),
            mode,
            flags,
            postedit,
            weights: None,
        };
        corrections.push(record(
            FeedbackMode::Postedit,
            None,
            Some(reference.clone()),
        ));
        let sim = simulate_markings(&id, hyp, reference);
        markings.push(record(FeedbackMode::Marking, Some(sim.flags), None));
        let rnd = random_markings(
            &id,
            hyp.len(),
            DEFAULT_P_MARK,
            seed.wrapping_mul(1_000_003) + i as u64,
        )?;
        random.push(record(FeedbackMode::Marking, Some(rnd.flags), None));
    }

    let ft_cfg = TrainConfig {
        seed,
        ..cfg.finetune.clone()
    };
    let run = |records: &[AnnotatedRecord], objective: Objective| -> Result<(f64, usize)> {
        let spec = ObjectiveSpec {
            objective,
            scheme: WeightScheme::signed(),
            polarity: Polarity::default(),
        };
        let examples = build_examples(records, &sources, &trg, &spec)?;
        let out = fine_tune(baseline.clone(), &examples, Some(&dev), objective, &ft_cfg)?;
        Ok((evaluate(&out.params, &test, beam)?.0, out.best_epoch))
    };
    let (c, ce) = run(&corrections, Objective::Corrections)?;
    let (m, me) = run(&markings, Objective::Markings)?;
    let (r, re) = run(&random, Objective::Markings)?;
    Ok(ComparisonReport {
        seed,
        baseline: baseline_ter,
        corrections: c,
        markings: m,
        random: r,
        best_epochs: [ce, me, re],
    })
}
