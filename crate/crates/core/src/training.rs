//! Token-weighted likelihood objectives and the fine-tuning loop.
//!
//! Corrections train on the post-edited target with unit weights. Markings
//! train on the model's own hypothesis with one weight per token: correct
//! tokens receive `delta_plus`, marked tokens `delta_minus`. Losses are the
//! negative weighted log-likelihood, summed over tokens and averaged over the
//! sentences of a batch.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{apply_bpe_word, TextCodec, EOS};
use crate::error::{Error, Result};
use crate::feedback::postedit_diff;
use crate::metrics::{bleu, corpus_ter};
use crate::model::{
    accumulate_gradient, beam_decode, greedy_decode, step_log_probs, BeamConfig, ModelParams,
};
use crate::optim::{clip_grad_norm, Optimizer, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    ZeroOne,
    Signed,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub kind: SchemeKind,
    pub delta_plus: f64,
    pub delta_minus: f64,
}

impl WeightScheme {
    /// Reward correct tokens, ignore marked ones.
    pub fn zero_one() -> Self {
        WeightScheme {
            kind: SchemeKind::ZeroOne,
            delta_plus: 1.0,
            delta_minus: 0.0,
        }
    }

    /// Reward correct tokens and penalize marked ones.
    pub fn signed() -> Self {
        WeightScheme {
            kind: SchemeKind::Signed,
            delta_plus: 0.5,
            delta_minus: -0.5,
        }
    }

    pub fn custom(delta_plus: f64, delta_minus: f64) -> Result<Self> {
        let s = WeightScheme {
            kind: SchemeKind::Custom,
            delta_plus,
            delta_minus,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta_plus.is_finite() || !self.delta_minus.is_finite() {
            return Err(Error::Config("scheme weights must be finite".into()));
        }
        match self.kind {
            SchemeKind::ZeroOne if (self.delta_plus, self.delta_minus) != (1.0, 0.0) => {
                Err(Error::Config("zero_one scheme is fixed to (1, 0)".into()))
            }
            SchemeKind::Custom if self.delta_plus <= self.delta_minus => Err(Error::Config(
                "custom scheme needs delta_plus > delta_minus".into(),
            )),
            _ => Ok(()),
        }
    }

    /// The grid offered for tuning: (1, 0), (0.5, -0.5), (1, -1).
    pub fn tuning_grid() -> Vec<WeightScheme> {
        vec![
            WeightScheme::zero_one(),
            WeightScheme::signed(),
            WeightScheme::custom(1.0, -1.0).expect("valid"),
        ]
    }

    pub fn weight(&self, flagged: bool) -> f64 {
        if flagged {
            self.delta_minus
        } else {
            self.delta_plus
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeightVector {
    pub hypothesis_id: String,
    pub weights: Vec<f64>,
}

impl TokenWeightVector {
    /// Appends the weight given to the end-of-sentence token.
    pub fn with_eos(mut self, weight: f64) -> Self {
        self.weights.push(weight);
        self
    }
}

/// Maps per-token flags to scheme weights.
pub fn token_weights(
    hypothesis_id: &str,
    hyp_len: usize,
    flags: &[bool],
    scheme: &WeightScheme,
) -> Result<TokenWeightVector> {
    if flags.len() != hyp_len {
        return Err(Error::LengthMismatch {
            expected: hyp_len,
            actual: flags.len(),
        });
    }
    scheme.validate()?;
    Ok(TokenWeightVector {
        hypothesis_id: hypothesis_id.to_string(),
        weights: flags.iter().map(|&f| scheme.weight(f)).collect(),
    })
}

/// Direction of the sentence-level weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Fraction of tokens left unflagged.
    #[default]
    FractionCorrect,
    /// Fraction of tokens flagged.
    FractionFlagged,
}

/// Collapses flags to one constant weight for every token.
pub fn sentence_weight_reduction(
    hypothesis_id: &str,
    flags: &[bool],
    polarity: Polarity,
) -> Result<TokenWeightVector> {
    if flags.is_empty() {
        return Err(Error::invalid("sentence weight of an empty hypothesis"));
    }
    let flagged = flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64;
    let delta = match polarity {
        Polarity::FractionCorrect => 1.0 - flagged,
        Polarity::FractionFlagged => flagged,
    };
    Ok(TokenWeightVector {
        hypothesis_id: hypothesis_id.to_string(),
        weights: vec![delta; flags.len()],
    })
}

/// One training sequence: source ids, target ids ending in EOS and one
/// weight per target id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub id: String,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub weights: Vec<f64>,
}

impl TrainExample {
    pub fn supervised(id: impl Into<String>, source: Vec<usize>, target: Vec<usize>) -> Self {
        let weights = vec![1.0; target.len()];
        TrainExample {
            id: id.into(),
            source,
            target,
            weights,
        }
    }
}

/// Mean over examples of `-sum_t w_t log p_t`, with its gradient.
pub fn weighted_nll(params: &ModelParams, batch: &[TrainExample]) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let scale = -1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for ex in batch {
        total += accumulate_gradient(
            params,
            &ex.source,
            &ex.target,
            &ex.weights,
            scale,
            &mut grads,
        )?;
    }
    Ok((total * scale, grads))
}

/// Loss value only.
pub fn weighted_nll_value(params: &ModelParams, batch: &[TrainExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for ex in batch {
        if ex.weights.len() != ex.target.len() {
            return Err(Error::LengthMismatch {
                expected: ex.target.len(),
                actual: ex.weights.len(),
            });
        }
        let lps = step_log_probs(params, &ex.source, &ex.target)?;
        total += lps.iter().zip(&ex.weights).map(|(l, w)| l * w).sum::<f64>();
    }
    Ok(-total / batch.len() as f64)
}

/// Likelihood of user corrections: every target token has weight one.
pub fn correction_loss(
    params: &ModelParams,
    batch: &[(Vec<usize>, Vec<usize>)],
) -> Result<(f64, ModelParams)> {
    if let Some((_, y)) = batch.iter().find(|(_, y)| y.is_empty()) {
        debug_assert!(y.is_empty());
        return Err(Error::invalid("empty correction target"));
    }
    let examples: Vec<TrainExample> = batch
        .iter()
        .map(|(x, y)| TrainExample::supervised("", x.clone(), y.clone()))
        .collect();
    weighted_nll(params, &examples)
}

/// Token-weighted likelihood of marked hypotheses.
pub fn marking_loss(
    params: &ModelParams,
    batch: &[(Vec<usize>, Vec<usize>, TokenWeightVector)],
) -> Result<(f64, ModelParams)> {
    let examples = batch
        .iter()
        .map(|(x, y, w)| {
            if w.weights.len() != y.len() {
                return Err(Error::LengthMismatch {
                    expected: y.len(),
                    actual: w.weights.len(),
                });
            }
            Ok(TrainExample {
                id: w.hypothesis_id.clone(),
                source: x.clone(),
                target: y.clone(),
                weights: w.weights.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    weighted_nll(params, &examples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Corrections,
    Markings,
    SentenceLevel,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Corrections => "corrections",
            Objective::Markings => "markings",
            Objective::SentenceLevel => "sentence_level",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackMode {
    Marking,
    Postedit,
}

/// One line of the annotated-dataset file. Tokens are words as shown to
/// annotators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedRecord {
    pub sentence_id: String,
    pub hyp_tokens: Vec<String>,
    pub mode: FeedbackMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flags: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub postedit: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl AnnotatedRecord {
    /// Flags over `hyp_tokens`: the marking itself, or the post-edit diff.
    pub fn effective_flags(&self) -> Result<Vec<bool>> {
        match (self.mode, &self.flags, &self.postedit) {
            (FeedbackMode::Marking, Some(f), _) => {
                if f.len() != self.hyp_tokens.len() {
                    return Err(Error::LengthMismatch {
                        expected: self.hyp_tokens.len(),
                        actual: f.len(),
                    });
                }
                Ok(f.clone())
            }
            (FeedbackMode::Postedit, _, Some(pe)) => Ok(postedit_diff(&self.hyp_tokens, pe)),
            _ => Err(Error::invalid(format!(
                "{}: record lacks the field its mode requires",
                self.sentence_id
            ))),
        }
    }
}

/// How a training set is derived from annotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub objective: Objective,
    pub scheme: WeightScheme,
    pub polarity: Polarity,
}

/// Expands word-level weights to the codec's subword units.
fn unit_weights(codec: &TextCodec, words: &[String], word_weights: &[f64]) -> Vec<f64> {
    match &codec.merges {
        None => word_weights.to_vec(),
        Some(m) => words
            .iter()
            .zip(word_weights)
            .flat_map(|(w, &wt)| std::iter::repeat_n(wt, apply_bpe_word(m, w).len()))
            .collect(),
    }
}

fn encode_words(codec: &TextCodec, words: &[String]) -> Vec<usize> {
    let units = match &codec.merges {
        Some(m) => crate::corpus::apply_bpe(m, words),
        None => words.to_vec(),
    };
    let mut ids = codec.vocab.encode(&units);
    ids.push(EOS);
    ids
}

/// Builds training examples for `spec.objective` from the records that
/// carry the needed annotation; the others are skipped. The EOS token is
/// weighted like a correct token (`delta_plus`, or the sentence weight).
pub fn build_examples(
    records: &[AnnotatedRecord],
    sources: &HashMap<String, Vec<usize>>,
    trg: &TextCodec,
    spec: &ObjectiveSpec,
) -> Result<Vec<TrainExample>> {
    spec.scheme.validate()?;
    let mut out = Vec::new();
    for rec in records {
        let source = sources
            .get(&rec.sentence_id)
            .ok_or_else(|| Error::NotFound(format!("source for {}", rec.sentence_id)))?
            .clone();
        let example = match spec.objective {
            Objective::Corrections => {
                match &rec.postedit {
                    Some(pe) if rec.mode == FeedbackMode::Postedit => Some(
                        TrainExample::supervised(&rec.sentence_id, source, encode_words(trg, pe)),
                    ),
                    _ => None,
                }
            }
            Objective::Markings => {
                if rec.mode != FeedbackMode::Marking {
                    None
                } else {
                    let word_w = match &rec.weights {
                        Some(w) => {
                            if w.len() != rec.hyp_tokens.len() {
                                return Err(Error::LengthMismatch {
                                    expected: rec.hyp_tokens.len(),
                                    actual: w.len(),
                                });
                            }
                            w.clone()
                        }
                        None => {
                            let flags = rec.effective_flags()?;
                            token_weights(
                                &rec.sentence_id,
                                rec.hyp_tokens.len(),
                                &flags,
                                &spec.scheme,
                            )?
                            .weights
                        }
                    };
                    let mut weights = unit_weights(trg, &rec.hyp_tokens, &word_w);
                    weights.push(spec.scheme.delta_plus);
                    Some(TrainExample {
                        id: rec.sentence_id.clone(),
                        source,
                        target: encode_words(trg, &rec.hyp_tokens),
                        weights,
                    })
                }
            }
            Objective::SentenceLevel => {
                if rec.hyp_tokens.is_empty() {
                    None
                } else {
                    let flags = rec.effective_flags()?;
                    let delta = sentence_weight_reduction(&rec.sentence_id, &flags, spec.polarity)?
                        .weights[0];
                    let target = encode_words(trg, &rec.hyp_tokens);
                    let weights = vec![delta; target.len()];
                    Some(TrainExample {
                        id: rec.sentence_id.clone(),
                        source,
                        target,
                        weights,
                    })
                }
            }
        };
        if let Some(ex) = example {
            debug_assert_eq!(ex.target.len(), ex.weights.len());
            out.push(ex);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid(format!(
            "no annotations usable for objective {}",
            spec.objective.as_str()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Stop after this many epochs without dev TER improvement.
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Beam width used for dev decoding; 1 means greedy.
    #[serde(default = "one")]
    pub dev_beam_width: usize,
    /// Dev TER points an epoch must gain over the best so far to be kept.
    #[serde(default)]
    pub min_improvement: f64,
}

fn one() -> usize {
    1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.min_improvement >= 0.0) {
            return Err(Error::Config("min_improvement must be >= 0".into()));
        }
        if self.dev_beam_width == 0 {
            return Err(Error::Config("dev_beam_width must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 10,
            optimizer: OptimizerKind::Adam,
            seed: 1,
            patience: None,
            clip_norm: Some(5.0),
            dev_beam_width: 1,
            min_improvement: 0.0,
        }
    }
}

/// Held-out data for model selection, scored on word tokens.
#[derive(Debug, Clone)]
pub struct DevSet {
    pub sources: Vec<Vec<usize>>,
    pub references: Vec<Vec<String>>,
    pub codec: TextCodec,
}

/// Decoding budget relative to the source length.
pub fn max_decode_len(src_len: usize) -> usize {
    2 * src_len + 10
}

/// Translates every source and returns word tokens.
pub fn translate_all(
    params: &ModelParams,
    sources: &[Vec<usize>],
    codec: &TextCodec,
    beam_width: usize,
) -> Result<Vec<Vec<String>>> {
    sources
        .iter()
        .map(|x| {
            let max_len = max_decode_len(x.len());
            let ids = if beam_width <= 1 {
                greedy_decode(params, x, max_len)?
            } else {
                beam_decode(
                    params,
                    x,
                    &BeamConfig {
                        width: beam_width,
                        length_penalty: 1.0,
                        max_len,
                    },
                )?
            };
            Ok(codec.decode_tokens(&ids))
        })
        .collect()
}

/// Corpus TER (percent) and BLEU of the model on `dev`.
pub fn evaluate(params: &ModelParams, dev: &DevSet, beam_width: usize) -> Result<(f64, f64)> {
    let hyps = translate_all(params, &dev.sources, &dev.codec, beam_width)?;
    Ok((
        100.0 * corpus_ter(&hyps, &dev.references)?,
        bleu(&hyps, &dev.references)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    pub objective: String,
    pub loss: f64,
    pub dev_ter: Option<f64>,
    pub dev_bleu: Option<f64>,
}

pub struct FineTuneOutcome {
    /// Best-dev parameters, or the final ones without a dev set.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub log: Vec<LogEntry>,
    /// Elapsed seconds at the end of each logged epoch. Kept out of the log
    /// so that logs are reproducible byte for byte.
    pub elapsed_s: Vec<f64>,
}

/// Continues training `params` on `train`. Epoch 0 of the log evaluates the
/// starting point, so a run that never improves on dev returns it unchanged.
pub fn fine_tune(
    params: ModelParams,
    train: &[TrainExample],
    dev: Option<&DevSet>,
    objective: Objective,
    config: &TrainConfig,
) -> Result<FineTuneOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if config.patience.is_some() && dev.is_none() {
        return Err(Error::Config("early stopping needs a dev set".into()));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = params;
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, &params);

    let eval = |p: &ModelParams| -> Result<(Option<f64>, Option<f64>)> {
        match dev {
            Some(d) => {
                let (t, b) = evaluate(p, d, config.dev_beam_width)?;
                Ok((Some(t), Some(b)))
            }
            None => Ok((None, None)),
        }
    };

    let (t0, b0) = eval(&params)?;
    let mut log = vec![LogEntry {
        epoch: 0,
        objective: objective.as_str().into(),
        loss: weighted_nll_value(&params, train)?,
        dev_ter: t0,
        dev_bleu: b0,
    }];
    let mut elapsed_s = vec![started.elapsed().as_secs_f64()];
    let mut best = (t0.unwrap_or(f64::INFINITY), 0usize, params.clone());
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainExample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, mut grads) = weighted_nll(&params, &batch)?;
            loss_sum += loss * batch.len() as f64;
            if let Some(c) = config.clip_norm {
                clip_grad_norm(&mut grads, c);
            }
            opt.step(&mut params, &grads)?;
        }
        let (ter, bl) = eval(&params)?;
        log.push(LogEntry {
            epoch,
            objective: objective.as_str().into(),
            loss: loss_sum / train.len() as f64,
            dev_ter: ter,
            dev_bleu: bl,
        });
        elapsed_s.push(started.elapsed().as_secs_f64());
        match ter {
            Some(t) if t < best.0 - config.min_improvement => best = (t, epoch, params.clone()),
            None => best = (f64::INFINITY, epoch, params.clone()),
            _ => {}
        }
        if let Some(p) = config.patience {
            if epoch - best.1 >= p {
                break;
            }
        }
    }
    Ok(FineTuneOutcome {
        params: best.2,
        best_epoch: best.1,
        log,
        elapsed_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Precision};

    fn model(seed: u64) -> ModelParams {
        let mut p = ModelParams::init(ModelConfig {
            src_vocab_size: 10,
            trg_vocab_size: 10,
            embed_dim: 4,
            hidden_dim: 5,
            seed,
            precision: Precision::F64,
        })
        .unwrap();
        for t in p.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= 10.0);
        }
        p
    }

    #[test]
    fn scheme_values() {
        let flags = [false, true, false];
        let z = token_weights("h", 3, &flags, &WeightScheme::zero_one()).unwrap();
        assert_eq!(z.weights, [1.0, 0.0, 1.0]);
        let s = token_weights("h", 3, &flags, &WeightScheme::signed()).unwrap();
        assert_eq!(s.weights, [0.5, -0.5, 0.5]);
        let ok = token_weights("h", 4, &[false; 4], &WeightScheme::signed()).unwrap();
        assert_eq!(ok.weights, [0.5; 4]);
        assert!(token_weights("h", 2, &flags, &WeightScheme::signed()).is_err());
    }

    #[test]
    fn scheme_validation() {
        assert!(WeightScheme::custom(0.2, 0.2).is_err());
        assert!(WeightScheme::custom(1.0, -1.0).is_ok());
        let bad = WeightScheme {
            kind: SchemeKind::ZeroOne,
            delta_plus: 0.5,
            delta_minus: 0.0,
        };
        assert!(bad.validate().is_err());
        assert_eq!(WeightScheme::tuning_grid().len(), 3);
    }

    #[test]
    fn sentence_level_weights() {
        let mut flags = vec![false; 8];
        flags[1] = true;
        flags[5] = true;
        let d = sentence_weight_reduction("h", &flags, Polarity::FractionCorrect).unwrap();
        assert_eq!(d.weights, vec![0.75; 8]);
        let lit = sentence_weight_reduction("h", &flags, Polarity::FractionFlagged).unwrap();
        assert_eq!(lit.weights, vec![0.25; 8]);
        let clean = sentence_weight_reduction("h", &[false; 5], Polarity::default()).unwrap();
        assert_eq!(clean.weights, vec![1.0; 5]);
        assert!(sentence_weight_reduction("h", &[], Polarity::default()).is_err());
    }

    #[test]
    fn uniform_correction_loss() {
        let mut p = ModelParams::init(ModelConfig {
            src_vocab_size: 6,
            trg_vocab_size: 4,
            embed_dim: 3,
            hidden_dim: 3,
            seed: 0,
            precision: Precision::F64,
        })
        .unwrap();
        p.out_w.data.iter_mut().for_each(|v| *v = 0.0);
        let (loss, _) = correction_loss(&p, &[(vec![4, 5], vec![1, EOS])]).unwrap();
        assert!((loss - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!((loss - 2.7726).abs() < 1e-4);
    }

    #[test]
    fn marking_loss_by_hand() {
        let p = model(3);
        let x = vec![4, 5, 6];
        let y = vec![7, EOS];
        let lps = step_log_probs(&p, &x, &y).unwrap();
        let w = TokenWeightVector {
            hypothesis_id: "h".into(),
            weights: vec![0.5, -0.5],
        };
        let (loss, _) = marking_loss(&p, &[(x, y, w)]).unwrap();
        assert!((loss - -(0.5 * lps[0] - 0.5 * lps[1])).abs() < 1e-12);
    }

    #[test]
    fn marking_loss_hand_arithmetic() {
        // per-step log-probs [-0.1, -2.3] with weights [0.5, -0.5]
        let lps = [-0.1f64, -2.3];
        let w = [0.5, -0.5];
        let loss = -(lps[0] * w[0] + lps[1] * w[1]);
        assert!((loss - -1.1).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_zero_loss() {
        let p = model(4);
        let w = TokenWeightVector {
            hypothesis_id: "h".into(),
            weights: vec![0.0; 3],
        };
        let (loss, g) = marking_loss(&p, &[(vec![4], vec![5, 6, EOS], w)]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.l2_norm(), 0.0);
    }

    #[test]
    fn all_ones_marking_equals_correction() {
        let p = model(5);
        let pairs = vec![(vec![4, 5], vec![6, 7, EOS]), (vec![8], vec![9, EOS])];
        let (lc, gc) = correction_loss(&p, &pairs).unwrap();
        let marked: Vec<_> = pairs
            .iter()
            .map(|(x, y)| {
                (
                    x.clone(),
                    y.clone(),
                    TokenWeightVector {
                        hypothesis_id: "h".into(),
                        weights: vec![1.0; y.len()],
                    },
                )
            })
            .collect();
        let (lm, gm) = marking_loss(&p, &marked).unwrap();
        assert_eq!(lc, lm);
        assert_eq!(gc.max_abs_diff(&gm), 0.0);
    }

    #[test]
    fn empty_batches_and_length_errors() {
        let p = model(6);
        assert!(matches!(correction_loss(&p, &[]), Err(Error::EmptyBatch)));
        assert!(matches!(marking_loss(&p, &[]), Err(Error::EmptyBatch)));
        let w = TokenWeightVector {
            hypothesis_id: "h".into(),
            weights: vec![1.0],
        };
        assert!(marking_loss(&p, &[(vec![4], vec![5, EOS], w)]).is_err());
        assert!(correction_loss(&p, &[(vec![4], vec![])]).is_err());
    }

    #[test]
    fn one_sgd_step_reduces_loss() {
        let mut p = model(7);
        let pair = vec![(vec![4, 5, 6], vec![7, 8, EOS])];
        let (before, g) = correction_loss(&p, &pair).unwrap();
        p.add_scaled(-1e-3, &g);
        let (after, _) = correction_loss(&p, &pair).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn larger_token_weight_pushes_probability_up() {
        let p = model(8);
        let x = vec![4, 6];
        let y = vec![5, 7, EOS];
        let base = [0.5, 0.5, 0.5];
        let mut bumped = base;
        bumped[1] = 1.5;
        let after = |w: &[f64]| {
            let ex = TrainExample {
                id: "h".into(),
                source: x.clone(),
                target: y.clone(),
                weights: w.to_vec(),
            };
            let (_, g) = weighted_nll(&p, &[ex]).unwrap();
            let mut q = p.clone();
            q.add_scaled(-0.05, &g);
            step_log_probs(&q, &x, &y).unwrap()[1]
        };
        assert!(after(&bumped) > after(&base));
    }

    #[test]
    fn loss_is_linear_in_weights() {
        let p = model(9);
        let mk = |w: Vec<f64>| TrainExample {
            id: "h".into(),
            source: vec![4, 5],
            target: vec![6, 7, EOS],
            weights: w,
        };
        let a = weighted_nll_value(&p, &[mk(vec![0.2, -0.4, 1.0])]).unwrap();
        let b = weighted_nll_value(&p, &[mk(vec![0.7, 0.1, -0.3])]).unwrap();
        let ab = weighted_nll_value(&p, &[mk(vec![0.9, -0.3, 0.7])]).unwrap();
        assert!((a + b - ab).abs() < 1e-12);
    }

    #[test]
    fn annotated_record_json() {
        let line =
            r#"{"sentence_id":"s1","hyp_tokens":["a","b"],"mode":"marking","flags":[false,true]}"#;
        let r: AnnotatedRecord = serde_json::from_str(line).unwrap();
        assert_eq!(r.effective_flags().unwrap(), [false, true]);
        assert_eq!(serde_json::to_string(&r).unwrap(), line);
        let pe = AnnotatedRecord {
            sentence_id: "s2".into(),
            hyp_tokens: vec!["a".into(), "b".into()],
            mode: FeedbackMode::Postedit,
            flags: None,
            postedit: Some(vec!["a".into(), "c".into()]),
            weights: None,
        };
        assert_eq!(pe.effective_flags().unwrap(), [false, true]);
    }

    #[test]
    fn early_stopping_needs_dev() {
        let p = model(1);
        let ex = vec![TrainExample::supervised("a", vec![4], vec![5, EOS])];
        let cfg = TrainConfig {
            patience: Some(2),
            ..TrainConfig::default()
        };
        assert!(fine_tune(p, &ex, None, Objective::Corrections, &cfg).is_err());
    }
}
