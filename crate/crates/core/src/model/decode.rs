use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::net::{check_ids, decoder_step, encode};
use super::params::ModelParams;
use crate::corpus::{BOS, EOS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub width: usize,
    pub length_penalty: f64,
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            width: 5,
            length_penalty: 1.0,
            max_len: 100,
        }
    }
}

/// Argmax decoding; ties go to the lowest token id. The returned sequence
/// includes EOS when one was produced within `max_len` steps.
pub fn greedy_decode(params: &ModelParams, x: &[usize], max_len: usize) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be >= 1"));
    }
    check_ids(params, x, &[])?;
    let enc = encode(params, x);
    let mut state = enc.initial_state();
    let mut input = BOS;
    let mut out = Vec::new();
    for _ in 0..max_len {
        let step = decoder_step(params, &enc, &state, input);
        let mut best = 0;
        for (k, &lp) in step.log_probs.iter().enumerate() {
            if lp > step.log_probs[best] {
                best = k;
            }
        }
        out.push(best);
        if best == EOS {
            break;
        }
        state = step.state;
        input = best;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<usize>,
    log_prob: f64,
    state: Vec<f64>,
}

/// Length-normalized score of a finished hypothesis.
pub fn normalized_score(log_prob: f64, len: usize, length_penalty: f64) -> f64 {
    log_prob / (len.max(1) as f64).powf(length_penalty)
}

fn by_score_then_tokens(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(b.1))
}

/// Beam search. Each step expands all live hypotheses, keeps the `width`
/// best candidates by log-probability (ties to the smaller token sequence)
/// and retires those ending in EOS. Hypotheses still live after `max_len`
/// steps are retired unfinished. The winner maximizes
/// `log_prob / len^length_penalty`, with `len` counting EOS.
pub fn beam_decode(params: &ModelParams, x: &[usize], cfg: &BeamConfig) -> Result<Vec<usize>> {
    Ok(beam_search(params, x, cfg)?.0)
}

/// Like [`beam_decode`] but also returns the winning normalized score.
pub fn beam_search(
    params: &ModelParams,
    x: &[usize],
    cfg: &BeamConfig,
) -> Result<(Vec<usize>, f64)> {
    if cfg.width == 0 {
        return Err(Error::invalid("beam width must be >= 1"));
    }
    if !(cfg.length_penalty > 0.0) {
        return Err(Error::invalid("length penalty must be > 0"));
    }
    if cfg.max_len == 0 {
        return Err(Error::invalid("max_len must be >= 1"));
    }
    check_ids(params, x, &[])?;
    let enc = encode(params, x);
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: enc.initial_state(),
    }];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();

    for _ in 0..cfg.max_len {
        if live.is_empty() {
            break;
        }
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (hi, hyp) in live.iter().enumerate() {
            let input = hyp.tokens.last().copied().unwrap_or(BOS);
            let step = decoder_step(params, &enc, &hyp.state, input);
            for (tok, lp) in step.log_probs.iter().enumerate() {
                candidates.push((hyp.log_prob + lp, hi, tok));
            }
            next_states.push(step.state);
        }
        let seq = |&(_, hi, tok): &(f64, usize, usize)| {
            let mut s = live[hi].tokens.clone();
            s.push(tok);
            s
        };
        let mut keyed: Vec<(f64, Vec<usize>, usize)> =
            candidates.iter().map(|c| (c.0, seq(c), c.1)).collect();
        keyed.sort_by(|a, b| by_score_then_tokens((a.0, &a.1), (b.0, &b.1)));
        keyed.truncate(cfg.width);

        let mut next_live = Vec::new();
        for (lp, tokens, hi) in keyed {
            if tokens.last() == Some(&EOS) {
                finished.push((tokens, lp));
            } else {
                next_live.push(Hyp {
                    tokens,
                    log_prob: lp,
                    state: next_states[hi].clone(),
                });
            }
        }
        live = next_live;
    }
    finished.extend(live.into_iter().map(|h| (h.tokens, h.log_prob)));

    let scored: Vec<(f64, Vec<usize>)> = finished
        .into_iter()
        .map(|(t, lp)| (normalized_score(lp, t.len(), cfg.length_penalty), t))
        .collect();
    let best = scored
        .into_iter()
        .min_by(|a, b| by_score_then_tokens((a.0, &a.1), (b.0, &b.1)))
        .expect("at least one hypothesis");
    Ok((best.1, best.0))
}
