//! Encoder-decoder forward pass and exact backpropagation.
//!
//! Encoder: GRU over source embeddings. Decoder: GRU over previous-token
//! embeddings, initialized with the last encoder state. At every step the
//! decoder state attends over encoder states by dot product, the context and
//! state pass through a tanh projection, and a linear layer gives the logits.

use super::params::{dot, ModelParams, Tensor};
use crate::corpus::BOS;
use crate::error::{Error, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// In-place log-softmax.
pub(crate) fn log_softmax(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter_mut().for_each(|v| *v -= lse);
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

struct GruStep {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    /// U_n h_prev, needed for the reset-gate gradient.
    un: Vec<f64>,
}

fn gru_forward(
    w: &Tensor,
    u: &Tensor,
    b: &Tensor,
    x: &[f64],
    h_prev: &[f64],
) -> (Vec<f64>, GruStep) {
    let h = h_prev.len();
    let mut z = b.data[..h].to_vec();
    let mut r = b.data[h..2 * h].to_vec();
    let mut n = b.data[2 * h..].to_vec();
    w.matvec_rows_into(0, h, x, &mut z);
    w.matvec_rows_into(h, h, x, &mut r);
    w.matvec_rows_into(2 * h, h, x, &mut n);
    u.matvec_rows_into(0, h, h_prev, &mut z);
    u.matvec_rows_into(h, h, h_prev, &mut r);
    let mut un = vec![0.0; h];
    u.matvec_rows_into(2 * h, h, h_prev, &mut un);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    for i in 0..h {
        n[i] = (n[i] + r[i] * un[i]).tanh();
    }
    let out: Vec<f64> = (0..h)
        .map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i])
        .collect();
    (
        out,
        GruStep {
            h_prev: h_prev.to_vec(),
            z,
            r,
            n,
            un,
        },
    )
}

/// Accumulates parameter gradients for one GRU step and returns the
/// gradients with respect to the input and the previous state.
#[allow(clippy::too_many_arguments)]
fn gru_backward(
    w: &Tensor,
    u: &Tensor,
    gw: &mut Tensor,
    gu: &mut Tensor,
    gb: &mut Tensor,
    x: &[f64],
    step: &GruStep,
    g_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let h = g_out.len();
    let mut g_az = vec![0.0; h];
    let mut g_ar = vec![0.0; h];
    let mut g_an = vec![0.0; h];
    let mut g_un = vec![0.0; h];
    let mut g_h = vec![0.0; h];
    for i in 0..h {
        let (z, r, n) = (step.z[i], step.r[i], step.n[i]);
        let g_n = g_out[i] * (1.0 - z);
        let g_z = g_out[i] * (step.h_prev[i] - n);
        g_h[i] = g_out[i] * z;
        g_an[i] = g_n * (1.0 - n * n);
        let g_r = g_an[i] * step.un[i];
        g_un[i] = g_an[i] * r;
        g_az[i] = g_z * z * (1.0 - z);
        g_ar[i] = g_r * r * (1.0 - r);
    }
    gw.add_outer_rows(0, &g_az, x);
    gw.add_outer_rows(h, &g_ar, x);
    gw.add_outer_rows(2 * h, &g_an, x);
    gu.add_outer_rows(0, &g_az, &step.h_prev);
    gu.add_outer_rows(h, &g_ar, &step.h_prev);
    gu.add_outer_rows(2 * h, &g_un, &step.h_prev);
    for i in 0..h {
        gb.data[i] += g_az[i];
        gb.data[h + i] += g_ar[i];
        gb.data[2 * h + i] += g_an[i];
    }
    let mut g_x = vec![0.0; x.len()];
    w.matvec_t_rows_into(0, &g_az, &mut g_x);
    w.matvec_t_rows_into(h, &g_ar, &mut g_x);
    w.matvec_t_rows_into(2 * h, &g_an, &mut g_x);
    u.matvec_t_rows_into(0, &g_az, &mut g_h);
    u.matvec_t_rows_into(h, &g_ar, &mut g_h);
    u.matvec_t_rows_into(2 * h, &g_un, &mut g_h);
    (g_x, g_h)
}

/// Encoder states for one source sentence.
pub struct Encoded {
    pub(crate) states: Vec<Vec<f64>>,
    steps: Vec<GruStep>,
}

impl Encoded {
    pub fn initial_state(&self) -> Vec<f64> {
        self.states.last().cloned().expect("non-empty source")
    }
}

pub(crate) fn check_ids(params: &ModelParams, x: &[usize], y: &[usize]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::invalid("empty source sequence"));
    }
    let c = &params.config;
    if let Some(&id) = x.iter().find(|&&i| i >= c.src_vocab_size) {
        return Err(Error::Config(format!(
            "source id {id} outside vocabulary of size {}",
            c.src_vocab_size
        )));
    }
    if let Some(&id) = y.iter().find(|&&i| i >= c.trg_vocab_size) {
        return Err(Error::Config(format!(
            "target id {id} outside vocabulary of size {}",
            c.trg_vocab_size
        )));
    }
    Ok(())
}

pub fn encode(params: &ModelParams, x: &[usize]) -> Encoded {
    let h = params.config.hidden_dim;
    let mut state = vec![0.0; h];
    let mut states = Vec::with_capacity(x.len());
    let mut steps = Vec::with_capacity(x.len());
    for &tok in x {
        let (next, step) = gru_forward(
            &params.enc_w,
            &params.enc_u,
            &params.enc_b,
            params.src_emb.row(tok),
            &state,
        );
        states.push(next.clone());
        steps.push(step);
        state = next;
    }
    Encoded { states, steps }
}

/// Everything one decoder step produces, kept for backpropagation.
pub(crate) struct DecoderStep {
    input: usize,
    gru: GruStep,
    pub(crate) state: Vec<f64>,
    attn: Vec<f64>,
    context: Vec<f64>,
    proj: Vec<f64>,
    pub(crate) log_probs: Vec<f64>,
}

pub(crate) fn decoder_step(
    params: &ModelParams,
    enc: &Encoded,
    prev_state: &[f64],
    input: usize,
) -> DecoderStep {
    let (state, gru) = gru_forward(
        &params.dec_w,
        &params.dec_u,
        &params.dec_b,
        params.trg_emb.row(input),
        prev_state,
    );
    let scores: Vec<f64> = enc.states.iter().map(|hs| dot(&state, hs)).collect();
    let attn = softmax(&scores);
    let h = state.len();
    let mut context = vec![0.0; h];
    for (a, hs) in attn.iter().zip(&enc.states) {
        super::params::axpy(*a, hs, &mut context);
    }
    let mut cat = state.clone();
    cat.extend_from_slice(&context);
    let mut proj = params.att_b.data.clone();
    params.att_w.matvec_rows_into(0, h, &cat, &mut proj);
    proj.iter_mut().for_each(|v| *v = v.tanh());
    let mut log_probs = params.out_b.data.clone();
    params
        .out_w
        .matvec_rows_into(0, params.config.trg_vocab_size, &proj, &mut log_probs);
    log_softmax(&mut log_probs);
    DecoderStep {
        input,
        gru,
        state,
        attn,
        context,
        proj,
        log_probs,
    }
}

/// Runs the decoder over a prefix that starts with BOS, returning one
/// log-probability vector over the target vocabulary per prefix position.
pub fn forward(params: &ModelParams, x: &[usize], y_prefix: &[usize]) -> Result<Vec<Vec<f64>>> {
    check_ids(params, x, y_prefix)?;
    if y_prefix.first() != Some(&BOS) {
        return Err(Error::invalid("target prefix must begin with BOS"));
    }
    let enc = encode(params, x);
    let mut state = enc.initial_state();
    let mut out = Vec::with_capacity(y_prefix.len());
    for &tok in y_prefix {
        let step = decoder_step(params, &enc, &state, tok);
        state = step.state.clone();
        out.push(step.log_probs);
    }
    Ok(out)
}

/// Per-step log-probabilities of `target` (which excludes BOS and normally
/// ends with EOS).
pub fn step_log_probs(params: &ModelParams, x: &[usize], target: &[usize]) -> Result<Vec<f64>> {
    let mut prefix = Vec::with_capacity(target.len());
    prefix.push(BOS);
    prefix.extend_from_slice(&target[..target.len().saturating_sub(1)]);
    if target.is_empty() {
        return Ok(Vec::new());
    }
    let dists = forward(params, x, &prefix)?;
    Ok(dists.iter().zip(target).map(|(d, &t)| d[t]).collect())
}

/// Sum of per-step log-probabilities of `target` given `x`.
pub fn sequence_log_prob(params: &ModelParams, x: &[usize], target: &[usize]) -> Result<f64> {
    Ok(step_log_probs(params, x, target)?.iter().sum())
}

/// Value and exact gradient of `sum_t w_t log p(target_t | x, target_<t)`.
pub fn backward(
    params: &ModelParams,
    x: &[usize],
    target: &[usize],
    step_weights: &[f64],
) -> Result<(f64, ModelParams)> {
    let mut grads = params.zeros_like();
    let value = accumulate_gradient(params, x, target, step_weights, 1.0, &mut grads)?;
    Ok((value, grads))
}

/// Adds `scale * d/dθ sum_t w_t log p_t` into `grads` and returns the
/// unscaled objective value.
pub fn accumulate_gradient(
    params: &ModelParams,
    x: &[usize],
    target: &[usize],
    step_weights: &[f64],
    scale: f64,
    grads: &mut ModelParams,
) -> Result<f64> {
    if step_weights.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            actual: step_weights.len(),
        });
    }
    check_ids(params, x, target)?;
    if target.is_empty() {
        return Ok(0.0);
    }
    let h = params.config.hidden_dim;
    let enc = encode(params, x);

    let mut state = enc.initial_state();
    let mut steps = Vec::with_capacity(target.len());
    let mut input = BOS;
    let mut value = 0.0;
    for (&tok, &w) in target.iter().zip(step_weights) {
        let step = decoder_step(params, &enc, &state, input);
        value += w * step.log_probs[tok];
        state = step.state.clone();
        steps.push(step);
        input = tok;
    }

    let mut g_enc: Vec<Vec<f64>> = vec![vec![0.0; h]; enc.states.len()];
    let mut g_state_next = vec![0.0; h];
    for (t, step) in steps.iter().enumerate().rev() {
        let w = step_weights[t] * scale;
        let mut g_s = std::mem::take(&mut g_state_next);
        if w != 0.0 {
            // d(w log p_y)/dlogits = w (onehot(y) - p)
            let g_logits: Vec<f64> = step
                .log_probs
                .iter()
                .enumerate()
                .map(|(k, lp)| w * (if k == target[t] { 1.0 } else { 0.0 } - lp.exp()))
                .collect();
            grads.out_w.add_outer_rows(0, &g_logits, &step.proj);
            super::params::axpy(1.0, &g_logits, &mut grads.out_b.data);
            let mut g_proj = vec![0.0; h];
            params.out_w.matvec_t_rows_into(0, &g_logits, &mut g_proj);

            let g_pre: Vec<f64> = g_proj
                .iter()
                .zip(&step.proj)
                .map(|(g, o)| g * (1.0 - o * o))
                .collect();
            let mut cat = step.state.clone();
            cat.extend_from_slice(&step.context);
            grads.att_w.add_outer_rows(0, &g_pre, &cat);
            super::params::axpy(1.0, &g_pre, &mut grads.att_b.data);
            let mut g_cat = vec![0.0; 2 * h];
            params.att_w.matvec_t_rows_into(0, &g_pre, &mut g_cat);
            let (g_s_out, g_ctx) = g_cat.split_at(h);
            super::params::axpy(1.0, g_s_out, &mut g_s);

            // context = sum_i a_i h_i ; a = softmax(s . h_i)
            let g_a: Vec<f64> = enc.states.iter().map(|hs| dot(hs, g_ctx)).collect();
            let mean_ga: f64 = step.attn.iter().zip(&g_a).map(|(a, g)| a * g).sum();
            for (i, hs) in enc.states.iter().enumerate() {
                let a = step.attn[i];
                super::params::axpy(a, g_ctx, &mut g_enc[i]);
                let g_e = a * (g_a[i] - mean_ga);
                super::params::axpy(g_e, hs, &mut g_s);
                super::params::axpy(g_e, &step.state, &mut g_enc[i]);
            }
        }
        let emb = params.trg_emb.row(step.input);
        let (g_x, g_h) = gru_backward(
            &params.dec_w,
            &params.dec_u,
            &mut grads.dec_w,
            &mut grads.dec_u,
            &mut grads.dec_b,
            emb,
            &step.gru,
            &g_s,
        );
        super::params::axpy(1.0, &g_x, grads.trg_emb.row_mut(step.input));
        g_state_next = g_h;
    }
    // decoder initial state is the last encoder state
    let last = g_enc.len() - 1;
    super::params::axpy(1.0, &g_state_next, &mut g_enc[last]);

    let mut g_h = vec![0.0; h];
    for (i, step) in enc.steps.iter().enumerate().rev() {
        super::params::axpy(1.0, &g_enc[i], &mut g_h);
        let emb = params.src_emb.row(x[i]);
        let (g_x, g_prev) = gru_backward(
            &params.enc_w,
            &params.enc_u,
            &mut grads.enc_w,
            &mut grads.enc_u,
            &mut grads.enc_b,
            emb,
            step,
            &g_h,
        );
        super::params::axpy(1.0, &g_x, grads.src_emb.row_mut(x[i]));
        g_h = g_prev;
    }
    Ok(value)
}
