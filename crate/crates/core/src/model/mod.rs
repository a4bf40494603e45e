//! Attention-based GRU encoder-decoder with exact gradients.

mod checkpoint;
mod decode;
mod net;
mod params;

pub use checkpoint::{Checkpoint, FORMAT as CHECKPOINT_FORMAT, VERSION as CHECKPOINT_VERSION};
pub use decode::{beam_decode, beam_search, greedy_decode, normalized_score, BeamConfig};
pub use net::{accumulate_gradient, backward, encode, forward, sequence_log_prob, step_log_probs};
pub use params::{ModelConfig, ModelParams, Precision, Tensor, INIT_SCALE, TENSOR_NAMES};

/// Central finite-difference check of [`backward`] over every parameter
/// (or a strided subset when `stride > 1`). Returns the largest relative
/// error `|g - fd| / max(|g| + |fd|, floor)`.
pub fn gradient_check(
    params: &ModelParams,
    x: &[usize],
    target: &[usize],
    weights: &[f64],
    eps: f64,
    stride: usize,
) -> crate::Result<f64> {
    let (_, grads) = backward(params, x, target, weights)?;
    let objective = |p: &ModelParams| -> crate::Result<f64> {
        let lps = step_log_probs(p, x, target)?;
        Ok(lps.iter().zip(weights).map(|(l, w)| l * w).sum())
    };
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let mut counter = 0usize;
    for ti in 0..TENSOR_NAMES.len() {
        let n = params.tensors()[ti].data.len();
        for k in 0..n {
            counter += 1;
            if stride > 1 && counter % stride != 0 {
                continue;
            }
            let orig = params.tensors()[ti].data[k];
            probe.tensors_mut()[ti].data[k] = orig + eps;
            let up = objective(&probe)?;
            probe.tensors_mut()[ti].data[k] = orig - eps;
            let down = objective(&probe)?;
            probe.tensors_mut()[ti].data[k] = orig;
            let fd = (up - down) / (2.0 * eps);
            let g = grads.tensors()[ti].data[k];
            let denom = (g.abs() + fd.abs()).max(1e-6);
            worst = worst.max((g - fd).abs() / denom);
        }
    }
    Ok(worst)
}
