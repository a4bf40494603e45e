//! Quality and effort metrics and paired significance testing.

mod bleu;
mod ter;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bleu::{bleu, segment_stats as bleu_segment_stats, BleuStats, MAX_ORDER};
pub use ter::{apply_shift, corpus_ter, ter, ter_stats, TerStats, MAX_SHIFT_DIST, MAX_SHIFT_SIZE};

/// Effort spent on one annotated sentence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffortRecord {
    pub sentence_id: String,
    pub keystrokes: u64,
    pub mouse_actions: u64,
    /// Total time on the item with pauses removed.
    pub duration_ms: u64,
    pub reference_chars: u64,
}

impl EffortRecord {
    pub fn actions(&self) -> u64 {
        self.keystrokes + self.mouse_actions
    }

    /// Pools two records; the KSMR of the result is the pooled ratio.
    pub fn merge(&self, other: &EffortRecord) -> EffortRecord {
        EffortRecord {
            sentence_id: format!("{}+{}", self.sentence_id, other.sentence_id),
            keystrokes: self.keystrokes + other.keystrokes,
            mouse_actions: self.mouse_actions + other.mouse_actions,
            duration_ms: self.duration_ms + other.duration_ms,
            reference_chars: self.reference_chars + other.reference_chars,
        }
    }
}

/// Keystroke and mouse-action ratio: actions per reference character.
pub fn ksmr(rec: &EffortRecord) -> Result<f64> {
    if rec.reference_chars == 0 {
        return Err(Error::invalid(format!(
            "{}: zero reference length",
            rec.sentence_id
        )));
    }
    Ok(rec.actions() as f64 / rec.reference_chars as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ter,
    Bleu,
}

/// Per-segment statistics for corpus metrics that aggregate sufficient stats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentStats {
    pub ter: TerStats,
    pub bleu: BleuStats,
}

impl SegmentStats {
    pub fn compute<T: PartialEq + Clone + std::hash::Hash + Eq>(
        hyp: &[T],
        reference: &[T],
    ) -> Self {
        SegmentStats {
            ter: ter_stats(hyp, reference),
            bleu: bleu_segment_stats(hyp, reference),
        }
    }
}

/// Corpus score (TER as a percentage, BLEU in [0, 100]) over segments.
pub fn corpus_score(metric: Metric, segs: &[&SegmentStats]) -> f64 {
    match metric {
        Metric::Ter => {
            let mut t = TerStats::default();
            segs.iter().for_each(|s| t.add(&s.ter));
            100.0 * t.score()
        }
        Metric::Bleu => {
            let mut b = BleuStats::default();
            segs.iter().for_each(|s| b.add(&s.bleu));
            b.score()
        }
    }
}

/// Paired approximate randomization. Each shuffle swaps the two systems'
/// outputs on every segment independently with probability 0.5; the p-value
/// is `(1 + #{|Δ_shuffled| >= |Δ_observed|}) / (1 + n_shuffles)`.
pub fn approx_randomization<S, F>(
    a: &[S],
    b: &[S],
    metric: F,
    n_shuffles: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[&S]) -> f64,
{
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "unpaired inputs: {} vs {} segments",
            a.len(),
            b.len()
        )));
    }
    if n_shuffles == 0 {
        return Err(Error::invalid("n_shuffles must be >= 1"));
    }
    let ra: Vec<&S> = a.iter().collect();
    let rb: Vec<&S> = b.iter().collect();
    let observed = (metric(&ra) - metric(&rb)).abs();
    let tol = 1e-9 * observed.max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut xa = Vec::with_capacity(a.len());
    let mut xb = Vec::with_capacity(a.len());
    for _ in 0..n_shuffles {
        xa.clear();
        xb.clear();
        for (sa, sb) in a.iter().zip(b) {
            if rng.random_bool(0.5) {
                xa.push(sb);
                xb.push(sa);
            } else {
                xa.push(sa);
                xb.push(sb);
            }
        }
        let d = (metric(&xa) - metric(&xb)).abs();
        if d + tol >= observed {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + n_shuffles) as f64)
}

/// Mean of per-segment scalar scores, for use with [`approx_randomization`].
pub fn mean_score(xs: &[&f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().map(|v| **v).sum::<f64>() / xs.len() as f64
}

/// Evaluation summary written by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ter: f64,
    pub bleu: f64,
    pub n_segments: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_vs_baseline: Option<f64>,
}
