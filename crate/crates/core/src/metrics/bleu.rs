use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Sufficient statistics of one segment (or a sum of segments).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add(&mut self, o: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }

    /// BLEU in [0, 100]. Unigram precision is never smoothed; a zero match
    /// count at order n >= 2 is replaced by add-one smoothing
    /// `(m + 1) / (t + 1)` for that order only.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            let (m, t) = (self.matches[n] as f64, self.totals[n] as f64);
            let p = if n > 0 && self.matches[n] == 0 {
                (m + 1.0) / (t + 1.0)
            } else {
                m / t
            };
            log_sum += p.ln();
        }
        let bp = if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        100.0 * bp * (log_sum / MAX_ORDER as f64).exp()
    }
}

fn ngram_counts<T: Hash + Eq>(toks: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    for w in toks.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

pub fn segment_stats<T: Hash + Eq>(hyp: &[T], reference: &[T]) -> BleuStats {
    let mut st = BleuStats {
        hyp_len: hyp.len(),
        ref_len: reference.len(),
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        st.totals[n - 1] = hyp.len().saturating_sub(n - 1);
        st.matches[n - 1] = h
            .iter()
            .map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0)))
            .sum();
    }
    st
}

/// Corpus-level 4-gram BLEU with brevity penalty.
pub fn bleu<T: Hash + Eq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch {
            expected: refs.len(),
            actual: hyps.len(),
        });
    }
    if refs.is_empty() {
        return Err(Error::invalid("BLEU needs at least one reference"));
    }
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&segment_stats(h, r));
    }
    Ok(total.score())
}
