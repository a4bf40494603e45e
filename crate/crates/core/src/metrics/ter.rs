//! Translation edit rate: token edit distance plus greedy block shifts.
//!
//! A shift moves a contiguous hypothesis block that also occurs somewhere in
//! the reference to another position. Each round applies the shift with the
//! largest reduction in edit distance (ties: longer block, earlier start,
//! earlier destination); rounds stop when no shift reduces the distance.
//! Each applied shift costs one edit.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::feedback::levenshtein;

/// Longest block considered for a shift.
pub const MAX_SHIFT_SIZE: usize = 10;
/// Largest distance a block may move.
pub const MAX_SHIFT_DIST: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TerStats {
    pub edits: usize,
    pub shifts: usize,
    pub ref_len: usize,
}

impl TerStats {
    pub fn score(&self) -> f64 {
        if self.ref_len == 0 {
            return 0.0;
        }
        (self.edits + self.shifts) as f64 / self.ref_len as f64
    }

    pub fn add(&mut self, other: &TerStats) {
        self.edits += other.edits;
        self.shifts += other.shifts;
        self.ref_len += other.ref_len;
    }
}

/// Removes `hyp[start..start+len]` and reinserts it so that it begins at
/// index `dest` of the result.
pub fn apply_shift<T: Clone>(hyp: &[T], start: usize, len: usize, dest: usize) -> Vec<T> {
    let block = &hyp[start..start + len];
    let mut rest: Vec<T> = hyp[..start]
        .iter()
        .chain(&hyp[start + len..])
        .cloned()
        .collect();
    let tail = rest.split_off(dest);
    rest.extend_from_slice(block);
    rest.extend(tail);
    rest
}

fn best_shift<T: PartialEq + Clone + std::hash::Hash + Eq>(
    hyp: &[T],
    reference: &[T],
    current: usize,
) -> Option<(Vec<T>, usize)> {
    let n = hyp.len();
    let mut ref_blocks: HashSet<&[T]> = HashSet::new();
    for len in 1..=MAX_SHIFT_SIZE.min(reference.len()) {
        ref_blocks.extend(reference.windows(len));
    }
    // (gain, len, start, dest)
    let mut best: Option<(usize, usize, usize, usize)> = None;
    for start in 0..n {
        for len in 1..=MAX_SHIFT_SIZE.min(n - start) {
            if !ref_blocks.contains(&hyp[start..start + len]) {
                continue;
            }
            for dest in 0..=(n - len) {
                if dest == start || dest.abs_diff(start) > MAX_SHIFT_DIST {
                    continue;
                }
                let shifted = apply_shift(hyp, start, len, dest);
                let cost = levenshtein(&shifted, reference);
                if cost >= current {
                    continue;
                }
                let gain = current - cost;
                let better = match best {
                    None => true,
                    Some((g, l, s, d)) => {
                        (gain, len, std::cmp::Reverse(start), std::cmp::Reverse(dest))
                            > (g, l, std::cmp::Reverse(s), std::cmp::Reverse(d))
                    }
                };
                if better {
                    best = Some((gain, len, start, dest));
                }
            }
        }
    }
    best.map(|(gain, len, start, dest)| (apply_shift(hyp, start, len, dest), current - gain))
}

pub fn ter_stats<T: PartialEq + Clone + std::hash::Hash + Eq>(
    hyp: &[T],
    reference: &[T],
) -> TerStats {
    let mut cur = hyp.to_vec();
    let mut dist = levenshtein(&cur, reference);
    let mut shifts = 0;
    while dist > 0 {
        match best_shift(&cur, reference, dist) {
            Some((next, d)) => {
                cur = next;
                dist = d;
                shifts += 1;
            }
            None => break,
        }
    }
    TerStats {
        edits: dist,
        shifts,
        ref_len: reference.len(),
    }
}

/// Sentence-level TER as a fraction (not a percentage).
pub fn ter<T: PartialEq + Clone + std::hash::Hash + Eq>(hyp: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::invalid("TER needs a non-empty reference"));
    }
    Ok(ter_stats(hyp, reference).score())
}

/// Corpus TER: total edits over total reference length.
pub fn corpus_ter<T: PartialEq + Clone + std::hash::Hash + Eq>(
    hyps: &[Vec<T>],
    refs: &[Vec<T>],
) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch {
            expected: refs.len(),
            actual: hyps.len(),
        });
    }
    let mut total = TerStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        if r.is_empty() {
            return Err(Error::invalid("TER needs non-empty references"));
        }
        total.add(&ter_stats(h, r));
    }
    Ok(total.score())
}
