//! Feedback signals over hypothesis tokens: simulated and random markings,
//! post-edit diffs and correction rates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marking probability of the random baseline.
pub const DEFAULT_P_MARK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Human,
    Simulated,
    Random,
}

/// Per-token error flags; `true` means marked incorrect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marking {
    pub hypothesis_id: String,
    pub flags: Vec<bool>,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostEdit {
    pub hypothesis_id: String,
    pub edited_text: Vec<String>,
    /// `true` for hypothesis tokens the post-edit did not preserve.
    pub edit_flags: Vec<bool>,
}

impl PostEdit {
    pub fn new(hypothesis_id: impl Into<String>, hyp: &[String], edited: Vec<String>) -> Self {
        let edit_flags = postedit_diff(hyp, &edited);
        PostEdit {
            hypothesis_id: hypothesis_id.into(),
            edited_text: edited,
            edit_flags,
        }
    }
}

/// Either kind of feedback, for code that only needs flags.
pub trait Flagged {
    fn flags(&self) -> &[bool];
}

impl Flagged for Marking {
    fn flags(&self) -> &[bool] {
        &self.flags
    }
}

impl Flagged for PostEdit {
    fn flags(&self) -> &[bool] {
        &self.edit_flags
    }
}

impl Flagged for [bool] {
    fn flags(&self) -> &[bool] {
        self
    }
}

impl Flagged for Vec<bool> {
    fn flags(&self) -> &[bool] {
        self
    }
}

/// Flags hypothesis tokens outside the leftmost longest common subsequence
/// with the reference.
pub fn lcs_flags<T: PartialEq>(hyp: &[T], reference: &[T]) -> Vec<bool> {
    let (n, m) = (hyp.len(), reference.len());
    // suffix table: lcs[i][j] = LCS(hyp[i..], reference[j..])
    let mut lcs = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if hyp[i] == reference[j] {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }
    let mut flags = vec![true; n];
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if hyp[i] == reference[j] && lcs[i][j] == lcs[i + 1][j + 1] + 1 {
            flags[i] = false;
            i += 1;
            j += 1;
        } else if lcs[i][j + 1] == lcs[i][j] {
            j += 1;
        } else {
            i += 1;
        }
    }
    flags
}

pub fn simulate_markings<S: AsRef<str>>(
    hypothesis_id: &str,
    hyp: &[S],
    reference: &[S],
) -> Marking {
    let h: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    Marking {
        hypothesis_id: hypothesis_id.to_string(),
        flags: lcs_flags(&h, &r),
        origin: Origin::Simulated,
    }
}

/// Independent Bernoulli(`p_mark`) flags.
pub fn random_markings(
    hypothesis_id: &str,
    n_tokens: usize,
    p_mark: f64,
    seed: u64,
) -> Result<Marking> {
    if !(0.0..=1.0).contains(&p_mark) {
        return Err(Error::invalid(format!(
            "p_mark must lie in [0, 1], got {p_mark}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Marking {
        hypothesis_id: hypothesis_id.to_string(),
        flags: (0..n_tokens).map(|_| rng.random_bool(p_mark)).collect(),
        origin: Origin::Random,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match,
    Substitute,
    /// Hypothesis token dropped by the post-edit.
    Delete,
    /// Token added by the post-edit.
    Insert,
}

/// Unit-cost Levenshtein alignment of `hyp` to `edited`. Backtracking from
/// the end prefers match, then substitution, then deletion, then insertion.
pub fn align<T: PartialEq>(hyp: &[T], edited: &[T]) -> Vec<EditOp> {
    let (n, m) = (hyp.len(), edited.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(hyp[i - 1] != edited[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && hyp[i - 1] == edited[j - 1] && d[i][j] == d[i - 1][j - 1] {
            ops.push(EditOp::Match);
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1 {
            ops.push(EditOp::Substitute);
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(EditOp::Delete);
            i -= 1;
        } else {
            ops.push(EditOp::Insert);
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

/// Flags substituted or deleted hypothesis tokens. Insertions flag nothing.
pub fn postedit_diff<S: AsRef<str>>(hyp: &[S], edited: &[S]) -> Vec<bool> {
    let h: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let e: Vec<&str> = edited.iter().map(AsRef::as_ref).collect();
    align(&h, &e)
        .into_iter()
        .filter(|op| *op != EditOp::Insert)
        .map(|op| op != EditOp::Match)
        .collect()
}

/// Fraction of flagged hypothesis tokens.
pub fn correction_rate<F: Flagged + ?Sized>(feedback: &F) -> Result<f64> {
    let flags = feedback.flags();
    if flags.is_empty() {
        return Err(Error::invalid("correction rate of an empty hypothesis"));
    }
    Ok(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

/// Plain token Levenshtein distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y))
                .min(prev[j + 1] + 1)
                .min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
