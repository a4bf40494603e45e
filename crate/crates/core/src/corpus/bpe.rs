//! Byte-pair-encoding style subword merges over characters.
//!
//! Every word is split into characters and its final character carries the
//! end-of-word sentinel, so `"aaa"` starts out as `[a, a, a</w>]`. Learned
//! merges are applied in the order they were learned.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// End-of-word marker appended to the last symbol of each word.
pub const EOW: &str = "</w>";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl MergeTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a table from an ordered list of pairs, rejecting duplicates.
    pub fn from_pairs(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut table = MergeTable::new();
        for (l, r) in pairs {
            table.push(l, r)?;
        }
        Ok(table)
    }

    fn push(&mut self, left: String, right: String) -> Result<()> {
        let key = (left, right);
        if self.ranks.contains_key(&key) {
            return Err(Error::invalid(format!(
                "duplicate merge {} {}",
                key.0, key.1
            )));
        }
        self.ranks.insert(key.clone(), self.merges.len());
        self.merges.push(key);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("#merges:{}\n", self.merges.len());
        for (l, r) in &self.merges {
            let _ = writeln!(s, "{l} {r}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing #merges header".into(),
        })?;
        let n: usize = header
            .strip_prefix("#merges:")
            .and_then(|v| v.trim().parse().ok())
            .ok_or(Error::Parse {
                line: 1,
                msg: format!("bad header {header:?}"),
            })?;
        let mut pairs = Vec::with_capacity(n);
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    pairs.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("expected 'left right', got {line:?}"),
                    })
                }
            }
        }
        if pairs.len() != n {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header says {n} merges, found {}", pairs.len()),
            });
        }
        Self::from_pairs(pairs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut text = String::new();
        for line in std::io::BufReader::new(f).lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Self::parse(&text)
    }
}

fn initial_symbols(word: &str) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(|c| c.to_string()).collect();
    if let Some(last) = syms.last_mut() {
        last.push_str(EOW);
    }
    syms
}

fn merge_pair(syms: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == left && syms[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(syms[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns up to `n_merges` merges by repeatedly joining the most frequent
/// adjacent symbol pair. Frequency ties go to the lexicographically smallest
/// pair. Stops early once no pair is left.
pub fn learn_bpe<S: AsRef<str>>(corpus: &[Vec<S>], n_merges: usize) -> MergeTable {
    let mut word_freq: BTreeMap<&str, usize> = BTreeMap::new();
    for sent in corpus {
        for tok in sent {
            let tok = tok.as_ref();
            if !tok.is_empty() {
                *word_freq.entry(tok).or_default() += 1;
            }
        }
    }
    let mut words: Vec<(Vec<String>, usize)> = word_freq
        .into_iter()
        .map(|(w, f)| (initial_symbols(w), f))
        .collect();

    let mut table = MergeTable::new();
    while table.len() < n_merges {
        let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, f) in &words {
            for pair in syms.windows(2) {
                *counts.entry((&pair[0], &pair[1])).or_default() += f;
            }
        }
        let best = counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
        let Some(((l, r), _)) = best else { break };
        let (l, r) = (l.to_string(), r.to_string());
        for (syms, _) in words.iter_mut() {
            if syms.windows(2).any(|p| p[0] == l && p[1] == r) {
                *syms = merge_pair(syms, &l, &r);
            }
        }
        // learned pairs are unique: a merged pair never reappears as two symbols
        table.push(l, r).expect("learned merge is unique");
    }
    table
}

/// Segments a single word.
pub fn apply_bpe_word(table: &MergeTable, word: &str) -> Vec<String> {
    let mut syms = initial_symbols(word);
    loop {
        let best = syms
            .windows(2)
            .filter_map(|p| table.ranks.get(&(p[0].clone(), p[1].clone())).copied())
            .min();
        let Some(rank) = best else { break };
        let (l, r) = &table.merges[rank];
        syms = merge_pair(&syms, l, r);
    }
    syms
}

/// Segments every token; the output is a flat subword sequence.
pub fn apply_bpe<S: AsRef<str>>(table: &MergeTable, tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .flat_map(|t| apply_bpe_word(table, t.as_ref()))
        .collect()
}

/// Inverse of [`apply_bpe`]: concatenates subwords up to each sentinel.
/// A trailing fragment without a sentinel is kept as a word.
pub fn un_bpe<S: AsRef<str>>(subwords: &[S]) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for sw in subwords {
        let sw = sw.as_ref();
        if let Some(stem) = sw.strip_suffix(EOW) {
            cur.push_str(stem);
            out.push(std::mem::take(&mut cur));
        } else {
            cur.push_str(sw);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(words: &[(&str, usize)]) -> Vec<Vec<String>> {
        words
            .iter()
            .flat_map(|(w, n)| std::iter::repeat_n(vec![w.to_string()], *n))
            .collect()
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        // "aaab" x10: (a,a) occurs 20 times, (a,b</w>) 10 times
        let t = learn_bpe(&corpus(&[("aaab", 10)]), 1);
        assert_eq!(t.merges(), &[("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn ties_break_lexicographically() {
        // (x,y</w>) and (a,b</w>) both occur 3 times
        let t = learn_bpe(&corpus(&[("xy", 3), ("ab", 3)]), 1);
        assert_eq!(t.merges()[0], ("a".into(), "b</w>".into()));
    }

    #[test]
    fn zero_merges_is_identity_on_characters() {
        let t = learn_bpe(&corpus(&[("abc", 4)]), 0);
        assert!(t.is_empty());
        assert_eq!(apply_bpe_word(&t, "abc"), ["a", "b", "c</w>"]);
    }

    #[test]
    fn empty_corpus_gives_empty_table() {
        let t = learn_bpe::<String>(&[], 50);
        assert!(t.is_empty());
    }

    #[test]
    fn manual_merge_trace() {
        let t = MergeTable::from_pairs(vec![("a".into(), "a".into())]).unwrap();
        assert_eq!(apply_bpe_word(&t, "aaa"), ["aa", "a</w>"]);
    }

    #[test]
    fn large_merge_count_is_accepted() {
        let t = learn_bpe(&corpus(&[("hello", 2), ("world", 1)]), 30_000);
        // stops early once every word is a single symbol
        assert_eq!(apply_bpe_word(&t, "hello"), ["hello</w>"]);
        assert_eq!(apply_bpe_word(&t, "world"), ["world</w>"]);
    }

    #[test]
    fn duplicate_pairs_rejected() {
        let r = MergeTable::from_pairs(vec![("a".into(), "b".into()), ("a".into(), "b".into())]);
        assert!(r.is_err());
    }

    #[test]
    fn file_format_round_trip() {
        let t = learn_bpe(&corpus(&[("lower", 5), ("lowest", 3), ("newer", 2)]), 8);
        let text = t.to_text();
        assert!(text.starts_with("#merges:8\n"));
        assert_eq!(MergeTable::parse(&text).unwrap(), t);
        assert!(MergeTable::parse("#merges:2\na b\n").is_err());
        assert!(MergeTable::parse("a b\n").is_err());
    }

    #[test]
    fn unseen_characters_pass_through() {
        let t = learn_bpe(&corpus(&[("abab", 5)]), 3);
        let segs = apply_bpe_word(&t, "abzq");
        assert_eq!(un_bpe(&segs), ["abzq"]);
        assert!(segs.iter().any(|s| s.contains('z')));
    }

    #[test]
    fn round_trip_on_random_words() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let alphabet: Vec<char> = "abcdeäöü".chars().collect();
        let mut word = || -> String {
            let n = rng.random_range(1..10);
            (0..n)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                .collect()
        };
        let train: Vec<Vec<String>> = (0..200).map(|_| vec![word(), word()]).collect();
        let table = learn_bpe(&train, 60);
        let words: Vec<String> = (0..1000).map(|_| word()).collect();
        let segs = apply_bpe(&table, &words);
        assert_eq!(un_bpe(&segs), words);
    }

    proptest! {
        #[test]
        fn concatenation_without_sentinels_restores_token(
            train in prop::collection::vec("[a-f]{1,8}", 1..30),
            word in "[a-h]{1,12}",
            n in 0usize..40,
        ) {
            let table = learn_bpe(&[train], n);
            let segs = apply_bpe_word(&table, &word);
            let joined: String = segs.concat().replace(EOW, "");
            prop_assert_eq!(joined, word);
            prop_assert!(segs.last().unwrap().ends_with(EOW));
        }
    }
}
