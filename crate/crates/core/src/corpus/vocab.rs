use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered token list; the four specials
    /// are prepended and must not appear in `tokens`.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id: HashMap<String, usize> = id_to_token
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, t)| (t, i))
            .collect();
        for tok in tokens {
            let tok = tok.into();
            if token_to_id.contains_key(&tok) {
                return Err(Error::invalid(format!(
                    "duplicate vocabulary entry {tok:?}"
                )));
            }
            token_to_id.insert(tok.clone(), id_to_token.len());
            id_to_token.push(tok);
        }
        Ok(Vocabulary {
            id_to_token,
            token_to_id,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.id_to_token
            .get(id)
            .map(String::as_str)
            .unwrap_or(SPECIALS[UNK])
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Unknown tokens map to UNK.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Decodes model output, dropping specials and stopping at EOS.
    pub fn decode_output(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != BOS && i != PAD)
            .map(|&i| self.token(i).to_string())
            .collect()
    }

    /// FNV-1a over the token list, used to tie checkpoints to vocabularies.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        for tok in &self.id_to_token {
            for b in tok.bytes().chain(std::iter::once(0xff)) {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        format!("{h:016x}")
    }

    /// One token per line, specials included.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.id_to_token.join("\n");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        for (i, special) in SPECIALS.iter().enumerate() {
            if lines.next() != Some(special) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected special token {special}"),
                });
            }
        }
        Self::from_tokens(lines.filter(|l| !l.is_empty()))
    }
}

/// Keeps the `max_size - 4` most frequent tokens, frequency ties broken
/// lexicographically, after the four specials.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], max_size: usize) -> Result<Vocabulary> {
    if max_size <= SPECIALS.len() {
        return Err(Error::invalid(format!(
            "max_size must exceed 4, got {max_size}"
        )));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for sent in corpus {
        for tok in sent {
            let tok = tok.as_ref();
            if !SPECIALS.contains(&tok) {
                *freq.entry(tok).or_default() += 1;
            }
        }
    }
    let mut entries: Vec<(&str, usize)> = freq.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    entries.truncate(max_size - SPECIALS.len());
    Vocabulary::from_tokens(entries.into_iter().map(|(t, _)| t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(words: &[&str]) -> Vec<Vec<String>> {
        vec![words.iter().map(|w| w.to_string()).collect()]
    }

    #[test]
    fn frequency_order_with_specials_first() {
        let v = build_vocab(&c(&["a", "b", "a", "a"]), 6).unwrap();
        assert_eq!(v.tokens(), ["<pad>", "<unk>", "<s>", "</s>", "a", "b"]);
    }

    #[test]
    fn max_size_truncates() {
        let v = build_vocab(&c(&["a", "b", "a", "a"]), 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.get("b"), None);
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn equal_frequency_is_lexicographic() {
        let words = ["pear", "apple", "fig", "kiwi", "date"];
        let v = build_vocab(&c(&words), 100).unwrap();
        let mut sorted = words.to_vec();
        sorted.sort();
        assert_eq!(&v.tokens()[4..], sorted.as_slice());
    }

    #[test]
    fn rejects_tiny_max_size() {
        assert!(build_vocab(&c(&["a"]), 4).is_err());
    }

    #[test]
    fn specials_occupy_lowest_indices() {
        let v = build_vocab(&c(&["x"]), 10).unwrap();
        for (i, s) in SPECIALS.iter().enumerate() {
            assert_eq!(v.id(s), i);
            assert_eq!(v.token(i), *s);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = build_vocab(&c(&["b", "a", "b"]), 10).unwrap();
        v.save(&p).unwrap();
        let back = Vocabulary::load(&p).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.fingerprint(), v.fingerprint());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(words in prop::collection::vec("[a-e]{1,3}", 1..40)) {
            let corpus = vec![words.clone()];
            let v = build_vocab(&corpus, 1000).unwrap();
            prop_assert_eq!(v.decode(&v.encode(&words)), words);
            // construction is deterministic
            prop_assert_eq!(build_vocab(&corpus, 1000).unwrap(), v.clone());
            for (i, t) in v.tokens().iter().enumerate() {
                prop_assert_eq!(v.id(t), i);
            }
        }
    }
}
