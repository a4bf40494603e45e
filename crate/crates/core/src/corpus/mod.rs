//! Text ingestion: tokenization, subword merges, vocabularies and corpus files.

mod bpe;
mod tokenize;
mod vocab;

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bpe::{apply_bpe, apply_bpe_word, learn_bpe, un_bpe, MergeTable, EOW};
pub use tokenize::{detokenize, is_punct, tokenize};
pub use vocab::{build_vocab, Vocabulary, BOS, EOS, PAD, SPECIALS, UNK};

/// Merge count used when none is configured.
pub const DEFAULT_MERGES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Beginning,
    Middle,
    End,
}

impl Position {
    pub const ALL: [Position; 3] = [Position::Beginning, Position::Middle, Position::End];

    pub fn as_str(self) -> &'static str {
        match self {
            Position::Beginning => "beginning",
            Position::Middle => "middle",
            Position::End => "end",
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Position {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beginning" => Ok(Position::Beginning),
            "middle" => Ok(Position::Middle),
            "end" => Ok(Position::End),
            other => Err(Error::invalid(format!("unknown position {other:?}"))),
        }
    }
}

/// One line of a corpus file. `hyp` carries a machine translation when the
/// file is used as annotation material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub src: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trg: Option<String>,
    #[serde(default)]
    pub talk_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Position>,
    #[serde(default)]
    pub topic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyp: Option<String>,
}

/// An encoded sentence pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelSentence {
    pub id: String,
    pub source: Vec<usize>,
    pub reference: Option<Vec<usize>>,
    pub talk_id: String,
    pub position: Option<Position>,
    pub topic: String,
}

impl ParallelSentence {
    pub fn validate(&self, src_vocab: usize, trg_vocab: usize) -> Result<()> {
        if self.source.is_empty() {
            return Err(Error::invalid(format!("{}: empty source", self.id)));
        }
        if let Some(id) = self.source.iter().find(|&&i| i >= src_vocab) {
            return Err(Error::invalid(format!(
                "{}: source id {id} out of range",
                self.id
            )));
        }
        if let Some(r) = &self.reference {
            if r.is_empty() {
                return Err(Error::invalid(format!("{}: empty reference", self.id)));
            }
            if let Some(id) = r.iter().find(|&&i| i >= trg_vocab) {
                return Err(Error::invalid(format!(
                    "{}: reference id {id} out of range",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path)?;
    parse_jsonl(BufReader::new(f))
}

pub fn parse_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    read_jsonl(path)
}

/// Text <-> id conversion for one side of a language pair: tokenize, split
/// into subwords (when a merge table is present) and look up ids.
#[derive(Debug, Clone)]
pub struct TextCodec {
    pub vocab: Vocabulary,
    pub merges: Option<MergeTable>,
}

impl TextCodec {
    pub fn new(vocab: Vocabulary, merges: Option<MergeTable>) -> Self {
        TextCodec { vocab, merges }
    }

    pub fn units(&self, text: &str) -> Vec<String> {
        let toks = tokenize(text);
        match &self.merges {
            Some(m) => apply_bpe(m, &toks),
            None => toks,
        }
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        self.vocab.encode(&self.units(text))
    }

    /// Decodes model output ids to word tokens (subwords rejoined).
    pub fn decode_tokens(&self, ids: &[usize]) -> Vec<String> {
        let units = self.vocab.decode_output(ids);
        match &self.merges {
            Some(_) => un_bpe(&units),
            None => units,
        }
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        detokenize(&self.decode_tokens(ids))
    }
}

/// Encodes records; the reference side is taken from `trg` when present.
/// Target sequences end with EOS.
pub fn encode_records(
    records: &[CorpusRecord],
    src: &TextCodec,
    trg: &TextCodec,
) -> Result<Vec<ParallelSentence>> {
    records
        .iter()
        .map(|r| {
            let source = src.encode(&r.src);
            let reference = r.trg.as_ref().map(|t| {
                let mut ids = trg.encode(t);
                ids.push(EOS);
                ids
            });
            let s = ParallelSentence {
                id: r.id.clone(),
                source,
                reference,
                talk_id: r.talk_id.clone(),
                position: r.position,
                topic: r.topic.clone(),
            };
            s.validate(src.vocab.len(), trg.vocab.len())?;
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_record_json_shape() {
        let line = r#"{"id":"t1-3","src":"I am an artist.","trg":"Ich bin ein Künstler.","talk_id":"t1","position":"beginning","topic":"art"}"#;
        let recs: Vec<CorpusRecord> = parse_jsonl(line.as_bytes()).unwrap();
        assert_eq!(recs[0].position, Some(Position::Beginning));
        assert_eq!(recs[0].trg.as_deref(), Some("Ich bin ein Künstler."));
        let bad = r#"{"id":"x","src":"a","colour":"red"}"#;
        assert!(parse_jsonl::<CorpusRecord, _>(bad.as_bytes()).is_err());
    }

    #[test]
    fn codec_round_trip_with_merges() {
        let corpus = vec![tokenize("die Katze sitzt auf der Matte .")];
        let merges = learn_bpe(&corpus, 20);
        let units: Vec<Vec<String>> = corpus.iter().map(|s| apply_bpe(&merges, s)).collect();
        let vocab = build_vocab(&units, 200).unwrap();
        let codec = TextCodec::new(vocab, Some(merges));
        let ids = codec.encode("die Katze sitzt.");
        assert_eq!(codec.decode(&ids), "die Katze sitzt.");
    }

    #[test]
    fn validation_catches_empty_and_out_of_range() {
        let mut s = ParallelSentence {
            id: "a".into(),
            source: vec![4, 5],
            reference: Some(vec![4, EOS]),
            talk_id: String::new(),
            position: None,
            topic: String::new(),
        };
        assert!(s.validate(6, 6).is_ok());
        assert!(s.validate(5, 6).is_err());
        s.reference = Some(vec![]);
        assert!(s.validate(6, 6).is_err());
        s.source.clear();
        assert!(s.validate(6, 6).is_err());
    }
}
