use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;

const SPECIALS: [&str; 3] = ["<bos>", "<eos>", "<unk>"];

/// Token/index bijection with a minimum-count cutoff. Indices 0..3 are
/// reserved for BOS, EOS and UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
    threshold: u64,
}

impl Vocabulary {
    /// Words seen fewer than `threshold` times map to UNK. Kept words are
    /// ordered by descending count, ties alphabetically.
    pub fn build<I, S, T>(sequences: I, threshold: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        if threshold < 1 {
            return Err(Error::config("vocabulary threshold must be at least 1"));
        }
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for seq in sequences {
            for tok in seq {
                let tok = tok.as_ref();
                if SPECIALS.contains(&tok) {
                    continue;
                }
                *counts.entry(tok.to_owned()).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::data("cannot build a vocabulary from an empty corpus"));
        }
        let mut kept: Vec<(String, u64)> = counts.into_iter().filter(|(_, c)| *c >= threshold).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let entries = SPECIALS
            .iter()
            .map(|s| (s.to_string(), 0))
            .chain(kept);
        Ok(Self::from_entries(entries, threshold))
    }

    fn from_entries(entries: impl IntoIterator<Item = (String, u64)>, threshold: u64) -> Self {
        let (tokens, counts): (Vec<String>, Vec<u64>) = entries.into_iter().unzip();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            tokens,
            index,
            counts,
            threshold,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    pub fn encode(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn encode_all<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.encode(w.as_ref())).collect()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn decode(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts.get(index).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Decode a sequence of indices, skipping the special tokens.
    pub fn decode_words(&self, indices: &[usize]) -> Vec<String> {
        indices
            .iter()
            .filter(|&&i| i != BOS && i != EOS)
            .filter_map(|&i| self.decode(i).map(str::to_owned))
            .collect()
    }

    /// SHA-256 over the index-ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# threshold {}\n", self.threshold);
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            let _ = writeln!(out, "{t}\t{c}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let threshold = lines
            .next()
            .and_then(|l| l.strip_prefix("# threshold "))
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| Error::data("vocabulary file lacks '# threshold N' header"))?;
        let mut entries = Vec::new();
        for line in lines {
            let (tok, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::data(format!("malformed vocabulary line {line:?}")))?;
            let count = count
                .parse()
                .map_err(|_| Error::data(format!("bad count in vocabulary line {line:?}")))?;
            entries.push((tok.to_owned(), count));
        }
        if entries.len() < SPECIALS.len() || entries.iter().zip(SPECIALS).any(|(e, s)| e.0 != s) {
            return Err(Error::data("vocabulary file does not start with the special tokens"));
        }
        let vocab = Self::from_entries(entries, threshold);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::data("vocabulary file contains duplicate tokens"));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn threshold_maps_rare_words_to_unk() {
        let corpus = vec![vec!["a"; 5], vec!["b"; 2]];
        let v = Vocabulary::build(&corpus, 3).unwrap();
        assert!(v.contains("a"));
        assert_eq!(v.encode("b"), UNK);
        assert_eq!(v.len(), 4);

        let v = Vocabulary::build(&corpus, 1).unwrap();
        assert!(v.contains("a") && v.contains("b"));
        assert_eq!(v.decode(BOS), Some("<bos>"));
        assert_eq!(v.decode(EOS), Some("<eos>"));
        assert_eq!(v.decode(UNK), Some("<unk>"));
    }

    #[test]
    fn rejects_empty_and_zero_threshold() {
        let empty: Vec<Vec<&str>> = vec![];
        assert!(matches!(Vocabulary::build(&empty, 1), Err(Error::Data(_))));
        assert!(matches!(Vocabulary::build(&[vec!["x"]], 0), Err(Error::Config(_))));
    }

    #[test]
    fn text_roundtrip_and_hash() {
        let v = Vocabulary::build(&[vec!["dog", "cat", "dog"]], 1).unwrap();
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        let other = Vocabulary::build(&[vec!["dog", "cow"]], 1).unwrap();
        assert_ne!(other.hash(), v.hash());
    }

    proptest! {
        #[test]
        fn encode_decode_are_inverse(words in proptest::collection::vec("[a-e]{1,3}", 1..40), threshold in 1u64..4) {
            let v = Vocabulary::build(&[words.clone()], threshold).unwrap();
            for i in 0..v.len() {
                prop_assert_eq!(v.encode(v.decode(i).unwrap()), i);
            }
            for w in &words {
                if v.contains(w) {
                    prop_assert_eq!(v.decode(v.encode(w)), Some(w.as_str()));
                    prop_assert!(v.count(v.encode(w)) >= threshold);
                }
            }
        }
    }
}
