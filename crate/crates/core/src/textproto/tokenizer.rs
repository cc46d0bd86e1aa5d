use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub const UNK: usize = 0;
pub const NL: usize = 1;
pub const EOG: usize = 2;

const SPECIALS: [&str; 3] = ["<unk>", "<nl>", "EOG"];

/// Word-level tokenizer. Words are separated by spaces or tabs and every
/// newline is its own token. Ids 0..3 are `<unk>`, `<nl>` and `EOG`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Tokenizer {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("tokenizer word list must start with <unk>, <nl>, EOG and contain no duplicates or blanks")]
pub struct BadVocabulary;

impl TryFrom<Vec<String>> for Tokenizer {
    type Error = BadVocabulary;

    fn try_from(words: Vec<String>) -> Result<Self, BadVocabulary> {
        if words.len() < 3 || words[..3].iter().zip(SPECIALS).any(|(w, s)| w != s) {
            return Err(BadVocabulary);
        }
        let mut index = BTreeMap::new();
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.contains(char::is_whitespace) || index.insert(w.clone(), i).is_some() {
                return Err(BadVocabulary);
            }
        }
        Ok(Self { words, index })
    }
}

impl From<Tokenizer> for Vec<String> {
    fn from(t: Tokenizer) -> Self {
        t.words
    }
}

/// Splits text into words, with `None` standing for a newline.
fn pieces(text: &str) -> impl Iterator<Item = Option<&str>> {
    text.split('\n').enumerate().flat_map(|(i, line)| {
        let nl = if i > 0 { Some(None) } else { None };
        nl.into_iter()
            .chain(line.split([' ', '\t', '\r']).filter(|w| !w.is_empty()).map(Some))
    })
}

impl Tokenizer {
    /// Specials followed by `words` in order; repeats are skipped.
    pub fn new<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut list: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut seen: BTreeSet<String> = list.iter().cloned().collect();
        for w in words {
            if !w.is_empty() && !w.contains(char::is_whitespace) && seen.insert(w.to_string()) {
                list.push(w.to_string());
            }
        }
        Self::try_from(list).expect("constructed list is valid")
    }

    /// Vocabulary of every word in `texts`, sorted for determinism.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = BTreeSet::new();
        for t in texts {
            words.extend(pieces(t).flatten());
        }
        Self::new(words)
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        pieces(text)
            .map(|p| match p {
                None => NL,
                Some(w) => self.id(w).unwrap_or(UNK),
            })
            .collect()
    }

    /// Words are joined by single spaces; newlines take no surrounding space.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        let mut prev_nl = true;
        for &id in ids {
            if id == NL {
                out.push('\n');
                prev_nl = true;
                continue;
            }
            if !prev_nl {
                out.push(' ');
            }
            out.push_str(self.word(id).unwrap_or(SPECIALS[UNK]));
            prev_nl = false;
        }
        out
    }

    /// Fraction of words in `text` that are in the vocabulary. Empty text
    /// has coverage 1.
    pub fn coverage(&self, text: &str) -> f64 {
        let (mut total, mut known) = (0usize, 0usize);
        for w in pieces(text).flatten() {
            total += 1;
            if self.index.contains_key(w) {
                known += 1;
            }
        }
        if total == 0 {
            1.0
        } else {
            known as f64 / total as f64
        }
    }

    /// Number of tokens `text` encodes to.
    pub fn count(&self, text: &str) -> usize {
        pieces(text).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn specials_and_round_trip() {
        let tok = Tokenizer::from_texts(["a b c", "Classification: 1:death"]);
        assert_eq!(tok.word(UNK), Some("<unk>"));
        assert_eq!(tok.word(NL), Some("<nl>"));
        assert_eq!(tok.id("EOG"), Some(EOG));
        let text = "a b\n\nClassification: 1:death\n\nEOG";
        let ids = tok.encode(text);
        assert_eq!(ids.len(), 9);
        assert_eq!(ids[2], NL);
        assert_eq!(*ids.last().unwrap(), EOG);
        assert_eq!(tok.decode(&ids), text);
    }

    #[test]
    fn unknown_words_and_whitespace() {
        let tok = Tokenizer::new(["x"]);
        assert_eq!(tok.encode("  x\ty  "), vec![3, UNK]);
        assert_eq!(tok.encode(""), Vec::<usize>::new());
        assert_eq!(tok.encode("\n"), vec![NL]);
        assert_eq!(tok.coverage("x y"), 0.5);
        assert_eq!(tok.coverage(""), 1.0);
        assert_eq!(tok.count("x y\nz"), 4);
    }

    #[test]
    fn serde_word_list_validation() {
        let tok = Tokenizer::new(["b", "a", "b"]);
        assert_eq!(tok.vocab_size(), 5);
        let words: Vec<String> = tok.clone().into();
        assert_eq!(Tokenizer::try_from(words).unwrap(), tok);
        let bad: Vec<String> = vec!["a".into()];
        assert!(Tokenizer::try_from(bad).is_err());
        let dup: Vec<String> = ["<unk>", "<nl>", "EOG", "a", "a"].iter().map(|s| s.to_string()).collect();
        assert!(Tokenizer::try_from(dup).is_err());
    }
}
