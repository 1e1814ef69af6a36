use std::collections::BTreeSet;
use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const DROP: usize = 3;
pub const UNK: usize = 4;
pub const NUM_RESERVED: usize = 5;

const RESERVED_NAMES: [&str; NUM_RESERVED] = ["<pad>", "<bos>", "<eos>", "<drop>", "<unk>"];

/// Character vocabulary. Ids `0..5` are the reserved tokens; characters follow
/// in codepoint order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocab {
    pub fn build(corpus: &str) -> Result<Self> {
        let set: BTreeSet<char> = corpus.chars().filter(|&c| c != '\u{FFFD}').collect();
        if set.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        Ok(Self::from_chars(set.into_iter().collect()))
    }

    /// From an explicit character list; duplicates are dropped, order is by codepoint.
    pub fn from_chars(chars: Vec<char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        let chars: Vec<char> = set.into_iter().collect();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + NUM_RESERVED)).collect();
        Self { chars, index }
    }

    pub fn len(&self) -> usize {
        self.chars.len() + NUM_RESERVED
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// Renders ids as text: stops at EOS, skips PAD/BOS/DROP, prints UNK as U+FFFD.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            match id {
                EOS => break,
                PAD | BOS | DROP => {}
                UNK => out.push('\u{FFFD}'),
                _ => out.push(self.chars.get(id - NUM_RESERVED).copied().unwrap_or('\u{FFFD}')),
            }
        }
        out
    }

    pub fn token_name(&self, id: usize) -> String {
        if id < NUM_RESERVED {
            RESERVED_NAMES[id].to_string()
        } else {
            self.chars.get(id - NUM_RESERVED).map_or_else(|| "?".into(), |c| c.to_string())
        }
    }

    /// Characters as one string, for persisting the vocabulary.
    pub fn to_string_repr(&self) -> String {
        self.chars.iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_char_corpus() {
        let v = Vocab::build("ab").unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v.id('a'), 5);
        assert_eq!(v.id('b'), 6);
        let ids = v.encode("ba");
        assert_eq!(ids, vec![6, 5]);
        assert_eq!(v.decode(&ids), "ba");
    }

    #[test]
    fn unseen_char_is_unk() {
        let v = Vocab::build("ab").unwrap();
        assert_eq!(v.encode("az"), vec![5, UNK]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(Vocab::build("").is_err());
    }

    #[test]
    fn ordering_is_by_codepoint() {
        let v = Vocab::build("zay a").unwrap();
        assert_eq!(v.chars(), &[' ', 'a', 'y', 'z']);
    }

    #[test]
    fn decode_stops_at_eos() {
        let v = Vocab::build("ab").unwrap();
        assert_eq!(v.decode(&[BOS, 5, DROP, 6, EOS, 5]), "ab");
    }
}
