//! Deterministic synthetic corpora with known structure.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grammar {
    /// A fixed motif repeated forever.
    RepeatPattern,
    /// Lines, each drawn from one of two character distributions.
    TwoTopic,
    /// Random properly nested bracket sequences separated by spaces.
    BalancedParens,
}

impl FromStr for Grammar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "repeat_pattern" => Ok(Self::RepeatPattern),
            "two_topic" => Ok(Self::TwoTopic),
            "balanced_parens" => Ok(Self::BalancedParens),
            other => Err(Error::Data(format!("unknown grammar {other:?}"))),
        }
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::RepeatPattern => "repeat_pattern",
            Self::TwoTopic => "two_topic",
            Self::BalancedParens => "balanced_parens",
        })
    }
}

impl Grammar {
    /// Whether the corpus is one sample per line (as opposed to running text).
    pub fn is_line_based(self) -> bool {
        matches!(self, Self::TwoTopic)
    }
}

/// Motif for `repeat_pattern`: the alphabet cycled to `period` characters.
pub fn repeat_motif(alphabet: &str, period: usize) -> String {
    alphabet.chars().cycle().take(period).collect()
}

/// `length` characters of the motif, starting at phase 0.
pub fn repeat_pattern(alphabet: &str, period: usize, length: usize) -> String {
    repeat_motif(alphabet, period).chars().cycle().take(length).collect()
}

pub const TOPIC_ALPHABETS: [&str; 2] = ["abcdef", "uvwxyz"];
/// Probability that a character comes from the line's own topic alphabet;
/// otherwise it is uniform over both alphabets.
pub const TOPIC_PURITY: f64 = 0.8;

/// Per-character probabilities of topic `t` over the union alphabet
/// (topic 0 letters first).
pub fn topic_distribution(t: usize) -> Vec<f64> {
    let k = TOPIC_ALPHABETS[0].len();
    let mut p = vec![(1.0 - TOPIC_PURITY) / (2 * k) as f64; 2 * k];
    for q in &mut p[t * k..(t + 1) * k] {
        *q += TOPIC_PURITY / k as f64;
    }
    p
}

/// `count` lines of `line_len` characters with their topic labels.
pub fn two_topic_lines(count: usize, line_len: usize, seed: u64) -> Vec<(String, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let union: Vec<char> = TOPIC_ALPHABETS.concat().chars().collect();
    let own: Vec<Vec<char>> = TOPIC_ALPHABETS.iter().map(|a| a.chars().collect()).collect();
    (0..count)
        .map(|_| {
            let topic = rng.random_range(0..2usize);
            let line = (0..line_len)
                .map(|_| {
                    if rng.random_bool(TOPIC_PURITY) {
                        own[topic][rng.random_range(0..own[topic].len())]
                    } else {
                        union[rng.random_range(0..union.len())]
                    }
                })
                .collect();
            (line, topic)
        })
        .collect()
}

pub const TWO_TOPIC_LINE_LEN: usize = 32;

fn balanced_parens(length: usize, rng: &mut ChaCha8Rng) -> String {
    const MAX_DEPTH: usize = 6;
    let mut out = String::with_capacity(length + MAX_DEPTH + 1);
    while out.len() < length {
        // one nested group
        let mut depth = 0usize;
        loop {
            let open = depth == 0 || (depth < MAX_DEPTH && rng.random_bool(0.5));
            if open {
                out.push('(');
                depth += 1;
            } else {
                out.push(')');
                depth -= 1;
                if depth == 0 {
                    break;
                }
            }
        }
        out.push(' ');
    }
    out.truncate(length);
    out
}

/// Generates a corpus of roughly `length` characters. Line-based grammars
/// produce whole lines joined by `\n`.
pub fn synth_corpus(grammar: Grammar, length: usize, seed: u64) -> String {
    match grammar {
        Grammar::RepeatPattern => repeat_pattern(DEFAULT_REPEAT_ALPHABET, DEFAULT_REPEAT_PERIOD, length),
        Grammar::TwoTopic => {
            let count = length.div_ceil(TWO_TOPIC_LINE_LEN + 1).max(1);
            let lines: Vec<String> = two_topic_lines(count, TWO_TOPIC_LINE_LEN, seed)
                .into_iter()
                .map(|(l, _)| l)
                .collect();
            lines.join("\n")
        }
        Grammar::BalancedParens => balanced_parens(length, &mut ChaCha8Rng::seed_from_u64(seed)),
    }
}

pub const DEFAULT_REPEAT_ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz";
pub const DEFAULT_REPEAT_PERIOD: usize = 4;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeat_pattern_by_construction() {
        assert_eq!(repeat_pattern("abcd", 4, 12), "abcdabcdabcd");
        assert_eq!(synth_corpus(Grammar::RepeatPattern, 12, 7), "abcdabcdabcd");
    }

    #[test]
    fn same_seed_same_corpus() {
        for g in [Grammar::RepeatPattern, Grammar::TwoTopic, Grammar::BalancedParens] {
            assert_eq!(synth_corpus(g, 500, 3), synth_corpus(g, 500, 3));
        }
        assert_ne!(synth_corpus(Grammar::TwoTopic, 500, 3), synth_corpus(Grammar::TwoTopic, 500, 4));
    }

    #[test]
    fn unknown_grammar_rejected() {
        assert!("zigzag".parse::<Grammar>().is_err());
        assert_eq!("two_topic".parse::<Grammar>().unwrap(), Grammar::TwoTopic);
    }

    #[test]
    fn parens_are_balanced_per_group() {
        let text = synth_corpus(Grammar::BalancedParens, 2000, 1);
        assert_eq!(text.chars().count(), 2000);
        // every complete group (all but possibly the truncated last) balances
        for group in text.split(' ').filter(|g| !g.is_empty()).take(20) {
            let mut depth = 0i32;
            for c in group.chars() {
                depth += if c == '(' { 1 } else { -1 };
                assert!(depth >= 0);
            }
            assert_eq!(depth, 0, "{group}");
        }
    }

    #[test]
    fn topic_unigrams_are_far_apart() {
        // measured on generated text, not on the generating distributions
        let lines = two_topic_lines(4000, TWO_TOPIC_LINE_LEN, 11);
        let union: Vec<char> = TOPIC_ALPHABETS.concat().chars().collect();
        let mut counts = [vec![0f64; union.len()], vec![0f64; union.len()]];
        for (line, t) in &lines {
            for c in line.chars() {
                counts[*t][union.iter().position(|&u| u == c).unwrap()] += 1.0;
            }
        }
        let norm = |v: &[f64]| {
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let (p, q) = (norm(&counts[0]), norm(&counts[1]));
        let tv: f64 = 0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(tv > 0.5, "tv = {tv}");

        // per-window distributions too
        let (a, b) = (&lines.iter().find(|l| l.1 == 0).unwrap().0, &lines.iter().find(|l| l.1 == 1).unwrap().0);
        let unigram = |s: &str| norm(&union.iter().map(|u| s.chars().filter(|c| c == u).count() as f64).collect::<Vec<_>>());
        let (pa, pb) = (unigram(a), unigram(b));
        let tvw: f64 = 0.5 * pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>();
        assert!(tvw > 0.5, "window tv = {tvw}");
    }
}
