//! Corpus text handling: decoding bytes, tweet normalization, splits.

use std::sync::OnceLock;

use regex::Regex;

/// Interprets bytes as UTF-8; malformed sequences become U+FFFD, which the
/// vocabulary maps to UNK.
pub fn decode_bytes(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

/// Replaces user mentions with `@userid` and links with `url`.
pub fn clean_tweet(raw: &str) -> String {
    static URL: OnceLock<Regex> = OnceLock::new();
    static MENTION: OnceLock<Regex> = OnceLock::new();
    let url = URL.get_or_init(|| Regex::new(r"(?:https?://|www\.)\S+").expect("url regex"));
    let mention = MENTION.get_or_init(|| Regex::new(r"@\w+").expect("mention regex"));
    let no_urls = url.replace_all(raw, "url");
    mention.replace_all(&no_urls, "@userid").into_owned()
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic 99/1 train/validation assignment of a line.
pub fn is_validation_line(line: &str) -> bool {
    fnv1a(line.as_bytes()).is_multiple_of(100)
}

/// Splits line-oriented text into (train, validation) lines; blank lines are skipped.
pub fn split_lines(text: &str) -> (Vec<String>, Vec<String>) {
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        if is_validation_line(line) {
            valid.push(line.to_string());
        } else {
            train.push(line.to_string());
        }
    }
    (train, valid)
}
