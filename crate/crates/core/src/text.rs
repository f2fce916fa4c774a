//! Tokenization and thought-marker handling shared by the corpus pipeline,
//! the reward functions and the policy vocabulary.

use serde::{Deserialize, Serialize};

/// Sentence-terminal punctuation used when no other set is configured.
pub const DEFAULT_TERMINALS: &str = "。．！？；.!?;";

pub const BEGIN_OF_THOUGHT: &str = "<|begin_of_thought|>";
pub const END_OF_THOUGHT: &str = "<|end_of_thought|>";

/// The begin/end pair delimiting a chain-of-thought span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerPair {
    pub begin: String,
    pub end: String,
}

impl Default for MarkerPair {
    fn default() -> Self {
        Self {
            begin: BEGIN_OF_THOUGHT.to_string(),
            end: END_OF_THOUGHT.to_string(),
        }
    }
}

impl MarkerPair {
    pub fn is_marker(&self, token: &str) -> bool {
        token == self.begin || token == self.end
    }

    /// Index of the begin and end marker when the token sequence holds
    /// exactly one of each with begin first.
    pub fn balanced_span<S: AsRef<str>>(&self, tokens: &[S]) -> Option<(usize, usize)> {
        let mut begin = None;
        let mut end = None;
        for (i, tok) in tokens.iter().enumerate() {
            let tok = tok.as_ref();
            if tok == self.begin {
                if begin.replace(i).is_some() {
                    return None;
                }
            } else if tok == self.end && end.replace(i).is_some() {
                return None;
            }
        }
        match (begin, end) {
            (Some(b), Some(e)) if b < e => Some((b, e)),
            _ => None,
        }
    }
}

/// A set of single-character sentence terminals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Terminals(Vec<char>);

impl Terminals {
    pub fn new(chars: &str) -> Self {
        let mut v: Vec<char> = chars.chars().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, c: char) -> bool {
        self.0.binary_search(&c).is_ok()
    }

    /// True if the token is exactly one terminal character.
    pub fn is_terminal_token(&self, token: &str) -> bool {
        let mut chars = token.chars();
        matches!((chars.next(), chars.next()), (Some(c), None) if self.contains(c))
    }

    pub fn as_string(&self) -> String {
        self.0.iter().collect()
    }
}

impl Default for Terminals {
    fn default() -> Self {
        Self::new(DEFAULT_TERMINALS)
    }
}

/// CJK ideographs plus CJK and full-width punctuation: each such
/// character is a token of its own.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3000..=0x303F
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF
        | 0xFF00..=0xFFEF
        | 0x20000..=0x2FA1F)
}

/// Splits text into tokens.
///
/// `<|...|>` runs are kept whole, CJK characters stand alone, runs of
/// other alphanumerics form words and any remaining non-space character
/// is a single punctuation token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if rest.starts_with("<|") {
            if let Some(close) = rest[2..].find("|>") {
                flush(&mut word, &mut out);
                let len = close + 4;
                out.push(rest[..len].to_string());
                rest = &rest[len..];
                continue;
            }
        }
        rest = &rest[c.len_utf8()..];
        if c.is_whitespace() {
            flush(&mut word, &mut out);
        } else if is_cjk(c) || !(c.is_alphanumeric() || c == '_' || c == '\'') {
            flush(&mut word, &mut out);
            out.push(c.to_string());
        } else {
            word.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

fn flush(word: &mut String, out: &mut Vec<String>) {
    if !word.is_empty() {
        out.push(std::mem::take(word));
    }
}

/// Case folding used for matching: Latin scripts compare case-insensitively,
/// CJK is unaffected by lowercasing.
pub fn fold(token: &str) -> String {
    token.to_lowercase()
}

/// True when the token carries lexical content (not punctuation, not a marker).
pub fn is_content_token(token: &str) -> bool {
    !(token.starts_with("<|") && token.ends_with("|>"))
        && !(token.starts_with('<') && token.ends_with('>') && token.len() > 2)
        && token.chars().any(char::is_alphanumeric)
}
