//! Logical-coherence scoring.
//!
//! Coherence has no fixed definition, so it sits behind [`CoherenceScorer`].
//! The default, [`OverlapCoherence`], is a lexical heuristic: consecutive
//! sentences of the thought should share vocabulary.

use std::collections::BTreeSet;

use crate::corpus::ContextWindow;
use crate::text::{fold, is_content_token, MarkerPair, Terminals};

/// Scores an output's coherence in `[0, 1]`.
pub trait CoherenceScorer: Send + Sync {
    fn score(&self, output: &[String], window: Option<&ContextWindow>) -> f64;
}

const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "is", "it", "of", "on",
    "or", "that", "the", "this", "to", "was", "were", "with", "之", "也", "而", "其", "者", "于",
    "乎", "矣", "焉", "曰",
];

/// Fraction of adjacent sentence pairs in the thought span that share at
/// least one content token.
#[derive(Debug, Clone)]
pub struct OverlapCoherence {
    pub markers: MarkerPair,
    pub terminals: Terminals,
    pub stopwords: BTreeSet<String>,
}

impl Default for OverlapCoherence {
    fn default() -> Self {
        Self {
            markers: MarkerPair::default(),
            terminals: Terminals::default(),
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl OverlapCoherence {
    /// Content-token sets of each sentence in the thought span. Without a
    /// well-formed marker pair the whole output is treated as the thought.
    fn sentences(&self, output: &[String]) -> Vec<BTreeSet<String>> {
        let span = match self.markers.balanced_span(output) {
            Some((b, e)) => &output[b + 1..e],
            None => output,
        };
        let mut sentences = Vec::new();
        let mut current = BTreeSet::new();
        for tok in span {
            if self.terminals.is_terminal_token(tok) {
                if !current.is_empty() {
                    sentences.push(std::mem::take(&mut current));
                }
                continue;
            }
            if self.markers.is_marker(tok) || !is_content_token(tok) {
                continue;
            }
            let f = fold(tok);
            if !self.stopwords.contains(&f) {
                current.insert(f);
            }
        }
        if !current.is_empty() {
            sentences.push(current);
        }
        sentences
    }
}

impl CoherenceScorer for OverlapCoherence {
    fn score(&self, output: &[String], _window: Option<&ContextWindow>) -> f64 {
        let sentences = self.sentences(output);
        if sentences.len() <= 1 {
            return 1.0;
        }
        let pairs = sentences.len() - 1;
        let linked = sentences
            .windows(2)
            .filter(|w| !w[0].is_disjoint(&w[1]))
            .count();
        linked as f64 / pairs as f64
    }
}
