//! Ground-truth entity list and alias matching.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_jsonl;
use crate::text::{fold, tokenize};

/// A historical entity with the surface forms that refer to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GazetteerEntry {
    pub canonical: String,
    pub aliases: BTreeSet<String>,
    /// Any one of these terms must appear in the output for a mention to be
    /// factually aligned. Empty means unconstrained.
    #[serde(default)]
    pub required_context: BTreeSet<String>,
    /// Query ids this entity is an expected answer for.
    #[serde(default)]
    pub relevant_queries: BTreeSet<String>,
}

impl GazetteerEntry {
    pub fn new<I, S>(canonical: &str, aliases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut aliases: BTreeSet<String> = aliases.into_iter().map(Into::into).collect();
        aliases.insert(canonical.to_string());
        Self {
            canonical: canonical.to_string(),
            aliases,
            required_context: BTreeSet::new(),
            relevant_queries: BTreeSet::new(),
        }
    }

    pub fn with_context<I, S>(mut self, terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.required_context
            .extend(terms.into_iter().map(Into::into));
        self
    }

    pub fn relevant_to<I, S>(mut self, queries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.relevant_queries
            .extend(queries.into_iter().map(Into::into));
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(Error::InvalidGazetteer {
                canonical: self.canonical.clone(),
                reason: reason.to_string(),
            })
        };
        if self.canonical.trim().is_empty() {
            return fail("canonical name is empty");
        }
        if !self.aliases.contains(&self.canonical) {
            return fail("canonical name is not among the aliases");
        }
        if self.aliases.iter().any(|a| tokenize(a).is_empty()) {
            return fail("alias without any token");
        }
        Ok(())
    }
}

/// A located alias occurrence, `start..end` in token positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mention {
    pub entry: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
struct CompiledAlias {
    tokens: Vec<String>,
    entry: usize,
}

/// Validated gazetteer with an alias index.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    // first folded token -> candidates, longest first, then gazetteer order
    by_first: HashMap<String, Vec<CompiledAlias>>,
    context_terms: Vec<Vec<Vec<String>>>,
}

impl Gazetteer {
    pub fn new(entries: Vec<GazetteerEntry>) -> Result<Self> {
        let mut by_first: HashMap<String, Vec<CompiledAlias>> = HashMap::new();
        let mut context_terms = Vec::with_capacity(entries.len());
        for (idx, entry) in entries.iter().enumerate() {
            entry.validate()?;
            for alias in &entry.aliases {
                let tokens: Vec<String> = tokenize(alias).iter().map(|t| fold(t)).collect();
                by_first
                    .entry(tokens[0].clone())
                    .or_default()
                    .push(CompiledAlias { tokens, entry: idx });
            }
            context_terms.push(
                entry
                    .required_context
                    .iter()
                    .map(|t| tokenize(t).iter().map(|t| fold(t)).collect::<Vec<_>>())
                    .filter(|t: &Vec<String>| !t.is_empty())
                    .collect(),
            );
        }
        for list in by_first.values_mut() {
            list.sort_by(|a, b| {
                b.tokens
                    .len()
                    .cmp(&a.tokens.len())
                    .then(a.entry.cmp(&b.entry))
            });
            list.dedup_by(|a, b| a.tokens == b.tokens);
        }
        Ok(Self {
            entries,
            by_first,
            context_terms,
        })
    }

    pub fn from_jsonl(path: &Path) -> Result<Self> {
        Self::new(read_jsonl(path)?)
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn knows_query(&self, query_id: &str) -> bool {
        self.entries
            .iter()
            .any(|e| e.relevant_queries.contains(query_id))
    }

    /// Entries listing `query_id` as relevant.
    pub fn expected_for(&self, query_id: &str) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.relevant_queries.contains(query_id))
            .map(|(i, _)| i)
            .collect()
    }

    /// Non-overlapping alias occurrences, scanning left to right and taking
    /// the longest alias at each position. An alias shared by several
    /// entries resolves to the earliest entry.
    pub fn find_mentions<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Mention> {
        let folded: Vec<String> = tokens.iter().map(|t| fold(t.as_ref())).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < folded.len() {
            let hit = self
                .by_first
                .get(&folded[i])
                .and_then(|cands| cands.iter().find(|c| folded[i..].starts_with(&c.tokens)));
            match hit {
                Some(c) => {
                    out.push(Mention {
                        entry: c.entry,
                        start: i,
                        end: i + c.tokens.len(),
                    });
                    i += c.tokens.len();
                }
                None => i += 1,
            }
        }
        out
    }

    /// Whether some required-context term of `entry` occurs in the folded tokens.
    pub(crate) fn context_satisfied(&self, entry: usize, folded: &[String]) -> bool {
        let terms = &self.context_terms[entry];
        if self.entries[entry].required_context.is_empty() {
            return true;
        }
        terms
            .iter()
            .any(|term| folded.windows(term.len()).any(|w| w == term.as_slice()))
    }
}
