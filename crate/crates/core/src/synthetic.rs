//! A small synthetic fact task for end-to-end runs.
//!
//! Five dynasty facts, each asked as "<lead-in> : who <relation> <dynasty> ?".
//! Any alias of the answer counts as correct; no co-occurring context is
//! required, so a single token can answer. Training and held-out prompts
//! share questions but use disjoint lead-in phrases.

use crate::corpus::PromptRecord;
use crate::error::Result;
use crate::grpo::Prompt;
use crate::policy::{PolicyParams, Vocabulary};
use crate::rewards::{Gazetteer, GazetteerEntry};
use crate::text::tokenize;

struct Fact {
    query: &'static str,
    relation: &'static str,
    dynasty: &'static str,
    canonical: &'static str,
    aliases: &'static [&'static str],
}

const FACTS: [Fact; 5] = [
    Fact {
        query: "founder-shang",
        relation: "founded",
        dynasty: "Shang",
        canonical: "Tang",
        aliases: &["Shang Tang", "Cheng Tang"],
    },
    Fact {
        query: "founder-zhou",
        relation: "founded",
        dynasty: "Zhou",
        canonical: "Wu",
        aliases: &["Zhou Wu", "King Wu"],
    },
    Fact {
        query: "unifier-qin",
        relation: "unified",
        dynasty: "Qin",
        canonical: "Zheng",
        aliases: &["Ying Zheng"],
    },
    Fact {
        query: "founder-han",
        relation: "founded",
        dynasty: "Han",
        canonical: "Gaozu",
        aliases: &["Han Gaozu"],
    },
    Fact {
        query: "last-king-xia",
        relation: "ended",
        dynasty: "Xia",
        canonical: "Jie",
        aliases: &["Xia Jie", "King Jie"],
    },
];

/// Entities relevant to no query: any mention of them is a hallucination.
const DISTRACTORS: [(&str, &[&str]); 3] = [("Yu", &[]), ("Yi Yin", &[]), ("Dan", &["Duke Dan"])];

const TRAIN_LEADS: [&str; 4] = ["tell", "quiz", "please", "ask"];
const HELDOUT_LEADS: [&str; 4] = ["now", "recall", "answer", "say"];

const FILLER: [&str; 2] = ["dynasty", "then"];

/// Gazetteer, vocabulary and prompt sets of the synthetic task.
#[derive(Debug, Clone)]
pub struct FactTask {
    pub gazetteer: Gazetteer,
    pub vocab: Vocabulary,
    pub train: Vec<PromptRecord>,
    pub heldout: Vec<PromptRecord>,
}

fn prompts(leads: &[&str]) -> Vec<PromptRecord> {
    // fact-major inner loop: any window of five consecutive prompts covers every fact
    leads
        .iter()
        .flat_map(|lead| {
            FACTS.iter().map(move |f| PromptRecord {
                prompt: format!("{lead} : who {} {} ?", f.relation, f.dynasty),
                query_id: f.query.to_string(),
            })
        })
        .collect()
}

impl FactTask {
    pub fn new() -> Result<Self> {
        let mut entries: Vec<GazetteerEntry> = FACTS
            .iter()
            .map(|f| {
                GazetteerEntry::new(f.canonical, f.aliases.iter().copied()).relevant_to([f.query])
            })
            .collect();
        entries.extend(
            DISTRACTORS
                .iter()
                .map(|(c, a)| GazetteerEntry::new(c, a.iter().copied())),
        );
        let gazetteer = Gazetteer::new(entries)?;
        let train = prompts(&TRAIN_LEADS);
        let heldout = prompts(&HELDOUT_LEADS);
        let vocab = vocabulary_for(
            &gazetteer,
            train.iter().chain(&heldout),
            FILLER.iter().copied(),
        )?;
        Ok(Self {
            gazetteer,
            vocab,
            train,
            heldout,
        })
    }

    pub fn uniform_policy(&self) -> PolicyParams {
        PolicyParams::uniform(self.vocab.clone())
    }

    pub fn encode(&self, records: &[PromptRecord]) -> Result<Vec<Prompt>> {
        encode_prompts(&self.vocab, records)
    }
}

/// Special tokens, every prompt token, every gazetteer alias and context
/// token, sentence terminals, then `extra`.
pub fn vocabulary_for<'a, I, E, S>(
    gazetteer: &Gazetteer,
    prompts: I,
    extra: E,
) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a PromptRecord>,
    E: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut words: Vec<String> = vec![".".to_string()];
    for p in prompts {
        words.extend(tokenize(&p.prompt));
    }
    for e in gazetteer.entries() {
        for s in e.aliases.iter().chain(&e.required_context) {
            words.extend(tokenize(s));
        }
    }
    for s in extra {
        words.extend(tokenize(s.as_ref()));
    }
    Vocabulary::with_specials(words)
}

pub fn encode_prompts(vocab: &Vocabulary, records: &[PromptRecord]) -> Result<Vec<Prompt>> {
    records
        .iter()
        .map(|r| {
            Ok(Prompt {
                tokens: vocab.encode(&tokenize(&r.prompt))?,
                query_id: r.query_id.clone(),
            })
        })
        .collect()
}
