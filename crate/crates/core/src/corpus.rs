//! Corpus preparation: sentence segmentation, factual/reasoning
//! classification over context windows, and QA / chain-of-thought record
//! synthesis.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::rewards::Gazetteer;
use crate::text::{is_cjk, tokenize, MarkerPair, Terminals};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentClass {
    Factual,
    Reasoning,
    Unclassified,
}

/// One sentence of a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSegment {
    pub id: usize,
    pub text: String,
    pub doc_id: String,
    pub class: SegmentClass,
}

/// A segment with up to `k` neighbours on each side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub center: CorpusSegment,
    pub context: Vec<CorpusSegment>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub question: String,
    pub answer: String,
    pub source_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotRecord {
    pub question: String,
    pub thought: String,
    pub answer: String,
    pub source_ids: Vec<usize>,
}

/// A training or evaluation prompt tied to the gazetteer query it asks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt: String,
    pub query_id: String,
}

/// Splits a document after every terminal character.
///
/// Whitespace between sentences stays attached to the start of the
/// following segment, so concatenating the texts reproduces the trimmed
/// input. Text after the last terminal becomes a final segment.
pub fn segment(document: &str, doc_id: &str, terminals: &Terminals) -> Vec<CorpusSegment> {
    assert!(!terminals.is_empty(), "terminal set must be nonempty");
    let body = document.trim();
    let mut out = Vec::new();
    let mut start = 0;
    let push = |text: &str, out: &mut Vec<CorpusSegment>| {
        out.push(CorpusSegment {
            id: out.len(),
            text: text.to_string(),
            doc_id: doc_id.to_string(),
            class: SegmentClass::Unclassified,
        });
    };
    for (pos, c) in body.char_indices() {
        if terminals.contains(c) {
            let end = pos + c.len_utf8();
            push(&body[start..end], &mut out);
            start = end;
        }
    }
    if start < body.len() {
        push(&body[start..], &mut out);
    }
    out
}

/// One window per segment, context clipped at the document boundaries.
pub fn build_windows(segments: &[CorpusSegment], k: usize) -> Vec<ContextWindow> {
    let n = segments.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(k);
            let hi = (i + k + 1).min(n);
            let context = (lo..hi)
                .filter(|&j| j != i)
                .map(|j| segments[j].clone())
                .collect();
            ContextWindow {
                center: segments[i].clone(),
                context,
                k,
            }
        })
        .collect()
}

/// Decides whether a window's center sentence is factual or reasoning text.
pub trait SentenceClassifier: Send + Sync {
    fn classify(&self, window: &ContextWindow) -> SegmentClass;
}

/// Marks a sentence as reasoning when it contains a causal or inferential
/// connective from the cue lexicon.
///
/// Cues containing Latin letters match whole words case-insensitively;
/// other cues match as substrings.
#[derive(Debug, Clone)]
pub struct LexiconClassifier {
    cues: BTreeSet<String>,
}

const DEFAULT_CUES: &[&str] = &[
    "故",
    "是以",
    "所以",
    "是故",
    "因而",
    "由是",
    "然则",
    "盖",
    "何则",
    "以为",
    "because",
    "therefore",
    "thus",
    "hence",
    "consequently",
    "since",
    "so that",
];

impl LexiconClassifier {
    pub fn new<I, S>(cues: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            cues: cues
                .into_iter()
                .map(|s| s.into().to_lowercase())
                .filter(|s| !s.trim().is_empty())
                .collect(),
        }
    }

    fn matches(&self, sentence: &str) -> bool {
        let lowered = sentence.to_lowercase();
        let words: Vec<String> = tokenize(&lowered);
        self.cues.iter().any(|cue| {
            if cue.chars().any(|c| c.is_ascii_alphabetic()) {
                let cue_words = tokenize(cue);
                words
                    .windows(cue_words.len())
                    .any(|w| w == cue_words.as_slice())
            } else {
                lowered.contains(cue.as_str())
            }
        })
    }
}

impl Default for LexiconClassifier {
    fn default() -> Self {
        Self::new(DEFAULT_CUES.iter().copied())
    }
}

impl SentenceClassifier for LexiconClassifier {
    fn classify(&self, window: &ContextWindow) -> SegmentClass {
        if self.matches(&window.center.text) {
            SegmentClass::Reasoning
        } else {
            SegmentClass::Factual
        }
    }
}

pub fn classify(window: &ContextWindow, classifier: &dyn SentenceClassifier) -> SegmentClass {
    classifier.classify(window)
}

/// Structural check of a chain-of-thought record.
pub fn validate_cot(record: &CotRecord, markers: &MarkerPair) -> bool {
    let count = |s: &str, m: &str| s.matches(m).count();
    let thought = &record.thought;
    count(thought, &markers.begin) == 1
        && count(thought, &markers.end) == 1
        && thought.starts_with(&markers.begin)
        && thought.ends_with(&markers.end)
        && thought.len() >= markers.begin.len() + markers.end.len()
        && [&record.question, &record.answer].iter().all(|s| {
            !s.trim().is_empty() && count(s, &markers.begin) == 0 && count(s, &markers.end) == 0
        })
}

/// Joins tokens back into text, spacing only between adjacent words of
/// non-CJK scripts.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let is_word =
        |t: &str| t.chars().any(char::is_alphanumeric) && !t.chars().next().is_some_and(is_cjk);
    let mut out = String::new();
    let mut prev_word = false;
    for t in tokens {
        let t = t.as_ref();
        let word = is_word(t);
        if prev_word && word {
            out.push(' ');
        }
        out.push_str(t);
        prev_word = word;
    }
    out
}

pub const BLANK: &str = "____";

/// Records synthesized from one document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synthesized {
    pub qa: Vec<QaRecord>,
    pub cot: Vec<CotRecord>,
    pub prompts: Vec<PromptRecord>,
}

/// Template-based QA and chain-of-thought synthesis from classified windows.
///
/// Every gazetteer mention in a factual sentence yields a cloze QA pair
/// (the mention blanked out, the canonical name as answer). Mentions in
/// reasoning sentences yield a CoT record whose thought walks through the
/// neighbouring sentences. Mentions of entries tied to a query also yield
/// a prompt record.
pub fn synthesize(
    windows: &[ContextWindow],
    gazetteer: &Gazetteer,
    markers: &MarkerPair,
) -> Synthesized {
    let mut out = Synthesized::default();
    for w in windows {
        let tokens = tokenize(&w.center.text);
        for m in gazetteer.find_mentions(&tokens) {
            let entry = &gazetteer.entries()[m.entry];
            let mut cloze: Vec<&str> = tokens[..m.start].iter().map(String::as_str).collect();
            cloze.push(BLANK);
            cloze.extend(tokens[m.end..].iter().map(String::as_str));
            let cloze = detokenize(&cloze);
            let question = format!("Who or what is {BLANK} in: {cloze}");
            let answer = entry.canonical.clone();
            if let Some(q) = entry.relevant_queries.iter().next() {
                out.prompts.push(PromptRecord {
                    prompt: question.clone(),
                    query_id: q.clone(),
                });
            }
            match w.center.class {
                SegmentClass::Reasoning => {
                    let mut steps: Vec<String> = w
                        .context
                        .iter()
                        .map(|c| format!("Context {}: {}", c.id, c.text.trim()))
                        .collect();
                    let clue = if entry.required_context.is_empty() {
                        String::new()
                    } else {
                        let terms: Vec<&str> =
                            entry.required_context.iter().map(String::as_str).collect();
                        format!(" It is tied to {}.", terms.join(", "))
                    };
                    steps.push(format!(
                        "Sentence {}: {} The blank names {}.{}",
                        w.center.id, cloze, entry.canonical, clue
                    ));
                    let mut source_ids: Vec<usize> = w.context.iter().map(|c| c.id).collect();
                    source_ids.push(w.center.id);
                    source_ids.sort_unstable();
                    out.cot.push(CotRecord {
                        question,
                        thought: format!("{}{}{}", markers.begin, steps.join("\n"), markers.end),
                        answer,
                        source_ids,
                    });
                }
                _ => out.qa.push(QaRecord {
                    question,
                    answer,
                    source_ids: vec![w.center.id],
                }),
            }
        }
    }
    out
}

/// Segments, classifies and windows one document.
pub fn prepare_document(
    document: &str,
    doc_id: &str,
    terminals: &Terminals,
    k: usize,
    classifier: &dyn SentenceClassifier,
) -> (Vec<CorpusSegment>, Vec<ContextWindow>) {
    let mut segments = segment(document, doc_id, terminals);
    let classes: Vec<SegmentClass> = build_windows(&segments, k)
        .iter()
        .map(|w| classifier.classify(w))
        .collect();
    for (s, c) in segments.iter_mut().zip(classes) {
        s.class = c;
    }
    let windows = build_windows(&segments, k);
    (segments, windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::GazetteerEntry;

    fn segs(n: usize) -> Vec<CorpusSegment> {
        segment(&"句。".repeat(n), "d", &Terminals::default())
    }

    fn ids(w: &ContextWindow) -> Vec<usize> {
        w.context.iter().map(|s| s.id).collect()
    }

    #[test]
    fn segment_examples() {
        let t = Terminals::new("。！？；");
        assert!(segment("", "d", &t).is_empty());
        let s = segment("天命玄鸟。降而生商。", "d", &t);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].id, s[0].text.as_str()), (0, "天命玄鸟。"));
        assert_eq!((s[1].id, s[1].text.as_str()), (1, "降而生商。"));
        let s = segment("no terminal here", "d", &Terminals::default());
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].text, "no terminal here");
    }

    #[test]
    fn consecutive_terminals_split() {
        let s = segment("  Go! Now!! ", "d", &Terminals::default());
        let texts: Vec<&str> = s.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, vec!["Go!", " Now!", "!"]);
    }

    #[test]
    fn window_examples() {
        let w = build_windows(&segs(1), 2);
        assert!(w[0].context.is_empty());
        let w = build_windows(&segs(5), 1);
        assert_eq!(ids(&w[2]), vec![1, 3]);
        let w = build_windows(&segs(5), 2);
        assert_eq!(ids(&w[0]), vec![1, 2]);
        assert_eq!(ids(&w[4]), vec![2, 3]);
    }

    fn window_of(text: &str) -> ContextWindow {
        build_windows(&segment(text, "d", &Terminals::default()), 1).remove(0)
    }

    #[test]
    fn classify_examples() {
        let c = LexiconClassifier::default();
        assert_eq!(
            classify(&window_of("始皇二十六年，初并天下。"), &c),
            SegmentClass::Factual
        );
        assert_eq!(
            classify(
                &window_of("民不堪命，故叛之。"),
                &LexiconClassifier::new(["故"])
            ),
            SegmentClass::Reasoning
        );
        let empty = LexiconClassifier::new(Vec::<String>::new());
        assert_eq!(
            classify(&window_of("故曰。"), &empty),
            SegmentClass::Factual
        );
    }

    #[test]
    fn latin_cues_match_whole_words() {
        let c = LexiconClassifier::default();
        assert_eq!(
            classify(&window_of("Thus the dynasty fell."), &c),
            SegmentClass::Reasoning
        );
        assert_eq!(
            classify(&window_of("Thusly spoke nobody."), &c),
            SegmentClass::Factual
        );
    }

    fn cot(thought: &str, answer: &str) -> CotRecord {
        CotRecord {
            question: "q".into(),
            thought: thought.into(),
            answer: answer.into(),
            source_ids: vec![0],
        }
    }

    #[test]
    fn validate_cot_cases() {
        let m = MarkerPair::default();
        let (b, e) = (&m.begin, &m.end);
        assert!(validate_cot(&cot(&format!("{b}step{e}"), "a"), &m));
        assert!(!validate_cot(&cot(&format!("{b}step"), "a"), &m));
        assert!(!validate_cot(&cot(&format!("{b}{b}step{e}"), "a"), &m));
        assert!(!validate_cot(&cot(&format!("{b}step{e}"), " "), &m));
        assert!(!validate_cot(&cot(&format!("{e}step{b}"), "a"), &m));
    }

    #[test]
    fn detokenize_spacing() {
        assert_eq!(
            detokenize(&tokenize("Tang founded Shang.")),
            "Tang founded Shang."
        );
        assert_eq!(detokenize(&tokenize("商汤 灭夏。")), "商汤灭夏。");
    }

    #[test]
    fn synthesis_produces_valid_records() {
        let g = Gazetteer::new(vec![GazetteerEntry::new("Tang", ["成汤"])
            .with_context(["Shang"])
            .relevant_to(["founder"])])
        .unwrap();
        let doc =
            "Tang defeated Jie at Mingtiao. The people suffered, therefore Tang rose. 成汤立。";
        let (segments, windows) = prepare_document(
            doc,
            "d",
            &Terminals::default(),
            1,
            &LexiconClassifier::default(),
        );
        assert_eq!(segments[1].class, SegmentClass::Reasoning);
        let m = MarkerPair::default();
        let out = synthesize(&windows, &g, &m);
        assert_eq!(out.qa.len(), 2);
        assert_eq!(out.cot.len(), 1);
        assert_eq!(out.prompts.len(), 3);
        assert_eq!(out.cot[0].source_ids, vec![0, 1, 2]);
        assert!(out.cot.iter().all(|r| validate_cot(r, &m)));
        assert_eq!(out.qa[0].answer, "Tang");
        assert!(out.qa[0].question.contains(BLANK));
    }
}
