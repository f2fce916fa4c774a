//! Reward components and their weighted aggregation.
//!
//! Four signals score a generated token sequence:
//!
//! * entity reward `w_c·CE − w_i·IE`, counting correct and incorrect
//!   gazetteer mentions;
//! * logical coherence, delegated to a [`CoherenceScorer`];
//! * format reward, 1.0 for exactly one balanced thought-marker pair;
//! * repetition penalty `RR·MPV` with `RR = 1 − distinct/total` n-grams.
//!
//! `r_final = w1·r_ent + w2·r_log + w3·r_fmt + w4·r_rep`.

mod coherence;
mod gazetteer;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use coherence::{CoherenceScorer, OverlapCoherence};
pub use gazetteer::{Gazetteer, GazetteerEntry, Mention};

use crate::corpus::ContextWindow;
use crate::error::{Error, Result};
use crate::text::{fold, MarkerPair};

/// Tolerance on `w1 + w2 + w3 + w4 = 1`.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// Reward and regularization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w_c: f64,
    pub w_i: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub mpv: f64,
    pub n: usize,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_c: 1.0,
            w_i: 1.0,
            w1: 0.4,
            w2: 0.2,
            w3: 0.2,
            w4: 0.2,
            epsilon: 0.2,
            beta: 0.04,
            mpv: -1.0,
            n: 3,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidWeights(msg));
        for (name, v) in [
            ("w_c", self.w_c),
            ("w_i", self.w_i),
            ("w1", self.w1),
            ("w2", self.w2),
            ("w3", self.w3),
            ("w4", self.w4),
            ("beta", self.beta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0 (got {v})"));
            }
        }
        let sum = self.w1 + self.w2 + self.w3 + self.w4;
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return bad(format!("w1 + w2 + w3 + w4 must equal 1 (got {sum})"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1) (got {})", self.epsilon));
        }
        if !(self.mpv.is_finite() && self.mpv <= 0.0) {
            return bad(format!("mpv must be finite and <= 0 (got {})", self.mpv));
        }
        if self.n == 0 {
            return bad("n must be >= 1".to_string());
        }
        Ok(())
    }

    /// The same weights with `w1` zeroed and `w2..w4` rescaled to sum to one.
    pub fn without_entity(&self) -> Result<Self> {
        let rest = self.w2 + self.w3 + self.w4;
        if rest <= 0.0 {
            return Err(Error::InvalidWeights(
                "cannot renormalize: w2 + w3 + w4 = 0".to_string(),
            ));
        }
        Ok(Self {
            w1: 0.0,
            w2: self.w2 / rest,
            w3: self.w3 / rest,
            w4: self.w4 / rest,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectMatch {
    pub entry: usize,
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncorrectMatch {
    pub surface: String,
    pub span: (usize, usize),
}

/// Outcome of matching an output against the gazetteer for one query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMatchReport {
    pub correct: Vec<CorrectMatch>,
    pub incorrect: Vec<IncorrectMatch>,
    #[serde(rename = "CE")]
    pub ce: usize,
    #[serde(rename = "IE")]
    pub ie: usize,
    /// Entries expected for the query, whether or not they were produced.
    pub expected: Vec<usize>,
}

/// Per-component rewards and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_ent: f64,
    pub r_log: f64,
    pub r_fmt: f64,
    pub r_rep: f64,
    pub r_final: f64,
}

impl RewardBreakdown {
    /// Combines component values; weights are assumed valid.
    pub fn combine(r_ent: f64, r_log: f64, r_fmt: f64, r_rep: f64, w: &RewardWeights) -> Self {
        Self {
            r_ent,
            r_log,
            r_fmt,
            r_rep,
            r_final: w.w1 * r_ent + w.w2 * r_log + w.w3 * r_fmt + w.w4 * r_rep,
        }
    }
}

/// Classifies each gazetteer mention in `output` as correct or incorrect
/// for `query_id`.
///
/// A mention is correct when its entry is relevant to the query and, if the
/// entry constrains context, one of its required terms occurs somewhere in
/// the output. Tokens outside the gazetteer are ignored.
pub fn match_entities<S: AsRef<str>>(
    output: &[S],
    query_id: &str,
    gazetteer: &Gazetteer,
) -> Result<EntityMatchReport> {
    let expected = gazetteer.expected_for(query_id);
    if expected.is_empty() {
        return Err(Error::UnknownQuery(query_id.to_string()));
    }
    let folded: Vec<String> = output.iter().map(|t| fold(t.as_ref())).collect();
    let mut report = EntityMatchReport {
        expected,
        ..Default::default()
    };
    for m in gazetteer.find_mentions(output) {
        let entry = &gazetteer.entries()[m.entry];
        let relevant = entry.relevant_queries.contains(query_id);
        if relevant && gazetteer.context_satisfied(m.entry, &folded) {
            report.correct.push(CorrectMatch {
                entry: m.entry,
                span: (m.start, m.end),
            });
        } else {
            let surface = output[m.start..m.end]
                .iter()
                .map(|t| t.as_ref())
                .collect::<Vec<_>>()
                .join(" ");
            report.incorrect.push(IncorrectMatch {
                surface,
                span: (m.start, m.end),
            });
        }
    }
    report.ce = report.correct.len();
    report.ie = report.incorrect.len();
    Ok(report)
}

pub fn entity_reward(report: &EntityMatchReport, w: &RewardWeights) -> f64 {
    w.w_c * report.ce as f64 - w.w_i * report.ie as f64
}

pub fn format_reward<S: AsRef<str>>(output: &[S], markers: &MarkerPair) -> f64 {
    if markers.balanced_span(output).is_some() {
        1.0
    } else {
        0.0
    }
}

/// `1 − distinct/total` over the output's n-grams; 0 when there are none.
pub fn repetition_ratio<S: AsRef<str>>(output: &[S], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be >= 1");
    if output.len() < n {
        return 0.0;
    }
    let total = output.len() - n + 1;
    let distinct: HashSet<Vec<&str>> = output
        .windows(n)
        .map(|w| w.iter().map(|t| t.as_ref()).collect())
        .collect();
    1.0 - distinct.len() as f64 / total as f64
}

pub fn repetition_penalty<S: AsRef<str>>(output: &[S], n: usize, mpv: f64) -> f64 {
    // adding 0.0 turns -0.0 into 0.0
    repetition_ratio(output, n) * mpv + 0.0
}

pub fn coherence_reward(
    output: &[String],
    window: Option<&ContextWindow>,
    scorer: &dyn CoherenceScorer,
) -> f64 {
    scorer.score(output, window)
}

/// Scores `output` on all four components and aggregates them.
pub fn final_reward(
    output: &[String],
    query_id: &str,
    gazetteer: &Gazetteer,
    w: &RewardWeights,
    markers: &MarkerPair,
    scorer: &dyn CoherenceScorer,
) -> Result<RewardBreakdown> {
    w.validate()?;
    let report = match_entities(output, query_id, gazetteer)?;
    Ok(RewardBreakdown::combine(
        entity_reward(&report, w),
        coherence_reward(output, None, scorer),
        format_reward(output, markers),
        repetition_penalty(output, w.n, w.mpv),
        w,
    ))
}

/// A reward function bundling the gazetteer, weights, markers and
/// coherence scorer used during training and evaluation.
pub struct RewardModel {
    pub gazetteer: Gazetteer,
    pub weights: RewardWeights,
    pub markers: MarkerPair,
    pub scorer: Box<dyn CoherenceScorer>,
}

/// Everything computed for one scored output.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub breakdown: RewardBreakdown,
    pub report: EntityMatchReport,
    pub repetition_ratio: f64,
}

impl RewardModel {
    pub fn new(gazetteer: Gazetteer, weights: RewardWeights) -> Result<Self> {
        weights.validate()?;
        Ok(Self {
            gazetteer,
            weights,
            markers: MarkerPair::default(),
            scorer: Box::new(OverlapCoherence::default()),
        })
    }

    pub fn score(&self, output: &[String], query_id: &str) -> Result<Scored> {
        let w = &self.weights;
        let report = match_entities(output, query_id, &self.gazetteer)?;
        let rr = repetition_ratio(output, w.n);
        let breakdown = RewardBreakdown::combine(
            entity_reward(&report, w),
            self.scorer.score(output, None),
            format_reward(output, &self.markers),
            repetition_penalty(output, w.n, w.mpv),
            w,
        );
        Ok(Scored {
            breakdown,
            report,
            repetition_ratio: rr,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn toy_gazetteer(tang_context: &str) -> Gazetteer {
        Gazetteer::new(vec![
            GazetteerEntry::new("Tang", ["Cheng Tang"])
                .with_context([tang_context])
                .relevant_to(["who-founded-shang"]),
            GazetteerEntry::new("Jie", ["Xia Jie"]).relevant_to(["last-king-of-xia"]),
            GazetteerEntry::new("Wu Ding", ["Wu Ding"]).relevant_to(["shang-revival"]),
        ])
        .unwrap()
    }

    #[test]
    fn no_aliases_no_matches() {
        let g = toy_gazetteer("Shang");
        let r =
            match_entities(&tokenize("the founder was a king"), "who-founded-shang", &g).unwrap();
        assert_eq!((r.ce, r.ie), (0, 0));
        assert_eq!(r.expected, vec![0]);
    }

    #[test]
    fn relevant_alias_with_context_is_correct() {
        let g = toy_gazetteer("Shang");
        let out = tokenize("Tang founded the Shang dynasty");
        let r = match_entities(&out, "who-founded-shang", &g).unwrap();
        assert_eq!((r.ce, r.ie), (1, 0));
        assert_eq!(r.correct[0].span, (0, 1));
    }

    #[test]
    fn missing_required_context_is_incorrect() {
        let g = toy_gazetteer("Xia");
        let out = tokenize("Tang founded the Shang dynasty");
        let r = match_entities(&out, "who-founded-shang", &g).unwrap();
        assert_eq!((r.ce, r.ie), (0, 1));
        assert_eq!(r.incorrect[0].surface, "Tang");
    }

    #[test]
    fn irrelevant_entity_is_incorrect() {
        let g = toy_gazetteer("Shang");
        let r =
            match_entities(&tokenize("Xia Jie founded Shang"), "who-founded-shang", &g).unwrap();
        assert_eq!((r.ce, r.ie), (0, 1));
        assert_eq!(r.incorrect[0].surface, "Xia Jie");
    }

    #[test]
    fn unknown_query_is_an_error() {
        let g = toy_gazetteer("Shang");
        assert!(matches!(
            match_entities(&tokenize("Tang"), "nope", &g),
            Err(Error::UnknownQuery(_))
        ));
    }

    #[test]
    fn entity_reward_arithmetic() {
        let report = |ce, ie| EntityMatchReport {
            ce,
            ie,
            ..Default::default()
        };
        let w = RewardWeights::default();
        assert_eq!(entity_reward(&report(0, 0), &w), 0.0);
        assert_eq!(entity_reward(&report(3, 1), &w), 2.0);
        let w = RewardWeights {
            w_c: 0.5,
            w_i: 2.0,
            ..Default::default()
        };
        assert_eq!(entity_reward(&report(2, 2), &w), -3.0);
    }

    #[test]
    fn format_reward_cases() {
        let m = MarkerPair::default();
        let ok = tokenize("<|begin_of_thought|> x . <|end_of_thought|> answer");
        assert_eq!(format_reward(&ok, &m), 1.0);
        assert_eq!(format_reward(&tokenize("just an answer"), &m), 0.0);
        assert_eq!(format_reward(&tokenize("<|begin_of_thought|> x"), &m), 0.0);
        let spam = tokenize("<|begin_of_thought|><|begin_of_thought|> x <|end_of_thought|>");
        assert_eq!(format_reward(&spam, &m), 0.0);
    }

    #[test]
    fn repetition_penalty_counts() {
        assert_eq!(repetition_penalty(&["a", "b", "c", "d"], 2, -1.0), 0.0);
        let abab = ["a", "b", "a", "b", "a", "b"];
        assert!((repetition_penalty(&abab, 2, -1.0) - (-0.6)).abs() < 1e-15);
        let same = ["x"; 10];
        assert_eq!(repetition_penalty(&same, 3, -1.0), -0.875);
        assert_eq!(repetition_penalty(&["a", "b"], 3, -1.0), 0.0);
        let empty: [&str; 0] = [];
        assert_eq!(repetition_penalty(&empty, 1, -1.0), 0.0);
    }

    #[test]
    fn weighted_sum() {
        let w = RewardWeights::default();
        let b = RewardBreakdown::combine(2.0, 0.5, 1.0, -0.6, &w);
        assert!((b.r_final - 0.98).abs() < 1e-12);
        assert_eq!(
            RewardBreakdown::combine(0.0, 0.0, 0.0, 0.0, &w).r_final,
            0.0
        );
    }

    #[test]
    fn invalid_weight_sum_is_rejected() {
        let w = RewardWeights {
            w1: 0.5,
            w2: 0.5,
            w3: 0.5,
            w4: 0.5,
            ..Default::default()
        };
        let g = toy_gazetteer("Shang");
        let err = final_reward(
            &tokenize("Tang"),
            "who-founded-shang",
            &g,
            &w,
            &MarkerPair::default(),
            &OverlapCoherence::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidWeights(_)));
        assert!(err.to_string().contains("w1 + w2 + w3 + w4"));
    }

    #[test]
    fn other_weight_invariants() {
        let bad = [
            RewardWeights {
                epsilon: 1.0,
                ..Default::default()
            },
            RewardWeights {
                mpv: 0.5,
                ..Default::default()
            },
            RewardWeights {
                n: 0,
                ..Default::default()
            },
            RewardWeights {
                w_i: -1.0,
                ..Default::default()
            },
            RewardWeights {
                beta: f64::NAN,
                ..Default::default()
            },
        ];
        for w in bad {
            assert!(w.validate().is_err(), "{w:?}");
        }
        let ablated = RewardWeights::default().without_entity().unwrap();
        ablated.validate().unwrap();
        assert_eq!(ablated.w1, 0.0);
    }

    #[test]
    fn final_reward_matches_components() {
        let g = toy_gazetteer("Shang");
        let out = tokenize(
            "<|begin_of_thought|> Tang ruled Shang . Shang rose . <|end_of_thought|> Tang",
        );
        let w = RewardWeights::default();
        let b = final_reward(
            &out,
            "who-founded-shang",
            &g,
            &w,
            &MarkerPair::default(),
            &OverlapCoherence::default(),
        )
        .unwrap();
        assert_eq!(b.r_ent, 2.0);
        assert_eq!(b.r_log, 1.0);
        assert_eq!(b.r_fmt, 1.0);
        assert_eq!(b.r_rep, 0.0);
        assert_eq!(b.r_final, 0.4 * 2.0 + 0.2 + 0.2);

        let model = RewardModel::new(g, w).unwrap();
        assert_eq!(model.score(&out, "who-founded-shang").unwrap().breakdown, b);
    }
}
