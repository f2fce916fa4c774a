//! Offline evaluation and judge-scorecard aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{kl_term, rollout, task_rng, Prompt};
use crate::policy::PolicyParams;
use crate::rewards::{match_entities, Gazetteer, RewardModel, Scored};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub mean_r_final: f64,
    pub mean_r_ent: f64,
    pub mean_r_log: f64,
    pub mean_r_fmt: f64,
    pub mean_r_rep: f64,
    pub kl: f64,
    pub entity_precision: f64,
    pub format_compliance: f64,
    pub mean_repetition_ratio: f64,
}

impl MetricsRecord {
    pub fn from_scored(iteration: usize, scored: &[Scored], kl: f64) -> Self {
        let n = scored.len().max(1) as f64;
        let mean = |f: &dyn Fn(&Scored) -> f64| scored.iter().map(f).sum::<f64>() / n;
        let (ce, ie) = scored
            .iter()
            .fold((0, 0), |(c, i), s| (c + s.report.ce, i + s.report.ie));
        Self {
            iteration,
            mean_r_final: mean(&|s| s.breakdown.r_final),
            mean_r_ent: mean(&|s| s.breakdown.r_ent),
            mean_r_log: mean(&|s| s.breakdown.r_log),
            mean_r_fmt: mean(&|s| s.breakdown.r_fmt),
            mean_r_rep: mean(&|s| s.breakdown.r_rep),
            kl,
            entity_precision: precision(ce, ie),
            format_compliance: mean(&|s| if s.breakdown.r_fmt == 1.0 { 1.0 } else { 0.0 }),
            mean_repetition_ratio: mean(&|s| s.repetition_ratio),
        }
    }
}

/// `CE / (CE + IE)`, or 1.0 when nothing was matched.
pub fn precision(ce: usize, ie: usize) -> f64 {
    if ce + ie == 0 {
        1.0
    } else {
        ce as f64 / (ce + ie) as f64
    }
}

/// Pooled entity precision over `(output tokens, query id)` pairs.
pub fn entity_precision<S: AsRef<str>>(
    outputs: &[(Vec<S>, String)],
    gazetteer: &Gazetteer,
) -> Result<f64> {
    let mut ce = 0;
    let mut ie = 0;
    for (out, q) in outputs {
        let r = match_entities(out, q, gazetteer)?;
        ce += r.ce;
        ie += r.ie;
    }
    Ok(precision(ce, ie))
}

/// Samples `samples` outputs per prompt and summarizes them.
///
/// Sampling streams are indexed by prompt position, so the result depends
/// only on the parameters, the prompts and `seed`. The KL field is measured
/// against `reference` when given and is 0 otherwise.
pub fn evaluate_policy(
    params: &PolicyParams,
    prompts: &[Prompt],
    reward: &RewardModel,
    samples: usize,
    max_len: usize,
    seed: u64,
    reference: Option<&PolicyParams>,
) -> Result<MetricsRecord> {
    if prompts.is_empty() {
        return Err(Error::EmptyInput("no evaluation prompts".into()));
    }
    let samples = samples.max(2);
    let mut scored = Vec::with_capacity(prompts.len() * samples);
    let mut kl = 0.0;
    for (i, p) in prompts.iter().enumerate() {
        let mut rng = task_rng(seed, i as u64);
        let (group, s) = rollout(params, p, reward, samples, max_len, &mut rng)?;
        if let Some(r) = reference {
            kl += kl_term(params, r, &group)?;
        }
        scored.extend(s);
    }
    Ok(MetricsRecord::from_scored(
        0,
        &scored,
        kl / prompts.len() as f64,
    ))
}

/// The five judged dimensions.
pub const DIMENSIONS: [&str; 5] = [
    "think",
    "answer",
    "historical_accuracy",
    "logical_reasoning",
    "problem_solving",
];

/// Scores one judge gave one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeScorecard {
    pub model_id: String,
    pub think: f64,
    pub answer: f64,
    pub historical_accuracy: f64,
    pub logical_reasoning: f64,
    pub problem_solving: f64,
    pub judge_id: String,
}

impl JudgeScorecard {
    pub fn scores(&self) -> [f64; 5] {
        [
            self.think,
            self.answer,
            self.historical_accuracy,
            self.logical_reasoning,
            self.problem_solving,
        ]
    }

    pub fn validate(&self, scale: ScoreScale) -> Result<()> {
        for (dim, v) in DIMENSIONS.iter().zip(self.scores()) {
            if !(v.is_finite() && v >= scale.min && v <= scale.max) {
                return Err(Error::InvalidConfig(format!(
                    "scorecard {}/{}: {dim} = {v} outside [{}, {}]",
                    self.model_id, self.judge_id, scale.min, scale.max
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreScale {
    pub min: f64,
    pub max: f64,
}

impl Default for ScoreScale {
    fn default() -> Self {
        Self {
            min: 0.0,
            max: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionStats {
    pub mean: f64,
    pub std: f64,
}

/// Per-model summary across judges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAggregate {
    pub model_id: String,
    pub cards: usize,
    pub think: DimensionStats,
    pub answer: DimensionStats,
    pub historical_accuracy: DimensionStats,
    pub logical_reasoning: DimensionStats,
    pub problem_solving: DimensionStats,
}

impl ModelAggregate {
    pub fn stats(&self) -> [DimensionStats; 5] {
        [
            self.think,
            self.answer,
            self.historical_accuracy,
            self.logical_reasoning,
            self.problem_solving,
        ]
    }
}

/// Means and population standard deviations per model and dimension,
/// rows ordered by model id.
pub fn aggregate_scorecards(
    cards: &[JudgeScorecard],
    scale: ScoreScale,
) -> Result<Vec<ModelAggregate>> {
    if cards.is_empty() {
        return Err(Error::EmptyInput("no scorecards".into()));
    }
    let mut by_model: BTreeMap<&str, Vec<[f64; 5]>> = BTreeMap::new();
    for c in cards {
        c.validate(scale)?;
        by_model.entry(&c.model_id).or_default().push(c.scores());
    }
    Ok(by_model
        .into_iter()
        .map(|(model, rows)| {
            let n = rows.len() as f64;
            let stat = |d: usize| {
                let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
                let var = rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
                DimensionStats {
                    mean,
                    std: var.sqrt(),
                }
            };
            ModelAggregate {
                model_id: model.to_string(),
                cards: rows.len(),
                think: stat(0),
                answer: stat(1),
                historical_accuracy: stat(2),
                logical_reasoning: stat(3),
                problem_solving: stat(4),
            }
        })
        .collect())
}

/// Aligned plain-text rendering of an aggregate table.
pub fn render_table(rows: &[ModelAggregate]) -> String {
    let mut header = vec!["model".to_string(), "cards".to_string()];
    header.extend(DIMENSIONS.iter().map(|d| d.to_string()));
    let mut lines = vec![header];
    for r in rows {
        let mut line = vec![r.model_id.clone(), r.cards.to_string()];
        line.extend(
            r.stats()
                .iter()
                .map(|s| format!("{:.3}±{:.3}", s.mean, s.std)),
        );
        lines.push(line);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| {
            lines
                .iter()
                .map(|l| l[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}
