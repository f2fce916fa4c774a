//! Group-relative policy optimization.
//!
//! For each prompt, `G` outputs are sampled from the rollout policy
//! `π_old`, scored, and given group-standardized advantages. The surrogate
//!
//! ```text
//! X = Σ_i Σ_t M(r_{i,t}) · Â_{i,t} / (G · Σ_i |o_i|),   M(r) = min(r, clip(r, 1−ε, 1+ε))
//! ```
//!
//! is maximized together with a KL penalty toward a frozen reference
//! policy: `J = X − β · KL`. A PPO-style per-token term and per-output
//! length normalization are available for comparison.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::MetricsRecord;
use crate::policy::{log_softmax_at, softmax, PolicyParams, TokenId};
use crate::rewards::{Gazetteer, RewardBreakdown, RewardModel, RewardWeights, Scored};

/// Guard added to the group standard deviation.
pub const ADVANTAGE_STD_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurrogateMode {
    /// `M(r) · Â`.
    PaperLiteral,
    /// `min(r · Â, clip(r, 1−ε, 1+ε) · Â)`.
    #[serde(rename = "PPOStyle")]
    PpoStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormalizationMode {
    /// Divide the summed token terms by `G · Σ_i |o_i|`.
    PaperGlobal,
    /// Average tokens within each output, then average outputs.
    PerOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(rename = "G")]
    pub g: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub prompts_per_iter: usize,
    pub max_len: usize,
    pub seed: u64,
    pub surrogate_mode: SurrogateMode,
    pub normalization_mode: NormalizationMode,
    /// Worker threads for rollouts; 1 runs everything on the caller's thread.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            g: 8,
            epsilon: 0.2,
            beta: 0.04,
            learning_rate: 0.5,
            iterations: 200,
            prompts_per_iter: 4,
            max_len: 32,
            seed: 0,
            surrogate_mode: SurrogateMode::PaperLiteral,
            normalization_mode: NormalizationMode::PaperGlobal,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.g < 2 {
            return bad(format!("G must be >= 2 (got {})", self.g));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1) (got {})", self.epsilon));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta must be finite and >= 0 (got {})", self.beta));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning_rate must be finite and >= 0 (got {})",
                self.learning_rate
            ));
        }
        if self.iterations == 0 || self.prompts_per_iter == 0 || self.max_len == 0 {
            return bad("iterations, prompts_per_iter and max_len must be >= 1".into());
        }
        if self.threads == 0 {
            return bad("threads must be >= 1".into());
        }
        Ok(())
    }
}

/// `G` outputs sampled for one prompt, with everything the objective needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub prompt: Vec<TokenId>,
    pub query_id: String,
    pub outputs: Vec<Vec<TokenId>>,
    pub old_logprobs: Vec<Vec<f64>>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub advantages: Vec<Vec<f64>>,
}

impl RolloutGroup {
    /// Builds a group and broadcasts each output's standardized final reward
    /// over its tokens.
    pub fn new(
        prompt: Vec<TokenId>,
        query_id: String,
        outputs: Vec<Vec<TokenId>>,
        old_logprobs: Vec<Vec<f64>>,
        breakdowns: Vec<RewardBreakdown>,
    ) -> Result<Self> {
        if breakdowns.len() != outputs.len() {
            return Err(Error::LengthMismatch(format!(
                "{} outputs but {} reward breakdowns",
                outputs.len(),
                breakdowns.len()
            )));
        }
        let rewards: Vec<f64> = breakdowns.iter().map(|b| b.r_final).collect();
        let scalar = compute_advantages(&rewards);
        let advantages = outputs
            .iter()
            .zip(&scalar)
            .map(|(o, &a)| vec![a; o.len()])
            .collect();
        let group = Self {
            prompt,
            query_id,
            outputs,
            old_logprobs,
            breakdowns,
            advantages,
        };
        group.validate()?;
        Ok(group)
    }

    pub fn size(&self) -> usize {
        self.outputs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.outputs.len();
        if g < 2 {
            return Err(Error::InvalidGroup(format!("G must be >= 2 (got {g})")));
        }
        if self.old_logprobs.len() != g || self.advantages.len() != g {
            return Err(Error::LengthMismatch(
                "outputs, old_logprobs and advantages differ in count".into(),
            ));
        }
        for (i, o) in self.outputs.iter().enumerate() {
            if o.is_empty() {
                return Err(Error::InvalidGroup(format!("output {i} is empty")));
            }
            if self.old_logprobs[i].len() != o.len() {
                return Err(Error::LengthMismatch(format!(
                    "output {i} has {} tokens but {} old log-probs",
                    o.len(),
                    self.old_logprobs[i].len()
                )));
            }
            if self.advantages[i].len() != o.len() {
                return Err(Error::LengthMismatch(format!(
                    "output {i} has {} tokens but {} advantages",
                    o.len(),
                    self.advantages[i].len()
                )));
            }
        }
        Ok(())
    }

    fn total_tokens(&self) -> usize {
        self.outputs.iter().map(Vec::len).sum()
    }
}

/// `(R_i − mean) / (std + 1e-8)` with the population standard deviation;
/// all zeros when the rewards are identical.
pub fn compute_advantages(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    // identical rewards have zero spread; rounding in the mean must not leak through
    if rewards.iter().all(|&r| r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    rewards
        .iter()
        .map(|r| (r - mean) / (std + ADVANTAGE_STD_GUARD))
        .collect()
}

/// `M(r) = min(r, clip(r, 1−ε, 1+ε))`: identity up to `1+ε`, constant above.
pub fn clip_ratio(r: f64, epsilon: f64) -> f64 {
    r.min(r.clamp(1.0 - epsilon, 1.0 + epsilon))
}

fn token_term(mode: SurrogateMode, r: f64, adv: f64, eps: f64) -> f64 {
    match mode {
        SurrogateMode::PaperLiteral => clip_ratio(r, eps) * adv,
        SurrogateMode::PpoStyle => (r * adv).min(r.clamp(1.0 - eps, 1.0 + eps) * adv),
    }
}

/// `∂ term / ∂ r`, taking the clipped branch at the band edges.
fn token_term_dr(mode: SurrogateMode, r: f64, adv: f64, eps: f64) -> f64 {
    let unclipped = match mode {
        SurrogateMode::PaperLiteral => r < 1.0 + eps,
        SurrogateMode::PpoStyle => {
            if adv >= 0.0 {
                r < 1.0 + eps
            } else {
                r > 1.0 - eps
            }
        }
    };
    if unclipped {
        adv
    } else {
        0.0
    }
}

fn normalizer(mode: NormalizationMode, group: &RolloutGroup, i: usize) -> f64 {
    let g = group.size() as f64;
    match mode {
        NormalizationMode::PaperGlobal => g * group.total_tokens() as f64,
        NormalizationMode::PerOutput => g * group.outputs[i].len() as f64,
    }
}

fn current_logprobs(group: &RolloutGroup, params: &PolicyParams) -> Result<Vec<Vec<f64>>> {
    group
        .outputs
        .iter()
        .map(|o| params.sequence_logprob(&group.prompt, o))
        .collect()
}

/// The clipped surrogate `X` under the configured term and normalization.
pub fn surrogate(group: &RolloutGroup, params: &PolicyParams, config: &TrainConfig) -> Result<f64> {
    group.validate()?;
    let current = current_logprobs(group, params)?;
    let mut total = 0.0;
    for (i, cur) in current.iter().enumerate() {
        let norm = normalizer(config.normalization_mode, group, i);
        let mut sum = 0.0;
        for ((c, old), adv) in cur
            .iter()
            .zip(&group.old_logprobs[i])
            .zip(&group.advantages[i])
        {
            let r = (c - old).exp();
            sum += token_term(config.surrogate_mode, r, *adv, config.epsilon);
        }
        total += sum / norm;
    }
    Ok(total)
}

/// Mean over sampled tokens of `ρ − ln ρ − 1`, `ρ = π_ref / π_θ`.
pub fn kl_term(
    params: &PolicyParams,
    reference: &PolicyParams,
    group: &RolloutGroup,
) -> Result<f64> {
    if params.vocab() != reference.vocab() {
        return Err(Error::VocabularyMismatch);
    }
    group.validate()?;
    let mut sum = 0.0;
    for o in &group.outputs {
        let cur = params.sequence_logprob(&group.prompt, o)?;
        let refp = reference.sequence_logprob(&group.prompt, o)?;
        for (c, r) in cur.iter().zip(&refp) {
            let log_rho = r - c;
            sum += log_rho.exp() - log_rho - 1.0;
        }
    }
    Ok(sum / group.total_tokens() as f64)
}

/// `J = X − β · KL`, the quantity the update step ascends.
pub fn objective(
    group: &RolloutGroup,
    params: &PolicyParams,
    reference: &PolicyParams,
    config: &TrainConfig,
) -> Result<f64> {
    let x = surrogate(group, params, config)?;
    if config.beta == 0.0 {
        return Ok(x);
    }
    Ok(x - config.beta * kl_term(params, reference, group)?)
}

/// Mean of [`objective`] over several groups.
pub fn batch_objective(
    groups: &[RolloutGroup],
    params: &PolicyParams,
    reference: &PolicyParams,
    config: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for g in groups {
        total += objective(g, params, reference, config)?;
    }
    Ok(total / groups.len() as f64)
}

/// Adds `scale · ∂J/∂logits` for one group into a dense gradient buffer.
///
/// Every token contributes `w · (onehot(o_t) − softmax(row))` to the row of
/// its context, where `w = ∂J/∂ log π_θ(o_t)`.
pub fn accumulate_objective_gradient(
    group: &RolloutGroup,
    params: &PolicyParams,
    reference: &PolicyParams,
    config: &TrainConfig,
    scale: f64,
    grad: &mut [f64],
) -> Result<()> {
    if params.vocab() != reference.vocab() {
        return Err(Error::VocabularyMismatch);
    }
    if grad.len() != params.logits().len() {
        return Err(Error::LengthMismatch("gradient buffer size".into()));
    }
    group.validate()?;
    let n_tokens = group.total_tokens() as f64;
    for (i, output) in group.outputs.iter().enumerate() {
        let norm = normalizer(config.normalization_mode, group, i);
        let contexts = params.contexts(&group.prompt, output)?;
        for (t, (&(a, b), &tok)) in contexts.iter().zip(output).enumerate() {
            let row = params.row(a, b);
            let logp = log_softmax_at(row, tok.index());
            let r = (logp - group.old_logprobs[i][t]).exp();
            let adv = group.advantages[i][t];
            // d(r·x)/dlogp = r·dx/dr
            let mut w = r * token_term_dr(config.surrogate_mode, r, adv, config.epsilon) / norm;
            if config.beta != 0.0 {
                let ref_logp = log_softmax_at(reference.row(a, b), tok.index());
                let rho = (ref_logp - logp).exp();
                w -= config.beta * (1.0 - rho) / n_tokens;
            }
            if w == 0.0 {
                continue;
            }
            let w = w * scale;
            let probs = softmax(row);
            let off = params.row_offset(a, b);
            for (k, p) in probs.iter().enumerate() {
                grad[off + k] -= w * p;
            }
            grad[off + tok.index()] += w;
        }
    }
    Ok(())
}

/// Dense gradient of [`batch_objective`] with respect to the logit table.
pub fn objective_gradient(
    groups: &[RolloutGroup],
    params: &PolicyParams,
    reference: &PolicyParams,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.logits().len()];
    let scale = 1.0 / groups.len() as f64;
    for g in groups {
        accumulate_objective_gradient(g, params, reference, config, scale, &mut grad)?;
    }
    Ok(grad)
}

/// A prompt encoded against the policy vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub tokens: Vec<TokenId>,
    pub query_id: String,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<MetricsRecord>,
}

/// Deterministic generator for one rollout task.
pub fn task_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Output tokens as strings, without the trailing end-of-sequence token.
pub fn scored_tokens(params: &PolicyParams, output: &[TokenId]) -> Result<Vec<String>> {
    let end = match output.last() {
        Some(&t) if t == params.vocab().eos() => output.len() - 1,
        _ => output.len(),
    };
    params.vocab().decode(&output[..end])
}

/// Samples and scores one group from `params`.
pub fn rollout(
    params: &PolicyParams,
    prompt: &Prompt,
    reward: &RewardModel,
    g: usize,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(RolloutGroup, Vec<Scored>)> {
    let mut outputs = Vec::with_capacity(g);
    let mut logprobs = Vec::with_capacity(g);
    let mut scored = Vec::with_capacity(g);
    for _ in 0..g {
        let s = params.sample_sequence(&prompt.tokens, max_len, rng)?;
        scored.push(reward.score(&scored_tokens(params, &s.tokens)?, &prompt.query_id)?);
        outputs.push(s.tokens);
        logprobs.push(s.logprobs);
    }
    let breakdowns = scored.iter().map(|s| s.breakdown).collect();
    let group = RolloutGroup::new(
        prompt.tokens.clone(),
        prompt.query_id.clone(),
        outputs,
        logprobs,
        breakdowns,
    )?;
    Ok((group, scored))
}

/// Runs GRPO from `init`, which also serves as the frozen KL reference.
pub fn train(
    config: &TrainConfig,
    prompts: &[Prompt],
    gazetteer: &Gazetteer,
    weights: &RewardWeights,
    init: PolicyParams,
) -> Result<TrainOutcome> {
    let reward = RewardModel::new(gazetteer.clone(), weights.clone())?;
    train_with(config, prompts, &reward, init)
}

/// [`train`] with a caller-supplied reward model.
pub fn train_with(
    config: &TrainConfig,
    prompts: &[Prompt],
    reward: &RewardModel,
    init: PolicyParams,
) -> Result<TrainOutcome> {
    config.validate()?;
    reward.weights.validate()?;
    if reward.weights.epsilon != config.epsilon || reward.weights.beta != config.beta {
        return Err(Error::InvalidConfig(
            "epsilon and beta differ between the train config and the reward weights".into(),
        ));
    }
    if prompts.is_empty() {
        return Err(Error::EmptyInput("no training prompts".into()));
    }
    for p in prompts {
        if !reward.gazetteer.knows_query(&p.query_id) {
            return Err(Error::UnknownQuery(p.query_id.clone()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;

    let reference = init.clone();
    let mut params = init;
    let mut metrics = Vec::with_capacity(config.iterations);
    let ppi = config.prompts_per_iter;

    for iteration in 0..config.iterations {
        let slots: Vec<usize> = (0..ppi).collect();
        let task = |slot: &usize| {
            let prompt = &prompts[(iteration * ppi + slot) % prompts.len()];
            let mut rng = task_rng(config.seed, (iteration * ppi + slot) as u64);
            rollout(&params, prompt, reward, config.g, config.max_len, &mut rng)
        };
        let rolled: Vec<Result<(RolloutGroup, Vec<Scored>)>> = if config.threads == 1 {
            slots.iter().map(task).collect()
        } else {
            pool.install(|| slots.par_iter().map(task).collect())
        };
        let mut groups = Vec::with_capacity(ppi);
        let mut scored = Vec::with_capacity(ppi * config.g);
        for r in rolled {
            let (g, s) = r?;
            groups.push(g);
            scored.extend(s);
        }

        let mut kl = 0.0;
        for g in &groups {
            kl += kl_term(&params, &reference, g)?;
        }
        kl /= groups.len() as f64;
        metrics.push(MetricsRecord::from_scored(iteration, &scored, kl));

        let grad = objective_gradient(&groups, &params, &reference, config)?;
        if grad.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { iteration });
        }
        if config.learning_rate != 0.0 {
            for (p, g) in params.logits_mut().iter_mut().zip(&grad) {
                *p += config.learning_rate * g;
            }
            if params.logits().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { iteration });
            }
        }
    }
    Ok(TrainOutcome { params, metrics })
}
