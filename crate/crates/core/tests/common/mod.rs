//! Independent oracles and random instance builders shared by the
//! integration tests.
#![allow(dead_code)]

use factrl::grpo::{objective, RolloutGroup, TrainConfig};
use factrl::policy::{PolicyParams, TokenId, Vocabulary};
use factrl::rewards::{Gazetteer, GazetteerEntry, RewardBreakdown};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(x: &[f64], h: f64, mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Floor applied to the denominator of the relative error so coordinates
/// whose true derivative is zero are judged on absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// max_i |a_i − b_i| / max(|a_i|, |b_i|, floor)
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(REL_ERR_FLOOR))
        .fold(0.0, f64::max)
}

pub fn tiny_vocab() -> Vocabulary {
    Vocabulary::with_specials(["a"]).unwrap()
}

pub fn random_params<R: Rng>(vocab: &Vocabulary, rng: &mut R, scale: f64) -> PolicyParams {
    let n = vocab.len().pow(3);
    let logits = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    PolicyParams::from_logits(vocab.clone(), logits).unwrap()
}

pub fn random_tokens<R: Rng>(v: usize, len: usize, rng: &mut R) -> Vec<TokenId> {
    (0..len)
        .map(|_| TokenId(rng.random_range(0..v as u32)))
        .collect()
}

fn breakdown(r: f64) -> RewardBreakdown {
    RewardBreakdown {
        r_ent: r,
        r_log: 0.0,
        r_fmt: 0.0,
        r_rep: 0.0,
        r_final: r,
    }
}

/// A random group whose old log-probs are the current ones shifted by
/// noise, so ratios spread around 1. Ratios within `kink_margin` of a clip
/// edge are resampled, since the objective is not differentiable there.
pub fn random_group<R: Rng>(
    params: &PolicyParams,
    g: usize,
    max_len: usize,
    eps: f64,
    kink_margin: f64,
    rng: &mut R,
) -> RolloutGroup {
    let v = params.vocab().len();
    let prompt = random_tokens(v, rng.random_range(0..3), rng);
    let outputs: Vec<Vec<TokenId>> = (0..g)
        .map(|_| random_tokens(v, rng.random_range(1..=max_len), rng))
        .collect();
    let old = outputs
        .iter()
        .map(|o| {
            let cur = params.sequence_logprob(&prompt, o).unwrap();
            cur.iter()
                .map(|lp| loop {
                    let shift: f64 = rng.random_range(-0.5..0.5);
                    let r = shift.exp();
                    if (r - (1.0 + eps)).abs() > kink_margin
                        && (r - (1.0 - eps)).abs() > kink_margin
                    {
                        break lp - shift;
                    }
                })
                .collect()
        })
        .collect();
    let breakdowns = (0..g)
        .map(|_| breakdown(rng.random_range(-2.0..2.0)))
        .collect();
    RolloutGroup::new(prompt, "q".into(), outputs, old, breakdowns).unwrap()
}

pub fn objective_at(
    group: &RolloutGroup,
    base: &PolicyParams,
    logits: &[f64],
    reference: &PolicyParams,
    cfg: &TrainConfig,
) -> f64 {
    let p = PolicyParams::from_logits(base.vocab().clone(), logits.to_vec()).unwrap();
    objective(group, &p, reference, cfg).unwrap()
}

/// Every non-overlapping alias occurrence found by exhaustive enumeration.
///
/// All (position, alias) pairs that match are listed first; occurrences
/// are then chosen by earliest start, longest alias, earliest entry, and
/// anything overlapping an already chosen span is dropped.
pub fn brute_force_matches(
    output: &[String],
    query_id: &str,
    entries: &[GazetteerEntry],
) -> (usize, usize) {
    let lower: Vec<String> = output.iter().map(|t| t.to_lowercase()).collect();
    let split = |s: &str| -> Vec<String> {
        factrl::text::tokenize(s)
            .iter()
            .map(|t| t.to_lowercase())
            .collect()
    };
    let mut occ: Vec<(usize, usize, usize)> = Vec::new(); // (start, len, entry)
    for (ei, e) in entries.iter().enumerate() {
        for alias in &e.aliases {
            let a = split(alias);
            for start in 0..lower.len() {
                if start + a.len() <= lower.len() && lower[start..start + a.len()] == a[..] {
                    occ.push((start, a.len(), ei));
                }
            }
        }
    }
    occ.sort_by(|x, y| x.0.cmp(&y.0).then(y.1.cmp(&x.1)).then(x.2.cmp(&y.2)));
    let mut chosen: Vec<(usize, usize, usize)> = Vec::new();
    let mut covered_until = 0;
    for o in occ {
        if o.0 >= covered_until {
            covered_until = o.0 + o.1;
            chosen.push(o);
        }
    }
    let contains =
        |needle: &[String]| !needle.is_empty() && lower.windows(needle.len()).any(|w| w == needle);
    let mut ce = 0;
    let mut ie = 0;
    for (_, _, ei) in chosen {
        let e = &entries[ei];
        let context_ok =
            e.required_context.is_empty() || e.required_context.iter().any(|t| contains(&split(t)));
        if e.relevant_queries.contains(query_id) && context_ok {
            ce += 1;
        } else {
            ie += 1;
        }
    }
    (ce, ie)
}

/// Random gazetteer over a small word pool; aliases have one or two words.
pub fn random_gazetteer<R: Rng>(
    pool: &[&str],
    n_entries: usize,
    queries: &[&str],
    rng: &mut R,
) -> Gazetteer {
    let word = |rng: &mut R| pool[rng.random_range(0..pool.len())].to_string();
    let mut entries: Vec<GazetteerEntry> = (0..n_entries)
        .map(|_| {
            let canonical = if rng.random_bool(0.3) {
                format!("{} {}", word(rng), word(rng))
            } else {
                word(rng)
            };
            let mut e = GazetteerEntry::new(&canonical, Vec::<String>::new());
            if rng.random_bool(0.5) {
                e.aliases.insert(word(rng));
            }
            if rng.random_bool(0.5) {
                e.required_context.insert(word(rng));
            }
            for q in queries {
                if rng.random_bool(0.4) {
                    e.relevant_queries.insert(q.to_string());
                }
            }
            e
        })
        .collect();
    // every query must be known to the gazetteer
    for (i, q) in queries.iter().enumerate() {
        if !entries.iter().any(|e| e.relevant_queries.contains(*q)) {
            entries[i % n_entries]
                .relevant_queries
                .insert(q.to_string());
        }
    }
    Gazetteer::new(entries).unwrap()
}
