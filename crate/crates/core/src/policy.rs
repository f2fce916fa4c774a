//! Order-2 tabular autoregressive policy.
//!
//! The next-token distribution depends only on the previous two tokens:
//! `π(next | prev2, prev1) = softmax(logits[prev2][prev1])`. Sequences are
//! left-padded with two pad tokens so every position has a full context.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{BEGIN_OF_THOUGHT, END_OF_THOUGHT};

pub const PAD: &str = "<pad>";
pub const EOS: &str = "<eos>";

/// Largest vocabulary accepted; the logit table has `V³` entries.
pub const MAX_VOCAB: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Bijective token ↔ id mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
    pad: TokenId,
    eos: TokenId,
}

impl Vocabulary {
    /// Builds a vocabulary from distinct tokens. The pad, end-of-sequence
    /// and both thought markers must be present.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::InvalidVocabulary("need at least two tokens".into()));
        }
        if tokens.len() > MAX_VOCAB {
            return Err(Error::InvalidVocabulary(format!(
                "{} tokens exceeds the limit of {MAX_VOCAB}",
                tokens.len()
            )));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), TokenId(i as u32)).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate token `{t}`")));
            }
        }
        for required in [PAD, EOS, BEGIN_OF_THOUGHT, END_OF_THOUGHT] {
            if !ids.contains_key(required) {
                return Err(Error::InvalidVocabulary(format!("missing `{required}`")));
            }
        }
        Ok(Self {
            pad: ids[PAD],
            eos: ids[EOS],
            tokens,
            ids,
        })
    }

    /// Special tokens first, then `words` in first-seen order, deduplicated.
    pub fn with_specials<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = [PAD, EOS, BEGIN_OF_THOUGHT, END_OF_THOUGHT]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for w in words {
            let w = w.into();
            if !tokens.contains(&w) {
                tokens.push(w);
            }
        }
        Self::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad(&self) -> TokenId {
        self.pad
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn id(&self, token: &str) -> Result<TokenId> {
        self.ids
            .get(token)
            .copied()
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id.index())
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownToken(format!("#{}", id.0)))
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<TokenId>> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&i| self.token(i).map(str::to_string))
            .collect()
    }

    fn check(&self, id: TokenId) -> Result<()> {
        self.token(id).map(|_| ())
    }
}

/// The logit table of a policy together with its vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    vocab: Vocabulary,
    logits: Vec<f64>,
}

/// A sampled continuation with the log-probability of each sampled token.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tokens: Vec<TokenId>,
    pub logprobs: Vec<f64>,
}

/// Gradient of one token's log-probability: nonzero only on the row of the
/// context it was generated in.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGradient {
    pub context: (TokenId, TokenId),
    pub row: Vec<f64>,
}

impl PolicyParams {
    /// All-zero logits: every context yields the uniform distribution.
    pub fn uniform(vocab: Vocabulary) -> Self {
        let v = vocab.len();
        Self {
            vocab,
            logits: vec![0.0; v * v * v],
        }
    }

    pub fn from_logits(vocab: Vocabulary, logits: Vec<f64>) -> Result<Self> {
        let v = vocab.len();
        if logits.len() != v * v * v {
            return Err(Error::LengthMismatch(format!(
                "logit table has {} entries, expected {}",
                logits.len(),
                v * v * v
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("logits must be finite".into()));
        }
        Ok(Self { vocab, logits })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Offset of the logit row for the context `(prev2, prev1)`.
    pub fn row_offset(&self, prev2: TokenId, prev1: TokenId) -> usize {
        let v = self.vocab.len();
        (prev2.index() * v + prev1.index()) * v
    }

    pub fn row(&self, prev2: TokenId, prev1: TokenId) -> &[f64] {
        let off = self.row_offset(prev2, prev1);
        &self.logits[off..off + self.vocab.len()]
    }

    pub fn row_mut(&mut self, prev2: TokenId, prev1: TokenId) -> &mut [f64] {
        let off = self.row_offset(prev2, prev1);
        let v = self.vocab.len();
        &mut self.logits[off..off + v]
    }

    pub fn next_distribution(&self, prev2: TokenId, prev1: TokenId) -> Result<Vec<f64>> {
        self.vocab.check(prev2)?;
        self.vocab.check(prev1)?;
        Ok(softmax(self.row(prev2, prev1)))
    }

    /// Contexts for each output position: `(prev2, prev1)` after padding.
    pub fn contexts(
        &self,
        prompt: &[TokenId],
        output: &[TokenId],
    ) -> Result<Vec<(TokenId, TokenId)>> {
        for &t in prompt.iter().chain(output) {
            self.vocab.check(t)?;
        }
        let pad = self.vocab.pad();
        let mut prev = (pad, pad);
        for &t in prompt {
            prev = (prev.1, t);
        }
        let mut out = Vec::with_capacity(output.len());
        for &t in output {
            out.push(prev);
            prev = (prev.1, t);
        }
        Ok(out)
    }

    /// Samples until end-of-sequence (included in the output) or `max_len` tokens.
    pub fn sample_sequence<R: Rng + ?Sized>(
        &self,
        prompt: &[TokenId],
        max_len: usize,
        rng: &mut R,
    ) -> Result<Sample> {
        for &t in prompt {
            self.vocab.check(t)?;
        }
        let mut prev = tail_context(self.vocab.pad(), prompt);
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        while tokens.len() < max_len {
            let row = self.row(prev.0, prev.1);
            let lsm = log_softmax(row);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = row.len() - 1;
            for (i, lp) in lsm.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let id = TokenId(pick as u32);
            tokens.push(id);
            logprobs.push(lsm[pick]);
            prev = (prev.1, id);
            if id == self.vocab.eos() {
                break;
            }
        }
        Ok(Sample { tokens, logprobs })
    }

    /// Teacher-forced `log π(o_t | prev2, prev1)` for every output position.
    pub fn sequence_logprob(&self, prompt: &[TokenId], output: &[TokenId]) -> Result<Vec<f64>> {
        let ctx = self.contexts(prompt, output)?;
        Ok(ctx
            .iter()
            .zip(output)
            .map(|(&(a, b), &o)| log_softmax_at(self.row(a, b), o.index()))
            .collect())
    }

    /// `∂ log π(o_t | ctx) / ∂ logits[ctx] = onehot(o_t) − softmax(logits[ctx])`.
    pub fn logprob_grad(
        &self,
        prompt: &[TokenId],
        output: &[TokenId],
        t: usize,
    ) -> Result<RowGradient> {
        if t >= output.len() {
            return Err(Error::InvalidStep {
                step: t,
                len: output.len(),
            });
        }
        let ctx = self.contexts(prompt, output)?[t];
        let mut row = softmax(self.row(ctx.0, ctx.1));
        for p in row.iter_mut() {
            *p = -*p;
        }
        row[output[t].index()] += 1.0;
        Ok(RowGradient { context: ctx, row })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.logits.len() * 8);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(self.vocab.len() as u32).to_le_bytes());
        for t in self.vocab.tokens() {
            buf.extend_from_slice(&(t.len() as u32).to_le_bytes());
            buf.extend_from_slice(t.as_bytes());
        }
        buf.extend_from_slice(&(self.logits.len() as u64).to_le_bytes());
        for x in &self.logits {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let v = r.u32()? as usize;
        let mut tokens = Vec::with_capacity(v);
        for _ in 0..v {
            let len = r.u32()? as usize;
            let s = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("token is not UTF-8".into()))?;
            tokens.push(s.to_string());
        }
        let vocab = Vocabulary::new(tokens)?;
        let n = r.u64()? as usize;
        if n != v * v * v {
            return Err(Error::Checkpoint(format!("shape header {n} != {v}^3")));
        }
        let mut logits = Vec::with_capacity(n);
        for _ in 0..n {
            logits.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Self::from_logits(vocab, logits)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

const CHECKPOINT_MAGIC: &[u8] = b"FRLPOL01";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn tail_context(pad: TokenId, prompt: &[TokenId]) -> (TokenId, TokenId) {
    match prompt {
        [] => (pad, pad),
        [a] => (pad, *a),
        [.., a, b] => (*a, *b),
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

pub fn log_softmax_at(row: &[f64], idx: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row[idx] - lse
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab(extra: &[&str]) -> Vocabulary {
        Vocabulary::with_specials(extra.iter().copied()).unwrap()
    }

    #[test]
    fn vocabulary_invariants() {
        assert!(Vocabulary::new(vec![PAD.into()]).is_err());
        assert!(Vocabulary::new(vec![PAD.into(), EOS.into(), PAD.into()]).is_err());
        assert!(Vocabulary::new(vec![PAD.into(), EOS.into()]).is_err());
        let v = vocab(&["a", "b", "a"]);
        assert_eq!(v.len(), 6);
        let ids = v.encode(&["a", "b"]).unwrap();
        assert_eq!(v.decode(&ids).unwrap(), vec!["a", "b"]);
        assert!(matches!(v.id("zzz"), Err(Error::UnknownToken(_))));
        let many: Vec<String> = (0..MAX_VOCAB).map(|i| format!("t{i}")).collect();
        assert!(Vocabulary::with_specials(many).is_err());
    }

    #[test]
    fn uniform_distribution() {
        let p = PolicyParams::uniform(vocab(&["a"]));
        let pad = p.vocab().pad();
        let d = p.next_distribution(pad, pad).unwrap();
        assert!(d.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        assert!(p.next_distribution(TokenId(99), pad).is_err());
    }

    #[test]
    fn dominant_logit() {
        let mut p = PolicyParams::uniform(vocab(&["a"]));
        let pad = p.vocab().pad();
        p.row_mut(pad, pad)[4] = 50.0;
        let d = p.next_distribution(pad, pad).unwrap();
        assert!(1.0 - d[4] < 1e-20);
        assert!(d[..4].iter().sum::<f64>() < 1e-20);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn forced_chain() -> (PolicyParams, Vec<TokenId>) {
        let v = vocab(&["A", "B", "C"]);
        let ids = v.encode(&[PAD, "A", "B", "C", EOS]).unwrap();
        let mut p = PolicyParams::uniform(v);
        let (pad, a, b, c, eos) = (ids[0], ids[1], ids[2], ids[3], ids[4]);
        p.row_mut(pad, pad)[a.index()] = 50.0;
        p.row_mut(pad, a)[b.index()] = 50.0;
        p.row_mut(a, b)[c.index()] = 50.0;
        p.row_mut(b, c)[eos.index()] = 50.0;
        (p, vec![a, b, c, eos])
    }

    #[test]
    fn forced_chain_is_sampled_for_any_seed() {
        let (p, expected) = forced_chain();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = p.sample_sequence(&[], 10, &mut rng).unwrap();
            assert_eq!(s.tokens, expected);
        }
    }

    #[test]
    fn max_len_caps_sampling() {
        let p = PolicyParams::uniform(vocab(&["a", "b"]));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = p.sample_sequence(&[], 1, &mut rng).unwrap();
        assert_eq!(s.tokens.len(), 1);
    }

    #[test]
    fn sampling_is_seed_deterministic_and_consistent() {
        let v = vocab(&["a", "b", "c"]);
        let n = v.len();
        let logits: Vec<f64> = (0..n * n * n)
            .map(|i| ((i * 37) % 11) as f64 * 0.3)
            .collect();
        let p = PolicyParams::from_logits(v, logits).unwrap();
        let prompt = p.vocab().encode(&["a", "b"]).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            p.sample_sequence(&prompt, 20, &mut rng).unwrap()
        };
        let (s1, s2) = (run(), run());
        assert_eq!(s1, s2);
        let re = p.sequence_logprob(&prompt, &s1.tokens).unwrap();
        for (a, b) in re.iter().zip(&s1.logprobs) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn uniform_sequence_logprob() {
        let p = PolicyParams::uniform(vocab(&["a", "b", "c"]));
        let out = p.vocab().encode(&["a", "c", "c", EOS]).unwrap();
        let lp = p.sequence_logprob(&[], &out).unwrap();
        let expect = -(p.vocab().len() as f64).ln();
        assert!(lp.iter().all(|&x| (x - expect).abs() < 1e-15));
    }

    #[test]
    fn logprob_locality() {
        let mut p = PolicyParams::uniform(vocab(&["a", "b", "c"]));
        let v = p.vocab().clone();
        let prompt = v.encode(&["a"]).unwrap();
        let out = v.encode(&["b", "c", "b", "c"]).unwrap();
        let before = p.sequence_logprob(&prompt, &out).unwrap();
        let (b, c) = (v.id("b").unwrap(), v.id("c").unwrap());
        p.row_mut(b, c)[0] += 1.0;
        let after = p.sequence_logprob(&prompt, &out).unwrap();
        let ctx = p.contexts(&prompt, &out).unwrap();
        for t in 0..out.len() {
            assert_eq!(before[t] != after[t], ctx[t] == (b, c), "position {t}");
        }
    }

    #[test]
    fn gradient_closed_form() {
        let v = Vocabulary::new(
            [PAD, EOS, BEGIN_OF_THOUGHT, END_OF_THOUGHT]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
        .unwrap();
        let p = PolicyParams::uniform(v);
        let out = vec![TokenId(2), TokenId(1)];
        let g = p.logprob_grad(&[], &out, 1).unwrap();
        assert_eq!(g.row, vec![-0.25, 0.75, -0.25, -0.25]);
        assert_eq!(g.context, (TokenId(0), TokenId(2)));
        assert!(matches!(
            p.logprob_grad(&[], &out, 2),
            Err(Error::InvalidStep { step: 2, len: 2 })
        ));
    }

    #[test]
    fn checkpoint_errors() {
        let p = PolicyParams::uniform(vocab(&["x"]));
        let bytes = p.to_bytes();
        assert!(PolicyParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(PolicyParams::from_bytes(&extra).is_err());
        assert!(PolicyParams::from_bytes(b"nope").is_err());
    }
}
