//! Desk-scale stand-ins for a language model and a reward model.
//!
//! Both networks embed every `(position, token)` pair directly into the
//! hidden width, so summing embeddings keeps track of where each token sits.
//!
//! `TinyPolicy` predicts token `i` from the sum of the embeddings of tokens
//! `0..i` plus a learned query vector for position `i`, followed by `tanh`
//! and a projection onto the vocabulary.
//!
//! `RewardNet` builds the same causal feature at every position (embeddings
//! of tokens `0..=i` plus a query for `i`, through `tanh`), mean-pools those
//! features over positions, and maps the pooled vector through a second
//! `tanh` layer to a scalar.
//!
//! Initialization is uniform in `±1/sqrt(fan_in)` for dense weights and
//! `±1/sqrt(hidden)` for embedding tables; biases start at zero.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{evaluate, ParamVars, Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{RowMix, Tensor};
use crate::Token;

pub const MAX_VOCAB: usize = 64;
pub const MAX_CONTEXT: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub vocab_size: usize,
    pub context_window: usize,
    pub hidden_dim: usize,
    /// Sampling stops after emitting this token.
    pub end_token: Option<Token>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            vocab_size: 16,
            context_window: 16,
            hidden_dim: 32,
            end_token: None,
        }
    }
}

impl PolicyConfig {
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = shape_violations(self.vocab_size, self.context_window, self.hidden_dim);
        if let Some(t) = self.end_token {
            if t as usize >= self.vocab_size {
                out.push(("end_token", format!("{t} is outside the vocabulary")));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub vocab_size: usize,
    pub context_window: usize,
    pub hidden_dim: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            vocab_size: 16,
            context_window: 16,
            hidden_dim: 32,
        }
    }
}

impl RewardConfig {
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        shape_violations(self.vocab_size, self.context_window, self.hidden_dim)
    }
}

fn shape_violations(vocab: usize, window: usize, hidden: usize) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    if !(1..=MAX_VOCAB).contains(&vocab) {
        out.push(("vocab_size", format!("must be in 1..={MAX_VOCAB}, got {vocab}")));
    }
    if !(1..=MAX_CONTEXT).contains(&window) {
        out.push(("context_window", format!("must be in 1..={MAX_CONTEXT}, got {window}")));
    }
    if hidden == 0 {
        out.push(("hidden_dim", "must be >= 1".to_string()));
    }
    out
}

fn first_violation(v: Vec<(&'static str, String)>) -> Result<()> {
    match v.into_iter().next() {
        None => Ok(()),
        Some((field, msg)) => Err(Error::invalid(format!("{field}: {msg}"))),
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_unchecked(shape.to_vec(), data)
}

fn check_tokens(tokens: &[Token], vocab: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t as usize >= vocab) {
        None => Ok(()),
        Some(t) => Err(Error::invalid(format!("token {t} outside vocabulary of {vocab}"))),
    }
}

/// A prompt/response pair fed to a model.
pub type Pair<'a> = (&'a [Token], &'a [Token]);

#[derive(Clone, Debug, PartialEq)]
pub struct TinyPolicy {
    config: PolicyConfig,
    params: ParamSet,
}

/// Output of a batched policy forward pass on the tape.
pub struct PolicyForward {
    /// `[n_predictions, 1]`: log-probability of each response token.
    pub token_logprobs: Var,
    /// Prediction rows belonging to each input pair.
    pub spans: Vec<std::ops::Range<usize>>,
}

impl TinyPolicy {
    pub const PREFIX: &'static str = "policy.";

    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self> {
        first_violation(config.violations())?;
        let (v, w, h) = (config.vocab_size, config.context_window, config.hidden_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb_bound = 1.0 / (h as f64).sqrt();
        let mut params = ParamSet::new();
        params.insert("policy.embed", uniform(&mut rng, &[w * v, h], emb_bound))?;
        params.insert("policy.query", uniform(&mut rng, &[w, h], emb_bound))?;
        params.insert("policy.out_w", uniform(&mut rng, &[h, v], 1.0 / (h as f64).sqrt()))?;
        params.insert("policy.out_b", Tensor::zeros(&[v]))?;
        Ok(Self { config, params })
    }

    /// A policy whose output is uniform over the vocabulary everywhere.
    pub fn uniform(config: PolicyConfig, seed: u64) -> Result<Self> {
        let mut p = Self::new(config, seed)?;
        let (h, v) = (p.config.hidden_dim, p.config.vocab_size);
        let mut params = ParamSet::new();
        for (name, t) in p.params.iter() {
            let t = if name == "policy.out_w" {
                Tensor::zeros(&[h, v])
            } else {
                t.clone()
            };
            params.insert(name, t)?;
        }
        p.params = params;
        Ok(p)
    }

    pub fn from_params(config: PolicyConfig, params: ParamSet) -> Result<Self> {
        first_violation(config.violations())?;
        let reference = Self::new(config.clone(), 0)?;
        check_layout(&reference.params, &params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn with_params(&self, params: ParamSet) -> Result<Self> {
        check_layout(&self.params, &params)?;
        Ok(Self {
            config: self.config.clone(),
            params,
        })
    }

    fn check_pair(&self, x: &[Token], y: &[Token]) -> Result<()> {
        check_tokens(x, self.config.vocab_size)?;
        check_tokens(y, self.config.vocab_size)?;
        let len = x.len() + y.len();
        if len > self.config.context_window {
            return Err(Error::ContextOverflow {
                len,
                window: self.config.context_window,
            });
        }
        Ok(())
    }

    /// Records the batched forward pass for every response token of every pair.
    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, batch: &[Pair<'_>]) -> Result<PolicyForward> {
        let v = self.config.vocab_size;
        let mut rows = Vec::new();
        let mut mix = RowMix::new();
        let mut query_pos = Vec::new();
        let mut targets = Vec::new();
        let mut spans = Vec::with_capacity(batch.len());
        for &(x, y) in batch {
            self.check_pair(x, y)?;
            let base = rows.len();
            let seq: Vec<Token> = x.iter().chain(y).copied().collect();
            // every token except the last serves as context
            for (pos, &tok) in seq.iter().enumerate().take(seq.len().saturating_sub(1)) {
                rows.push(pos * v + tok as usize);
            }
            let start = mix.rows();
            for i in x.len()..seq.len() {
                mix.push_row((0..i).map(|j| (base + j, 1.0)).collect());
                query_pos.push(i);
                targets.push(seq[i] as usize);
            }
            spans.push(start..mix.rows());
        }
        let embed = vars.get("policy.embed")?;
        let query = vars.get("policy.query")?;
        let out_w = vars.get("policy.out_w")?;
        let out_b = vars.get("policy.out_b")?;

        let tokens = tape.select_rows(embed, rows)?;
        let context = tape.combine_rows(tokens, mix)?;
        let q = tape.select_rows(query, query_pos)?;
        let pre = tape.add(context, q)?;
        let hidden = tape.tanh(pre)?;
        let logits = tape.matmul(hidden, out_w)?;
        let logits = tape.add_row(logits, out_b)?;
        let logp = tape.log_softmax(logits)?;
        let token_logprobs = tape.gather_cols(logp, targets)?;
        Ok(PolicyForward {
            token_logprobs,
            spans,
        })
    }

    /// `[n_pairs, 1]` sequence log-probabilities `sum_i log p(y_i | x, y_<i)`.
    pub fn sequence_logprobs(&self, tape: &mut Tape, vars: &ParamVars, batch: &[Pair<'_>]) -> Result<Var> {
        let fwd = self.forward(tape, vars, batch)?;
        let mut mix = RowMix::new();
        for span in &fwd.spans {
            mix.push_row(span.clone().map(|r| (r, 1.0)).collect());
        }
        tape.combine_rows(fwd.token_logprobs, mix)
    }

    pub fn sequence_logprob(&self, x: &[Token], y: &[Token]) -> Result<f64> {
        let out = evaluate(&self.params, |tape, vars| {
            self.sequence_logprobs(tape, vars, &[(x, y)])
        })?;
        out.item()
    }

    /// Logits for the token following `prefix`, computed without a tape.
    pub fn next_logits(&self, prefix: &[Token]) -> Result<Vec<f64>> {
        let (v, h) = (self.config.vocab_size, self.config.hidden_dim);
        check_tokens(prefix, v)?;
        let pos = prefix.len();
        if pos >= self.config.context_window {
            return Err(Error::ContextOverflow {
                len: pos + 1,
                window: self.config.context_window,
            });
        }
        let embed = self.param("policy.embed");
        let mut pre = self.param("policy.query").row(pos).to_vec();
        for (j, &tok) in prefix.iter().enumerate() {
            for (p, e) in pre.iter_mut().zip(embed.row(j * v + tok as usize)) {
                *p += e;
            }
        }
        let out_w = self.param("policy.out_w");
        let mut logits = self.param("policy.out_b").data().to_vec();
        for (k, p) in pre.iter().enumerate().take(h) {
            let a = p.tanh();
            for (l, w) in logits.iter_mut().zip(out_w.row(k)) {
                *l += a * w;
            }
        }
        Ok(logits)
    }

    pub fn next_token_distribution(&self, prefix: &[Token]) -> Result<Vec<f64>> {
        let logits = Tensor::vector(self.next_logits(prefix)?)?;
        Ok(logits.softmax_rows()?.into_data())
    }

    /// Autoregressive sampling at `temperature`; stops after the end token
    /// (if configured) or `max_len` tokens.
    pub fn sample_response<R: Rng + ?Sized>(
        &self,
        x: &[Token],
        max_len: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Vec<Token>> {
        if !(temperature > 0.0) {
            return Err(Error::invalid(format!("temperature must be > 0, got {temperature}")));
        }
        if x.len() + max_len > self.config.context_window {
            return Err(Error::ContextOverflow {
                len: x.len() + max_len,
                window: self.config.context_window,
            });
        }
        let mut seq = x.to_vec();
        let mut out = Vec::with_capacity(max_len);
        for _ in 0..max_len {
            let logits: Vec<f64> = self.next_logits(&seq)?.iter().map(|l| l / temperature).collect();
            let probs = Tensor::vector(logits)?.softmax_rows()?.into_data();
            let tok = sample_categorical(&probs, rng.random::<f64>()) as Token;
            seq.push(tok);
            out.push(tok);
            if Some(tok) == self.config.end_token {
                break;
            }
        }
        Ok(out)
    }

    /// Argmax decoding.
    pub fn greedy_response(&self, x: &[Token], max_len: usize) -> Result<Vec<Token>> {
        let mut seq = x.to_vec();
        let mut out = Vec::new();
        for _ in 0..max_len {
            let logits = self.next_logits(&seq)?;
            let tok = argmax(&logits) as Token;
            seq.push(tok);
            out.push(tok);
            if Some(tok) == self.config.end_token {
                break;
            }
        }
        Ok(out)
    }

    fn param(&self, name: &str) -> &Tensor {
        self.params.get(name).expect("policy layout checked at construction")
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new("policy", &self.config, self.params.clone())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: PolicyConfig = ckpt.config_as("policy")?;
        Self::from_params(config, ckpt.params.clone())
    }
}

/// Index chosen by inverse-CDF sampling with a uniform draw `u` in `[0, 1)`.
pub fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the total mass; take the last nonzero entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn check_layout(reference: &ParamSet, params: &ParamSet) -> Result<()> {
    if reference.len() != params.len() {
        return Err(Error::invalid(format!(
            "expected {} parameter tensors, got {}",
            reference.len(),
            params.len()
        )));
    }
    for (name, t) in reference.iter() {
        match params.get(name) {
            Some(p) if p.shape() == t.shape() => {}
            Some(p) => {
                return Err(Error::Parameter {
                    name: name.into(),
                    detail: format!("shape {:?}, expected {:?}", p.shape(), t.shape()),
                })
            }
            None => {
                return Err(Error::Parameter {
                    name: name.into(),
                    detail: "missing".into(),
                })
            }
        }
    }
    Ok(())
}

/// Scalar scorer of a (prompt, response) pair. The same network doubles as
/// the PPO value head when built with a different name prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardNet {
    config: RewardConfig,
    prefix: String,
    params: ParamSet,
}

impl RewardNet {
    pub const REWARD_PREFIX: &'static str = "reward.";
    pub const VALUE_PREFIX: &'static str = "value.";

    pub fn new(config: RewardConfig, prefix: &str, seed: u64) -> Result<Self> {
        first_violation(config.violations())?;
        let (v, w, h) = (config.vocab_size, config.context_window, config.hidden_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (h as f64).sqrt();
        let mut params = ParamSet::new();
        params.insert(format!("{prefix}embed"), uniform(&mut rng, &[w * v, h], bound))?;
        params.insert(format!("{prefix}query"), uniform(&mut rng, &[w, h], bound))?;
        params.insert(format!("{prefix}w2"), uniform(&mut rng, &[h, h], bound))?;
        params.insert(format!("{prefix}b2"), Tensor::zeros(&[h]))?;
        params.insert(format!("{prefix}head_w"), uniform(&mut rng, &[h, 1], bound))?;
        params.insert(format!("{prefix}head_b"), Tensor::zeros(&[1]))?;
        Ok(Self {
            config,
            prefix: prefix.to_string(),
            params,
        })
    }

    pub fn from_params(config: RewardConfig, prefix: &str, params: ParamSet) -> Result<Self> {
        let reference = Self::new(config.clone(), prefix, 0)?;
        check_layout(&reference.params, &params)?;
        Ok(Self {
            config,
            prefix: prefix.to_string(),
            params,
        })
    }

    pub fn config(&self) -> &RewardConfig {
        &self.config
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn with_params(&self, params: ParamSet) -> Result<Self> {
        check_layout(&self.params, &params)?;
        Ok(Self {
            config: self.config.clone(),
            prefix: self.prefix.clone(),
            params,
        })
    }

    fn name(&self, part: &str) -> String {
        format!("{}{part}", self.prefix)
    }

    /// `[n_pairs, 1]` scores.
    pub fn scores(&self, tape: &mut Tape, vars: &ParamVars, batch: &[Pair<'_>]) -> Result<Var> {
        let (v, w) = (self.config.vocab_size, self.config.context_window);
        let mut rows = Vec::new();
        let mut prefix = RowMix::new();
        let mut positions = Vec::new();
        let mut pool = RowMix::new();
        for &(x, y) in batch {
            check_tokens(x, v)?;
            check_tokens(y, v)?;
            let len = x.len() + y.len();
            if len > w {
                return Err(Error::ContextOverflow { len, window: w });
            }
            if len == 0 {
                return Err(Error::invalid("reward model needs a nonempty sequence"));
            }
            let base = rows.len();
            for (pos, &tok) in x.iter().chain(y).enumerate() {
                rows.push(pos * v + tok as usize);
                prefix.push_row((0..=pos).map(|j| (base + j, 1.0)).collect());
                positions.push(pos);
            }
            let weight = 1.0 / len as f64;
            pool.push_row((0..len).map(|j| (base + j, weight)).collect());
        }
        let embed = vars.get(&self.name("embed"))?;
        let query = vars.get(&self.name("query"))?;
        let w2 = vars.get(&self.name("w2"))?;
        let b2 = vars.get(&self.name("b2"))?;
        let head_w = vars.get(&self.name("head_w"))?;
        let head_b = vars.get(&self.name("head_b"))?;

        let tokens = tape.select_rows(embed, rows)?;
        let context = tape.combine_rows(tokens, prefix)?;
        let q = tape.select_rows(query, positions)?;
        let h1 = tape.add(context, q)?;
        let h1 = tape.tanh(h1)?;
        let pooled = tape.combine_rows(h1, pool)?;
        let h2 = tape.matmul(pooled, w2)?;
        let h2 = tape.add_row(h2, b2)?;
        let h2 = tape.tanh(h2)?;
        let out = tape.matmul(h2, head_w)?;
        tape.add_row(out, head_b)
    }

    pub fn reward_score(&self, x: &[Token], y: &[Token]) -> Result<f64> {
        let out = evaluate(&self.params, |tape, vars| self.scores(tape, vars, &[(x, y)]))?;
        out.item()
    }

    /// Scores for many pairs in one forward pass.
    pub fn score_batch(&self, batch: &[Pair<'_>]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let out = evaluate(&self.params, |tape, vars| self.scores(tape, vars, batch))?;
        Ok(out.into_data())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new("reward", &(self.prefix.clone(), &self.config), self.params.clone())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let (prefix, config): (String, RewardConfig) = ckpt.config_as("reward")?;
        Self::from_params(config, &prefix, ckpt.params.clone())
    }
}

const CHECKPOINT_MAGIC: &str = "dpalign-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Named tensors plus the model config that produced them.
///
/// Text layout, one item per line:
///
/// ```text
/// dpalign-checkpoint 1
/// kind <kind>
/// config <json>
/// tensors <count>
/// <name> <rank> <dim>...
/// <values, space separated>
/// ```
///
/// Values are written in shortest round-trip exponent form, so identical
/// parameters always produce identical bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new<C: Serialize>(kind: &str, config: &C, params: ParamSet) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self {
            kind: kind.to_string(),
            config,
            params,
        })
    }

    fn config_as<C: serde::de::DeserializeOwned>(&self, kind: &str) -> Result<C> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "checkpoint holds a `{}` model, expected `{kind}`",
                self.kind
            )));
        }
        serde_json::from_value(self.config.clone()).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
        out.push_str(&format!("kind {}\n", self.kind));
        out.push_str(&format!("config {}\n", self.config));
        out.push_str(&format!("tensors {}\n", self.params.len()));
        for (name, t) in self.params.iter() {
            out.push_str(name);
            out.push_str(&format!(" {}", t.shape().len()));
            for d in t.shape() {
                out.push_str(&format!(" {d}"));
            }
            out.push('\n');
            let values: Vec<String> = t.data().iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, detail: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let lines: Vec<&str> = text.lines().collect();
        let get = |i: usize| lines.get(i).copied().ok_or_else(|| err(i + 1, "unexpected end of file".into()));

        let header = get(0)?;
        let expected = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        if header != expected {
            return Err(err(1, format!("expected header `{expected}`, found `{header}`")));
        }
        let kind = get(1)?
            .strip_prefix("kind ")
            .ok_or_else(|| err(2, "expected `kind <name>`".into()))?
            .to_string();
        let config_text = get(2)?
            .strip_prefix("config ")
            .ok_or_else(|| err(3, "expected `config <json>`".into()))?;
        let config: serde_json::Value =
            serde_json::from_str(config_text).map_err(|e| err(3, e.to_string()))?;
        let count: usize = get(3)?
            .strip_prefix("tensors ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| err(4, "expected `tensors <count>`".into()))?;

        let mut params = ParamSet::new();
        for k in 0..count {
            let head_line = 4 + 2 * k;
            let head: Vec<&str> = get(head_line)?.split_whitespace().collect();
            let bad_head = || err(head_line + 1, "expected `<name> <rank> <dims...>`".into());
            let (name, rank) = match head.as_slice() {
                [name, rank, ..] => (*name, rank.parse::<usize>().map_err(|_| bad_head())?),
                _ => return Err(bad_head()),
            };
            if head.len() != 2 + rank {
                return Err(bad_head());
            }
            let shape = head[2..]
                .iter()
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad_head())?;
            let value_line = head_line + 1;
            let values = get(value_line)?
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(value_line + 1, e.to_string()))?;
            let tensor = Tensor::new(shape, values).map_err(|e| err(value_line + 1, e.to_string()))?;
            params
                .insert(name, tensor)
                .map_err(|e| err(head_line + 1, e.to_string()))?;
        }
        if lines.len() != 4 + 2 * count {
            return Err(err(4 + 2 * count + 1, "trailing content".into()));
        }
        Ok(Self { kind, config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient;

    fn small_config() -> PolicyConfig {
        PolicyConfig {
            vocab_size: 6,
            context_window: 8,
            hidden_dim: 5,
            end_token: None,
        }
    }

    // Straight-line recomputation from raw parameter values.
    fn oracle_logprob(policy: &TinyPolicy, x: &[Token], y: &[Token]) -> f64 {
        let c = policy.config();
        let p = policy.params();
        let embed = p.get("policy.embed").unwrap();
        let query = p.get("policy.query").unwrap();
        let out_w = p.get("policy.out_w").unwrap();
        let out_b = p.get("policy.out_b").unwrap();
        let seq: Vec<Token> = x.iter().chain(y).copied().collect();
        let mut total = 0.0;
        for i in x.len()..seq.len() {
            let mut hidden = vec![0.0; c.hidden_dim];
            for (k, h) in hidden.iter_mut().enumerate() {
                let mut s = query.data()[i * c.hidden_dim + k];
                for j in 0..i {
                    s += embed.data()[(j * c.vocab_size + seq[j] as usize) * c.hidden_dim + k];
                }
                *h = s.tanh();
            }
            let mut logits = vec![0.0; c.vocab_size];
            for (t, l) in logits.iter_mut().enumerate() {
                *l = out_b.data()[t];
                for k in 0..c.hidden_dim {
                    *l += hidden[k] * out_w.data()[k * c.vocab_size + t];
                }
            }
            let max = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            total += logits[seq[i] as usize] - max - z.ln();
        }
        total
    }

    #[test]
    fn empty_response_has_zero_logprob() {
        let p = TinyPolicy::new(small_config(), 1).unwrap();
        assert_eq!(p.sequence_logprob(&[1, 2], &[]).unwrap(), 0.0);
    }

    #[test]
    fn uniform_policy_logprob() {
        let config = PolicyConfig {
            vocab_size: 16,
            ..small_config()
        };
        let p = TinyPolicy::uniform(config, 3).unwrap();
        let lp = p.sequence_logprob(&[4], &[1, 9, 15]).unwrap();
        assert!((lp + 3.0 * 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logprob_matches_straight_line_oracle() {
        for seed in 0..20 {
            let p = TinyPolicy::new(small_config(), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let x: Vec<Token> = (0..2).map(|_| rng.random_range(0..6)).collect();
            let y: Vec<Token> = (0..4).map(|_| rng.random_range(0..6)).collect();
            let got = p.sequence_logprob(&x, &y).unwrap();
            let expect = oracle_logprob(&p, &x, &y);
            assert!(got <= 0.0);
            assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
        }
    }

    #[test]
    fn distributions_sum_to_one_and_match_next_logits() {
        let p = TinyPolicy::new(small_config(), 4).unwrap();
        let prefix = [3, 0, 5];
        let probs = p.next_token_distribution(&prefix).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (tok, &pr) in probs.iter().enumerate() {
            let lp = p.sequence_logprob(&prefix, &[tok as Token]).unwrap();
            assert!((lp - pr.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn logprob_is_additive_over_splits() {
        let p = TinyPolicy::new(small_config(), 8).unwrap();
        let x = [1, 4];
        let (y1, y2) = ([2, 2], [0, 5, 3]);
        let full: Vec<Token> = y1.iter().chain(&y2).copied().collect();
        let xy1: Vec<Token> = x.iter().chain(&y1).copied().collect();
        let whole = p.sequence_logprob(&x, &full).unwrap();
        let parts = p.sequence_logprob(&x, &y1).unwrap() + p.sequence_logprob(&xy1, &y2).unwrap();
        assert!((whole - parts).abs() < 1e-10);
    }

    #[test]
    fn context_overflow_is_an_error() {
        let p = TinyPolicy::new(small_config(), 0).unwrap();
        let err = p.sequence_logprob(&[0; 5], &[0; 4]).unwrap_err();
        assert!(matches!(err, Error::ContextOverflow { len: 9, window: 8 }));
        assert!(p.sample_response(&[0; 5], 4, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(p.sequence_logprob(&[7], &[0]).is_err());
    }

    #[test]
    fn sampling_is_seeded_and_cold_sampling_is_greedy() {
        let p = TinyPolicy::new(small_config(), 2).unwrap();
        let a = p.sample_response(&[1], 5, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = p.sample_response(&[1], 5, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        let greedy = p.greedy_response(&[1], 5).unwrap();
        for seed in 0..10 {
            let cold = p.sample_response(&[1], 5, 1e-9, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(cold, greedy);
        }
        assert!(p.sample_response(&[1], 5, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn sampling_stops_at_end_token() {
        let config = PolicyConfig {
            end_token: Some(0),
            ..small_config()
        };
        let p = TinyPolicy::new(config, 2).unwrap();
        for seed in 0..50 {
            let y = p.sample_response(&[1], 6, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            if let Some(i) = y.iter().position(|&t| t == 0) {
                assert_eq!(i, y.len() - 1);
            } else {
                assert_eq!(y.len(), 6);
            }
        }
    }

    #[test]
    fn zero_head_scores_zero() {
        let rm = RewardNet::new(RewardConfig::default(), RewardNet::REWARD_PREFIX, 1).unwrap();
        let mut params = ParamSet::new();
        for (name, t) in rm.params().iter() {
            let t = if name.ends_with("head_w") || name.ends_with("head_b") {
                Tensor::zeros(t.shape())
            } else {
                t.clone()
            };
            params.insert(name, t).unwrap();
        }
        let rm = rm.with_params(params).unwrap();
        assert_eq!(rm.reward_score(&[1, 2], &[3, 4, 5]).unwrap(), 0.0);
        assert_eq!(rm.reward_score(&[9], &[]).unwrap(), 0.0);
    }

    #[test]
    fn reward_matches_straight_line_oracle() {
        let config = RewardConfig {
            vocab_size: 5,
            context_window: 6,
            hidden_dim: 4,
        };
        let rm = RewardNet::new(config.clone(), "r.", 7).unwrap();
        let p = rm.params();
        let (x, y) = ([4u32, 1], [0u32, 3, 3]);
        let seq: Vec<Token> = x.iter().chain(&y).copied().collect();
        let h = config.hidden_dim;
        let embed = p.get("r.embed").unwrap().data();
        let query = p.get("r.query").unwrap().data();
        let mut pooled = vec![0.0; h];
        for i in 0..seq.len() {
            for k in 0..h {
                let mut pre = query[i * h + k];
                for (j, &tok) in seq.iter().enumerate().take(i + 1) {
                    pre += embed[(j * 5 + tok as usize) * h + k];
                }
                pooled[k] += pre.tanh() / seq.len() as f64;
            }
        }
        let h2: Vec<f64> = (0..h)
            .map(|j| {
                let s: f64 = (0..h).map(|k| pooled[k] * p.get("r.w2").unwrap().data()[k * h + j]).sum();
                (s + p.get("r.b2").unwrap().data()[j]).tanh()
            })
            .collect();
        let expect: f64 = (0..h).map(|k| h2[k] * p.get("r.head_w").unwrap().data()[k]).sum::<f64>()
            + p.get("r.head_b").unwrap().data()[0];
        let got = rm.reward_score(&x, &y).unwrap();
        assert!((got - expect).abs() < 1e-10);
        assert_eq!(rm.score_batch(&[(&x, &y)]).unwrap(), vec![got]);
    }

    #[test]
    fn policy_gradient_flows_to_every_tensor() {
        let p = TinyPolicy::new(small_config(), 5).unwrap();
        let (_, g) = gradient(p.params(), |tape, vars| {
            let lp = p.sequence_logprobs(tape, vars, &[(&[1, 2], &[3, 4]), (&[0], &[5])])?;
            tape.sum(lp)
        })
        .unwrap();
        for (name, t) in g.iter() {
            assert!(t.data().iter().any(|v| *v != 0.0), "{name} has no gradient");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_byte_stable() {
        let p = TinyPolicy::new(small_config(), 11).unwrap();
        let text = p.to_checkpoint().unwrap().to_text();
        let parsed = Checkpoint::parse(&text, Path::new("mem")).unwrap();
        let back = TinyPolicy::from_checkpoint(&parsed).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_checkpoint().unwrap().to_text(), text);

        let rm = RewardNet::new(RewardConfig::default(), RewardNet::VALUE_PREFIX, 2).unwrap();
        let ck = Checkpoint::parse(&rm.to_checkpoint().unwrap().to_text(), Path::new("mem")).unwrap();
        assert_eq!(RewardNet::from_checkpoint(&ck).unwrap(), rm);
        assert!(TinyPolicy::from_checkpoint(&ck).is_err());
    }

    #[test]
    fn checkpoint_parse_errors_carry_line_numbers() {
        let p = TinyPolicy::new(small_config(), 11).unwrap();
        let text = p.to_checkpoint().unwrap().to_text();
        let bad = text.replacen("dpalign-checkpoint 1", "dpalign-checkpoint 9", 1);
        assert!(matches!(Checkpoint::parse(&bad, Path::new("x")), Err(Error::Parse { line: 1, .. })));
        let mut lines: Vec<&str> = text.lines().collect();
        lines[5] = "1.0 oops";
        let bad = lines.join("\n");
        assert!(matches!(Checkpoint::parse(&bad, Path::new("x")), Err(Error::Parse { line: 6, .. })));
    }
}
