//! Synthetic preference data with a known latent reward, JSONL persistence,
//! and disjoint phase partitions.
//!
//! The latent reward of a response is the fraction of its tokens that lie in
//! a "good" half of the vocabulary chosen by the prompt's first token. The
//! good sets are derived from the generator seed, so the metadata only needs
//! to carry the seed and sizes to rebuild the scorer at evaluation time.
//!
//! The prompt space is split once, by seed, into training prompts and
//! held-out evaluation prompts; generated triples only use training prompts.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::PreferenceTriple;
use crate::Token;

/// Largest prompt space the generator will enumerate.
const MAX_PROMPT_SPACE: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n: usize,
    pub vocab_size: usize,
    pub prompt_len: usize,
    pub response_len: usize,
    /// Share of the prompt space reserved for evaluation.
    pub held_out_fraction: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            vocab_size: 8,
            prompt_len: 2,
            response_len: 4,
            held_out_fraction: 0.25,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.n == 0 {
            out.push(("n", "must be >= 1".to_string()));
        }
        if !(2..=crate::models::MAX_VOCAB).contains(&self.vocab_size) {
            out.push((
                "vocab_size",
                format!("must be in 2..={}, got {}", crate::models::MAX_VOCAB, self.vocab_size),
            ));
        }
        if self.prompt_len == 0 {
            out.push(("prompt_len", "must be >= 1".to_string()));
        }
        if self.response_len == 0 {
            out.push(("response_len", "must be >= 1".to_string()));
        }
        if !(self.held_out_fraction > 0.0 && self.held_out_fraction < 1.0) {
            out.push((
                "held_out_fraction",
                format!("must be in (0, 1), got {}", self.held_out_fraction),
            ));
        }
        match prompt_space(self.vocab_size, self.prompt_len) {
            Some(s) if s >= 2 => {}
            _ => out.push((
                "prompt_len",
                format!("prompt space must hold 2..={MAX_PROMPT_SPACE} prompts"),
            )),
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some((field, msg)) => Err(Error::invalid(format!("{field}: {msg}"))),
        }
    }
}

fn prompt_space(vocab: usize, len: usize) -> Option<usize> {
    let mut s: usize = 1;
    for _ in 0..len {
        s = s.checked_mul(vocab)?;
        if s > MAX_PROMPT_SPACE {
            return None;
        }
    }
    Some(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    pub generator: GeneratorConfig,
    pub latent_reward: String,
}

/// Ground-truth scorer of the synthetic task.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentReward {
    vocab_size: usize,
    /// `good[a][t]`: token `t` is good after a prompt starting with `a`.
    good: Vec<Vec<bool>>,
}

impl LatentReward {
    pub const DESCRIPTION: &'static str =
        "fraction of response tokens in a seed-chosen half of the vocabulary keyed by the first prompt token";

    pub fn new(vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_600d);
        let half = vocab_size / 2;
        let good = (0..vocab_size)
            .map(|_| {
                let mut tokens: Vec<usize> = (0..vocab_size).collect();
                tokens.shuffle(&mut rng);
                let mut mask = vec![false; vocab_size];
                for &t in &tokens[..half] {
                    mask[t] = true;
                }
                mask
            })
            .collect();
        Self { vocab_size, good }
    }

    pub fn from_metadata(meta: &DatasetMetadata) -> Self {
        Self::new(meta.generator.vocab_size, meta.generator.seed)
    }

    pub fn is_good(&self, prompt: &[Token], token: Token) -> bool {
        let key = prompt.first().copied().unwrap_or(0) as usize % self.vocab_size;
        self.good[key].get(token as usize).copied().unwrap_or(false)
    }

    /// Reward in `[0, 1]`; an empty response scores 0.
    pub fn score(&self, prompt: &[Token], response: &[Token]) -> f64 {
        if response.is_empty() {
            return 0.0;
        }
        let hits = response.iter().filter(|&&t| self.is_good(prompt, t)).count();
        hits as f64 / response.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentDataset {
    pub triples: Vec<PreferenceTriple>,
    /// Absent for files without a header line.
    pub metadata: Option<DatasetMetadata>,
}

impl AlignmentDataset {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Vocabulary size from the metadata, or one past the largest token seen.
    pub fn vocab_size(&self) -> usize {
        if let Some(m) = &self.metadata {
            return m.generator.vocab_size;
        }
        self.triples
            .iter()
            .flat_map(|t| t.prompt.iter().chain(&t.chosen).chain(&t.rejected))
            .map(|&t| t as usize + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn latent_reward(&self) -> Result<LatentReward> {
        self.metadata
            .as_ref()
            .map(LatentReward::from_metadata)
            .ok_or_else(|| Error::invalid("dataset has no generator metadata, so no ground-truth reward"))
    }

    pub fn held_out_prompts(&self) -> Result<Vec<Vec<Token>>> {
        let meta = self
            .metadata
            .as_ref()
            .ok_or_else(|| Error::invalid("dataset has no generator metadata, so no held-out prompts"))?;
        Ok(split_prompts(&meta.generator).1)
    }

    pub fn select(&self, indices: &[usize]) -> Vec<PreferenceTriple> {
        indices.iter().map(|&i| self.triples[i].clone()).collect()
    }
}

fn all_prompts(vocab: usize, len: usize) -> Vec<Vec<Token>> {
    let space = prompt_space(vocab, len).expect("validated prompt space");
    (0..space)
        .map(|mut k| {
            let mut p = vec![0; len];
            for slot in p.iter_mut().rev() {
                *slot = (k % vocab) as Token;
                k /= vocab;
            }
            p
        })
        .collect()
}

/// `(training prompts, held-out prompts)`, both in a seed-shuffled order.
fn split_prompts(config: &GeneratorConfig) -> (Vec<Vec<Token>>, Vec<Vec<Token>>) {
    let mut prompts = all_prompts(config.vocab_size, config.prompt_len);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xe1d0_u64);
    prompts.shuffle(&mut rng);
    let held = ((prompts.len() as f64 * config.held_out_fraction).round() as usize).clamp(1, prompts.len() - 1);
    let train = prompts.split_off(held);
    (train, prompts)
}

/// Draws `n` preference triples from the training prompts. The pair is
/// redrawn until the two responses have different latent rewards.
pub fn generate_synthetic_preferences(config: &GeneratorConfig) -> Result<AlignmentDataset> {
    config.validate()?;
    let (train, _) = split_prompts(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let triples = draw_triples(config, &train, config.n, &mut rng)?;
    Ok(AlignmentDataset {
        triples,
        metadata: Some(DatasetMetadata {
            generator: config.clone(),
            latent_reward: LatentReward::DESCRIPTION.to_string(),
        }),
    })
}

/// Triples on the held-out prompts of `meta`, for evaluating reward models.
pub fn generate_held_out_triples(meta: &DatasetMetadata, n: usize, seed: u64) -> Result<Vec<PreferenceTriple>> {
    meta.generator.validate()?;
    let (_, held) = split_prompts(&meta.generator);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_triples(&meta.generator, &held, n, &mut rng)
}

fn draw_triples(
    config: &GeneratorConfig,
    prompts: &[Vec<Token>],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PreferenceTriple>> {
    let latent = LatentReward::new(config.vocab_size, config.seed);
    let v = config.vocab_size as Token;
    let mut triples = Vec::with_capacity(n);
    for _ in 0..n {
        let prompt = prompts[rng.random_range(0..prompts.len())].clone();
        let (a, b) = loop {
            let a: Vec<Token> = (0..config.response_len).map(|_| rng.random_range(0..v)).collect();
            let b: Vec<Token> = (0..config.response_len).map(|_| rng.random_range(0..v)).collect();
            if latent.score(&prompt, &a) != latent.score(&prompt, &b) {
                break (a, b);
            }
        };
        let (chosen, rejected) = if latent.score(&prompt, &a) > latent.score(&prompt, &b) {
            (a, b)
        } else {
            (b, a)
        };
        triples.push(PreferenceTriple::new(prompt, chosen, rejected)?);
    }
    Ok(triples)
}

/// Ordered, pairwise disjoint index sets covering `0..n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePartition {
    pub parts: Vec<Vec<usize>>,
}

impl PhasePartition {
    /// Checks that the parts are pairwise disjoint and cover `0..n` exactly.
    pub fn verify(&self, n: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (p, part) in self.parts.iter().enumerate() {
            for &i in part {
                if i >= n {
                    return Err(Error::invalid(format!("partition part {p} holds index {i} >= {n}")));
                }
                if !seen.insert(i) {
                    return Err(Error::invalid(format!("index {i} appears in more than one partition part")));
                }
            }
        }
        if seen.len() != n {
            return Err(Error::invalid(format!("partition covers {} of {n} examples", seen.len())));
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.parts.iter().map(Vec::len).collect()
    }
}

/// Seeded shuffle of `0..n` cut into consecutive parts of size `n * w`
/// (largest-remainder rounding, so each size is within 1 of its target).
pub fn partition_disjoint(n: usize, fractions: &[f64], seed: u64) -> Result<PhasePartition> {
    if fractions.is_empty() {
        return Err(Error::invalid("at least one partition fraction is required"));
    }
    if let Some(w) = fractions.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::invalid(format!("partition fractions must be positive, got {w}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("partition fractions sum to {total}, not 1")));
    }
    let targets: Vec<f64> = fractions.iter().map(|w| w * n as f64).collect();
    let mut sizes: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = targets[a] - sizes[a] as f64;
        let rb = targets[b] - sizes[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = n - sizes.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        sizes[k] += 1;
    }
    if let Some(p) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::invalid(format!("partition part {p} would be empty for n = {n}")));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        parts.push(indices[start..start + s].to_vec());
        start += s;
    }
    Ok(PhasePartition { parts })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    metadata: DatasetMetadata,
}

/// Canonical JSONL text: an optional metadata header line, then one triple
/// per line.
pub fn to_jsonl(dataset: &AlignmentDataset) -> Result<String> {
    let mut out = String::new();
    let fmt_err = |e: serde_json::Error| Error::Format(e.to_string());
    if let Some(m) = &dataset.metadata {
        out.push_str(&serde_json::to_string(&Header { metadata: m.clone() }).map_err(fmt_err)?);
        out.push('\n');
    }
    for t in &dataset.triples {
        out.push_str(&serde_json::to_string(t).map_err(fmt_err)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_jsonl(text: &str, path: &Path) -> Result<AlignmentDataset> {
    let err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut metadata = None;
    let mut triples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if line_no == 1 && line.trim_start().starts_with("{\"metadata\"") {
            let h: Header = serde_json::from_str(line).map_err(|e| err(line_no, e.to_string()))?;
            metadata = Some(h.metadata);
            continue;
        }
        let t: PreferenceTriple = serde_json::from_str(line).map_err(|e| err(line_no, e.to_string()))?;
        let t = PreferenceTriple::new(t.prompt, t.chosen, t.rejected).map_err(|e| err(line_no, e.to_string()))?;
        triples.push(t);
    }
    if triples.is_empty() {
        return Err(err(1, "no preference triples found".into()));
    }
    let dataset = AlignmentDataset { triples, metadata };
    if let Some(m) = &dataset.metadata {
        let v = m.generator.vocab_size;
        for (i, t) in dataset.triples.iter().enumerate() {
            if t.prompt.iter().chain(&t.chosen).chain(&t.rejected).any(|&tok| tok as usize >= v) {
                let line = i + 2;
                return Err(err(line, format!("token outside vocabulary of {v}")));
            }
        }
    }
    Ok(dataset)
}

pub fn save_jsonl(dataset: &AlignmentDataset, path: &Path) -> Result<()> {
    let text = to_jsonl(dataset)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_jsonl(path: &Path) -> Result<AlignmentDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, path)
}
