//! Reward-based evaluation of policies and epsilon sweeps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AlignmentDataset, LatentReward};
use crate::error::{Error, Result};
use crate::losses::PreferenceTriple;
use crate::models::{RewardNet, TinyPolicy};
use crate::pipeline::{run_pipeline, PipelineSpec};
use crate::privacy::Epsilon;
use crate::stats::mean_std_err;
use crate::Token;

/// Anything that can score a (prompt, response) pair.
pub trait Scorer: Sync {
    fn score(&self, prompt: &[Token], response: &[Token]) -> Result<f64>;
}

impl Scorer for LatentReward {
    fn score(&self, prompt: &[Token], response: &[Token]) -> Result<f64> {
        Ok(LatentReward::score(self, prompt, response))
    }
}

impl Scorer for RewardNet {
    fn score(&self, prompt: &[Token], response: &[Token]) -> Result<f64> {
        self.reward_score(prompt, response)
    }
}

/// Adapts a plain function into a scorer.
pub struct FnScorer<F>(pub F);

impl<F> Scorer for FnScorer<F>
where
    F: Fn(&[Token], &[Token]) -> f64 + Sync,
{
    fn score(&self, prompt: &[Token], response: &[Token]) -> Result<f64> {
        Ok((self.0)(prompt, response))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub max_len: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 300,
            max_len: 4,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.n_samples == 0 {
            out.push(("n_samples", "must be >= 1".into()));
        }
        if self.max_len == 0 {
            out.push(("max_len", "must be >= 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            out.push(("temperature", format!("must be > 0, got {}", self.temperature)));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean: f64,
    pub std_err: f64,
}

/// Mean score of sampled responses. Sample `i` uses prompt `i mod |prompts|`.
pub fn evaluate_alignment(
    policy: &TinyPolicy,
    scorer: &dyn Scorer,
    prompts: &[Vec<Token>],
    config: &EvalConfig,
) -> Result<Evaluation> {
    if let Some((f, m)) = config.violations().into_iter().next() {
        return Err(Error::invalid(format!("{f}: {m}")));
    }
    if prompts.is_empty() {
        return Err(Error::invalid("evaluation needs at least one prompt"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut scores = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        let prompt = &prompts[i % prompts.len()];
        let y = policy.sample_response(prompt, config.max_len, config.temperature, &mut rng)?;
        scores.push(scorer.score(prompt, &y)?);
    }
    let (mean, std_err) = mean_std_err(&scores)?;
    Ok(Evaluation { mean, std_err })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: Epsilon,
    pub mean_reward: f64,
    /// Standard error across seeds.
    pub std_err: f64,
    pub seeds: usize,
    pub noise_multiplier: f64,
    pub pure_noise: bool,
    /// One held-out mean reward per seed, in seed order.
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    pub fn validate(&self) -> Result<()> {
        for w in self.points.windows(2) {
            if !(w[0].epsilon < w[1].epsilon) {
                return Err(Error::invalid(format!(
                    "curve epsilons must be strictly increasing, found {} then {}",
                    w[0].epsilon, w[1].epsilon
                )));
            }
        }
        if self.points.iter().any(|p| p.seeds == 0) {
            return Err(Error::invalid("every curve point needs at least one seed"));
        }
        Ok(())
    }

    /// A curve from bare `(epsilon, reward)` pairs, e.g. a row of a results
    /// table. Each point counts as one seed with zero spread.
    pub fn from_values(values: &[(Epsilon, f64)]) -> Result<Self> {
        let points = values
            .iter()
            .map(|&(epsilon, mean_reward)| SweepPoint {
                epsilon,
                mean_reward,
                std_err: 0.0,
                seeds: 1,
                noise_multiplier: 0.0,
                pure_noise: epsilon == Epsilon::Zero,
                per_seed: vec![mean_reward],
            })
            .collect();
        let curve = Self { points };
        curve.validate()?;
        Ok(curve)
    }

    pub fn point(&self, epsilon: Epsilon) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.epsilon == epsilon)
    }

    pub fn values(&self) -> Vec<(Epsilon, f64)> {
        self.points.iter().map(|p| (p.epsilon, p.mean_reward)).collect()
    }
}

/// Share of triples the scorer ranks correctly (ties count as wrong).
pub fn pairwise_accuracy(scorer: &dyn Scorer, triples: &[PreferenceTriple]) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::invalid("accuracy needs at least one triple"));
    }
    let mut correct = 0usize;
    for t in triples {
        if scorer.score(&t.prompt, &t.chosen)? > scorer.score(&t.prompt, &t.rejected)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / triples.len() as f64)
}

/// Held-out ground-truth reward of one trained policy.
pub fn evaluate_on_task(policy: &TinyPolicy, dataset: &AlignmentDataset, config: &EvalConfig) -> Result<Evaluation> {
    let latent = dataset.latent_reward()?;
    let prompts = dataset.held_out_prompts()?;
    evaluate_alignment(policy, &latent, &prompts, config)
}

/// Trains and evaluates the template at every `(epsilon, seed)` cell, in
/// parallel, then aggregates per epsilon.
pub fn sweep(
    template: &PipelineSpec,
    epsilons: &[Epsilon],
    seeds: &[u64],
    dataset: &AlignmentDataset,
    eval: &EvalConfig,
) -> Result<SweepCurve> {
    if epsilons.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one epsilon and one seed"));
    }
    let mut eps = epsilons.to_vec();
    eps.sort_by(|a, b| a.partial_cmp(b).expect("epsilons are comparable"));
    eps.dedup();
    let specs = eps
        .iter()
        .map(|&e| template.with_epsilon(e))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, u64)> = (0..eps.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let rewards = cells
        .par_iter()
        .map(|&(i, seed)| {
            let out = run_pipeline(&specs[i].with_seed(seed), dataset)?;
            Ok(evaluate_on_task(&out.policy, dataset, eval)?.mean)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut points = Vec::with_capacity(eps.len());
    for (i, (&epsilon, spec)) in eps.iter().zip(&specs).enumerate() {
        let per_seed = rewards[i * seeds.len()..(i + 1) * seeds.len()].to_vec();
        let (mean_reward, std_err) = mean_std_err(&per_seed)?;
        let last = spec.phases.last().expect("validated pipeline has phases");
        points.push(SweepPoint {
            epsilon,
            mean_reward,
            std_err,
            seeds: seeds.len(),
            noise_multiplier: last.optimizer.noise_multiplier,
            pure_noise: last.optimizer.pure_noise,
            per_seed,
        });
    }
    Ok(SweepCurve { points })
}
