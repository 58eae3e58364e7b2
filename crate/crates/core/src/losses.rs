//! Alignment losses built on the tape: SFT, Bradley-Terry reward modelling,
//! the reference-free DPO variant, and the PPO clipped surrogate with GAE.
//!
//! Every loss is a batch mean so it can feed the optimizer directly.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamVars, Tape, Var};
use crate::error::{Error, Result};
use crate::models::{Pair, RewardNet, TinyPolicy};
use crate::tensor::{softplus, Tensor};
use crate::Token;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceTriple {
    pub prompt: Vec<Token>,
    pub chosen: Vec<Token>,
    pub rejected: Vec<Token>,
}

impl PreferenceTriple {
    pub fn new(prompt: Vec<Token>, chosen: Vec<Token>, rejected: Vec<Token>) -> Result<Self> {
        if prompt.is_empty() || chosen.is_empty() || rejected.is_empty() {
            return Err(Error::invalid("prompt and both responses must be nonempty"));
        }
        Ok(Self {
            prompt,
            chosen,
            rejected,
        })
    }
}

fn nonempty<T>(batch: &[T], what: &str) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid(format!("{what} needs a nonempty batch")));
    }
    Ok(())
}

fn chosen_pairs(batch: &[PreferenceTriple]) -> Vec<Pair<'_>> {
    batch.iter().map(|t| (&t.prompt[..], &t.chosen[..])).collect()
}

fn rejected_pairs(batch: &[PreferenceTriple]) -> Vec<Pair<'_>> {
    batch.iter().map(|t| (&t.prompt[..], &t.rejected[..])).collect()
}

/// Mean negative log-likelihood of the preferred response.
pub fn sft_loss(tape: &mut Tape, vars: &ParamVars, policy: &TinyPolicy, batch: &[PreferenceTriple]) -> Result<Var> {
    nonempty(batch, "sft_loss")?;
    let lp = policy.sequence_logprobs(tape, vars, &chosen_pairs(batch))?;
    let mean = tape.mean(lp)?;
    tape.scale(mean, -1.0)
}

/// `mean(softplus(-(a - b)))` for two `[n, 1]` columns.
fn margin_loss(tape: &mut Tape, better: Var, worse: Var) -> Result<Var> {
    let gap = tape.sub(worse, better)?;
    let per = tape.softplus(gap)?;
    tape.mean(per)
}

/// Bradley-Terry loss `-mean(log sigmoid(R(x, y+) - R(x, y-)))`.
pub fn rm_loss(tape: &mut Tape, vars: &ParamVars, rm: &RewardNet, batch: &[PreferenceTriple]) -> Result<Var> {
    nonempty(batch, "rm_loss")?;
    let mut pairs = chosen_pairs(batch);
    pairs.extend(rejected_pairs(batch));
    let scores = rm.scores(tape, vars, &pairs)?;
    let n = batch.len();
    let chosen = tape.select_rows(scores, (0..n).collect())?;
    let rejected = tape.select_rows(scores, (n..2 * n).collect())?;
    margin_loss(tape, chosen, rejected)
}

/// `-mean(log(pi(y+|x) / (pi(y+|x) + pi(y-|x))))`, evaluated as
/// `softplus(logp(y-) - logp(y+))`. No reference policy, no temperature.
pub fn dpo_loss(tape: &mut Tape, vars: &ParamVars, policy: &TinyPolicy, batch: &[PreferenceTriple]) -> Result<Var> {
    nonempty(batch, "dpo_loss")?;
    let mut pairs = chosen_pairs(batch);
    pairs.extend(rejected_pairs(batch));
    let lp = policy.sequence_logprobs(tape, vars, &pairs)?;
    let n = batch.len();
    let chosen = tape.select_rows(lp, (0..n).collect())?;
    let rejected = tape.select_rows(lp, (n..2 * n).collect())?;
    margin_loss(tape, chosen, rejected)
}

/// Per-pair value of the RM and DPO losses for a given margin.
pub fn pairwise_loss(margin: f64) -> f64 {
    softplus(-margin)
}

/// One sampled response and everything PPO needs about it.
///
/// The state before action `t` is `prompt ++ actions[..t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt: Vec<Token>,
    pub actions: Vec<Token>,
    pub rewards: Vec<f64>,
    /// One value per state plus the bootstrap value after the last action.
    pub values: Vec<f64>,
    pub old_logprobs: Vec<f64>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        let n = self.actions.len();
        if self.rewards.len() != n || self.old_logprobs.len() != n || self.values.len() != n + 1 {
            return Err(Error::invalid(format!(
                "trajectory lengths: {n} actions, {} rewards, {} old logprobs, {} values (need {})",
                self.rewards.len(),
                self.old_logprobs.len(),
                self.values.len(),
                n + 1
            )));
        }
        if let Some(lp) = self.old_logprobs.iter().find(|lp| !(**lp <= 0.0)) {
            return Err(Error::invalid(format!("old log-probability {lp} is not <= 0")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn state(&self, t: usize) -> (&[Token], &[Token]) {
        (&self.prompt, &self.actions[..t])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageEstimate {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Generalized advantage estimation, computed backward:
/// `A_t = delta_t + gamma * lambda * A_{t+1}`,
/// `delta_t = r_t + gamma * V(s_{t+1}) - V(s_t)`, `return_t = A_t + V(s_t)`.
pub fn gae(traj: &Trajectory, gamma: f64, lambda_gae: f64) -> Result<AdvantageEstimate> {
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda_gae) {
        return Err(Error::invalid(format!(
            "gamma and lambda must lie in [0, 1], got {gamma} and {lambda_gae}"
        )));
    }
    traj.validate()?;
    let n = traj.len();
    let mut advantages = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let delta = traj.rewards[t] + gamma * traj.values[t + 1] - traj.values[t];
        next = delta + gamma * lambda_gae * next;
        advantages[t] = next;
    }
    let returns = advantages.iter().zip(&traj.values).map(|(a, v)| a + v).collect();
    Ok(AdvantageEstimate { advantages, returns })
}

/// `min(r * A, clip(r, 1 - eps, 1 + eps) * A)` for a single step.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage)
}

/// Negative mean clipped surrogate over every action of every trajectory.
pub fn ppo_loss(
    tape: &mut Tape,
    vars: &ParamVars,
    policy: &TinyPolicy,
    trajectories: &[Trajectory],
    advantages: &[AdvantageEstimate],
    clip_eps: f64,
) -> Result<Var> {
    if !(clip_eps > 0.0 && clip_eps < 1.0) {
        return Err(Error::invalid(format!("clip_eps must be in (0, 1), got {clip_eps}")));
    }
    nonempty(trajectories, "ppo_loss")?;
    if trajectories.len() != advantages.len() {
        return Err(Error::invalid("one advantage estimate per trajectory is required"));
    }
    let mut old = Vec::new();
    let mut adv = Vec::new();
    for (traj, est) in trajectories.iter().zip(advantages) {
        traj.validate()?;
        if est.advantages.len() != traj.len() {
            return Err(Error::invalid("advantage length differs from trajectory length"));
        }
        old.extend(&traj.old_logprobs);
        adv.extend(&est.advantages);
    }
    if adv.is_empty() {
        return Err(Error::invalid("ppo_loss needs at least one action"));
    }
    let pairs: Vec<Pair<'_>> = trajectories
        .iter()
        .map(|t| (&t.prompt[..], &t.actions[..]))
        .collect();
    let fwd = policy.forward(tape, vars, &pairs)?;
    let n = adv.len();
    let old = tape.constant(Tensor::new(vec![n, 1], old)?);
    let adv = tape.constant(Tensor::new(vec![n, 1], adv)?);
    let log_ratio = tape.sub(fwd.token_logprobs, old)?;
    let ratio = tape.exp(log_ratio)?;
    let unclipped = tape.mul(ratio, adv)?;
    let clipped = tape.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps)?;
    let clipped = tape.mul(clipped, adv)?;
    let surrogate = tape.minimum(unclipped, clipped)?;
    let mean = tape.mean(surrogate)?;
    tape.scale(mean, -1.0)
}

/// `coef * mean((V(s_t) - return_t)^2)` over every state of every trajectory.
pub fn value_loss(
    tape: &mut Tape,
    vars: &ParamVars,
    value_net: &RewardNet,
    trajectories: &[Trajectory],
    advantages: &[AdvantageEstimate],
    coef: f64,
) -> Result<Var> {
    nonempty(trajectories, "value_loss")?;
    let mut states = Vec::new();
    let mut targets = Vec::new();
    for (traj, est) in trajectories.iter().zip(advantages) {
        if est.returns.len() != traj.len() {
            return Err(Error::invalid("return length differs from trajectory length"));
        }
        for t in 0..traj.len() {
            states.push(traj.state(t));
        }
        targets.extend(&est.returns);
    }
    if states.is_empty() {
        return Err(Error::invalid("value_loss needs at least one state"));
    }
    let n = targets.len();
    let v = value_net.scores(tape, vars, &states)?;
    let target = tape.constant(Tensor::new(vec![n, 1], targets)?);
    let err = tape.sub(v, target)?;
    let sq = tape.mul(err, err)?;
    let mean = tape.mean(sq)?;
    tape.scale(mean, coef)
}
