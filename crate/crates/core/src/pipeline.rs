//! Multi-phase private alignment: SFT followed by DPO, or SFT, reward
//! modelling and PPO. Each phase trains on its own disjoint slice of the
//! data with its own DP optimizer and its own full privacy budget.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gradient, ParamVars, Tape, Var};
use crate::data::{partition_disjoint, AlignmentDataset, PhasePartition};
use crate::error::{Error, Result};
use crate::losses::{self, gae, AdvantageEstimate, PreferenceTriple, Trajectory};
use crate::models::{sample_categorical, PolicyConfig, RewardConfig, RewardNet, TinyPolicy};
use crate::optim::{ClippingMode, DpOptimizer, DpOptimizerConfig, GradInput};
use crate::params::{GradSet, ParamSet};
use crate::privacy::{
    phase_budget_report, sigma_for_budget, AccountantConfig, BudgetReport, Epsilon, NoiseCalibration,
    PrivacyBudget,
};
use crate::tensor::Tensor;
use crate::Token;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Sft,
    Rm,
    Dpo,
    Ppo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    DpoPipeline,
    RlhfPipeline,
}

impl PipelineKind {
    pub fn phase_kinds(self) -> &'static [LossKind] {
        match self {
            PipelineKind::DpoPipeline => &[LossKind::Sft, LossKind::Dpo],
            PipelineKind::RlhfPipeline => &[LossKind::Sft, LossKind::Rm, LossKind::Ppo],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PipelineKind::DpoPipeline => "DPO",
            PipelineKind::RlhfPipeline => "PPO",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub loss_kind: LossKind,
    pub optimizer: DpOptimizerConfig,
    pub epochs: u32,
    pub batch_size: usize,
    pub budget: PrivacyBudget,
}

impl PhaseSpec {
    /// Builds a phase whose noise multiplier is derived from `budget`.
    /// `pure_noise_sigma` is the noise level used when epsilon is zero.
    pub fn calibrated(
        loss_kind: LossKind,
        optimizer: DpOptimizerConfig,
        epochs: u32,
        batch_size: usize,
        budget: PrivacyBudget,
        pure_noise_sigma: f64,
    ) -> Result<Self> {
        let mut spec = Self {
            loss_kind,
            optimizer,
            epochs,
            batch_size,
            budget,
        };
        spec.recalibrate(budget, pure_noise_sigma)?;
        Ok(spec)
    }

    pub fn recalibrate(&mut self, budget: PrivacyBudget, pure_noise_sigma: f64) -> Result<()> {
        let acct = AccountantConfig::new(self.epochs)?;
        self.budget = budget;
        match sigma_for_budget(&budget, &acct)? {
            NoiseCalibration::PureNoise => {
                if !(pure_noise_sigma.is_finite() && pure_noise_sigma > 0.0) {
                    return Err(Error::invalid(format!(
                        "pure_noise_sigma must be > 0, got {pure_noise_sigma}"
                    )));
                }
                self.optimizer.pure_noise = true;
                self.optimizer.noise_multiplier = pure_noise_sigma;
            }
            NoiseCalibration::Multiplier(s) => {
                self.optimizer.pure_noise = false;
                self.optimizer.noise_multiplier = s;
            }
        }
        Ok(())
    }

    pub fn violations(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .optimizer
            .violations()
            .into_iter()
            .map(|(f, m)| (format!("optimizer.{f}"), m))
            .collect();
        if self.epochs == 0 {
            out.push(("epochs".into(), "must be >= 1".into()));
        }
        if self.batch_size == 0 {
            out.push(("batch_size".into(), "must be >= 1".into()));
        }
        if self.epochs > 0 {
            if let Err(e) = self.check_calibration() {
                out.push(("optimizer.noise_multiplier".into(), e.to_string()));
            }
        }
        out
    }

    /// The optimizer's noise settings must be the ones the accountant
    /// derives from the budget.
    pub fn check_calibration(&self) -> Result<()> {
        let acct = AccountantConfig::new(self.epochs)?;
        let sigma = self.optimizer.noise_multiplier;
        match sigma_for_budget(&self.budget, &acct)? {
            NoiseCalibration::PureNoise => {
                if !self.optimizer.pure_noise || !(sigma > 0.0) {
                    return Err(Error::Privacy(
                        "epsilon = 0 requires pure-noise mode with a positive noise multiplier".into(),
                    ));
                }
            }
            NoiseCalibration::Multiplier(expected) => {
                let close = (sigma - expected).abs() <= 1e-12 * expected.max(1.0);
                if self.optimizer.pure_noise || !close {
                    return Err(Error::Privacy(format!(
                        "noise multiplier {sigma} does not match {expected} required by epsilon = {}, delta = {:e}, epochs = {}",
                        self.budget.epsilon, self.budget.delta, self.epochs
                    )));
                }
            }
        }
        Ok(())
    }
}

/// PPO rollout and objective settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda_gae: f64,
    pub clip_eps: f64,
    pub value_coef: f64,
    pub max_response_len: usize,
    pub temperature: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda_gae: 0.95,
            clip_eps: 0.2,
            value_coef: 0.5,
            max_response_len: 8,
            temperature: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.gamma) {
            out.push(("gamma", format!("must be in [0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda_gae) {
            out.push(("lambda_gae", format!("must be in [0, 1], got {}", self.lambda_gae)));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            out.push(("clip_eps", format!("must be in (0, 1), got {}", self.clip_eps)));
        }
        if !(self.value_coef.is_finite() && self.value_coef >= 0.0) {
            out.push(("value_coef", format!("must be >= 0, got {}", self.value_coef)));
        }
        if self.max_response_len == 0 {
            out.push(("max_response_len", "must be >= 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            out.push(("temperature", format!("must be > 0, got {}", self.temperature)));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub kind: PipelineKind,
    pub phases: Vec<PhaseSpec>,
    pub partition_fractions: Vec<f64>,
    pub seed: u64,
    pub policy: PolicyConfig,
    /// Shape of the reward model and of the PPO value head.
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
    /// Noise multiplier used in pure-noise mode (epsilon = 0).
    pub pure_noise_sigma: f64,
}

impl PipelineSpec {
    pub fn violations(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let kinds: Vec<LossKind> = self.phases.iter().map(|p| p.loss_kind).collect();
        if kinds != self.kind.phase_kinds() {
            out.push((
                "phases".into(),
                format!("{:?} needs phases {:?}, got {:?}", self.kind, self.kind.phase_kinds(), kinds),
            ));
        }
        if self.partition_fractions.len() != self.phases.len() {
            out.push((
                "partition_fractions".into(),
                format!(
                    "{} fractions for {} phases",
                    self.partition_fractions.len(),
                    self.phases.len()
                ),
            ));
        }
        let total: f64 = self.partition_fractions.iter().sum();
        if self.partition_fractions.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > 1e-9 {
            out.push((
                "partition_fractions".into(),
                format!("must be positive and sum to 1, got {:?}", self.partition_fractions),
            ));
        }
        for (i, p) in self.phases.iter().enumerate() {
            for (f, m) in p.violations() {
                out.push((format!("phases[{i}].{f}"), m));
            }
        }
        for (f, m) in self.policy.violations() {
            out.push((format!("policy.{f}"), m));
        }
        for (f, m) in self.reward.violations() {
            out.push((format!("reward.{f}"), m));
        }
        for (f, m) in self.ppo.violations() {
            out.push((format!("ppo.{f}"), m));
        }
        if !(self.pure_noise_sigma.is_finite() && self.pure_noise_sigma > 0.0) {
            out.push(("pure_noise_sigma".into(), format!("must be > 0, got {}", self.pure_noise_sigma)));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some((f, m)) => Err(Error::invalid(format!("{f}: {m}"))),
        }
    }

    /// The same pipeline with every phase recalibrated to `epsilon`.
    pub fn with_epsilon(&self, epsilon: Epsilon) -> Result<Self> {
        let mut out = self.clone();
        for p in &mut out.phases {
            let budget = PrivacyBudget::new(epsilon, p.budget.delta)?;
            p.recalibrate(budget, self.pure_noise_sigma)?;
        }
        Ok(out)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn pure_noise(&self) -> bool {
        self.phases.iter().any(|p| p.optimizer.pure_noise)
    }
}

/// The networks a pipeline trains.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub policy: TinyPolicy,
    pub reward: Option<RewardNet>,
    pub value: Option<RewardNet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub loss_kind: LossKind,
    pub examples: usize,
    pub steps: usize,
    pub noise_multiplier: f64,
    pub pure_noise: bool,
    pub epoch_mean_loss: Vec<f64>,
    /// Share of clipped gradients per epoch.
    pub epoch_clip_rate: Vec<f64>,
    /// Times every example was used; identical for all examples.
    pub visits_per_example: u32,
    pub elapsed_ms: u128,
}

/// A loss over a subset of a phase's examples.
trait Objective {
    fn begin_epoch(&mut self, _params: &ParamSet, _rng: &mut ChaCha8Rng) -> Result<()> {
        Ok(())
    }

    fn loss(&self, tape: &mut Tape, vars: &ParamVars, items: &[usize]) -> Result<Var>;
}

struct PreferenceObjective<'a> {
    kind: LossKind,
    policy: Option<&'a TinyPolicy>,
    reward: Option<&'a RewardNet>,
    data: &'a [PreferenceTriple],
}

impl Objective for PreferenceObjective<'_> {
    fn loss(&self, tape: &mut Tape, vars: &ParamVars, items: &[usize]) -> Result<Var> {
        let batch: Vec<PreferenceTriple> = items.iter().map(|&i| self.data[i].clone()).collect();
        match (self.kind, self.policy, self.reward) {
            (LossKind::Sft, Some(p), _) => losses::sft_loss(tape, vars, p, &batch),
            (LossKind::Dpo, Some(p), _) => losses::dpo_loss(tape, vars, p, &batch),
            (LossKind::Rm, _, Some(r)) => losses::rm_loss(tape, vars, r, &batch),
            _ => Err(Error::invalid("objective is missing its model")),
        }
    }
}

struct PpoObjective<'a> {
    policy: &'a TinyPolicy,
    value: &'a RewardNet,
    reward: &'a RewardNet,
    prompts: Vec<&'a [Token]>,
    config: &'a PpoConfig,
    trajectories: Vec<Trajectory>,
    advantages: Vec<AdvantageEstimate>,
}

impl Objective for PpoObjective<'_> {
    fn begin_epoch(&mut self, params: &ParamSet, rng: &mut ChaCha8Rng) -> Result<()> {
        let policy = self.policy.with_params(params.with_prefix(TinyPolicy::PREFIX))?;
        let value = self.value.with_params(params.with_prefix(self.value.prefix()))?;
        self.trajectories.clear();
        self.advantages.clear();
        for prompt in &self.prompts {
            let traj = rollout(&policy, &value, self.reward, prompt, self.config, rng)?;
            self.advantages.push(gae(&traj, self.config.gamma, self.config.lambda_gae)?);
            self.trajectories.push(traj);
        }
        Ok(())
    }

    fn loss(&self, tape: &mut Tape, vars: &ParamVars, items: &[usize]) -> Result<Var> {
        let trajs: Vec<Trajectory> = items.iter().map(|&i| self.trajectories[i].clone()).collect();
        let advs: Vec<AdvantageEstimate> = items.iter().map(|&i| self.advantages[i].clone()).collect();
        let policy_loss = losses::ppo_loss(tape, vars, self.policy, &trajs, &advs, self.config.clip_eps)?;
        let value_loss = losses::value_loss(tape, vars, self.value, &trajs, &advs, self.config.value_coef)?;
        tape.add(policy_loss, value_loss)
    }
}

/// Samples one response and records what PPO needs: behaviour log-probs,
/// a terminal reward from the frozen reward model, and value estimates
/// (the value after the final token is 0).
pub fn rollout(
    policy: &TinyPolicy,
    value: &RewardNet,
    reward: &RewardNet,
    prompt: &[Token],
    config: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let window = policy.config().context_window;
    let max_len = config.max_response_len.min(window.saturating_sub(prompt.len()));
    if max_len == 0 {
        return Err(Error::ContextOverflow {
            len: prompt.len() + 1,
            window,
        });
    }
    let mut seq = prompt.to_vec();
    let mut actions = Vec::new();
    let mut old_logprobs = Vec::new();
    for _ in 0..max_len {
        let logits = policy.next_logits(&seq)?;
        let tempered: Vec<f64> = logits.iter().map(|l| l / config.temperature).collect();
        let probs = Tensor::vector(tempered)?.softmax_rows()?.into_data();
        let tok = sample_categorical(&probs, rng.random::<f64>());
        // PPO ratios are taken against the untempered policy
        let base = Tensor::vector(logits)?.log_softmax_rows()?.into_data();
        old_logprobs.push(base[tok]);
        actions.push(tok as Token);
        seq.push(tok as Token);
        if Some(tok as Token) == policy.config().end_token {
            break;
        }
    }
    let n = actions.len();
    let mut rewards = vec![0.0; n];
    rewards[n - 1] = reward.reward_score(prompt, &actions)?;
    let states: Vec<(&[Token], &[Token])> = (0..n).map(|t| (prompt, &actions[..t])).collect();
    let mut values = value.score_batch(&states)?;
    values.push(0.0);
    Ok(Trajectory {
        prompt: prompt.to_vec(),
        actions,
        rewards,
        values,
        old_logprobs,
    })
}

fn batch_gradient(
    objective: &dyn Objective,
    params: &ParamSet,
    items: &[usize],
    mode: ClippingMode,
) -> Result<(f64, Vec<GradSet>)> {
    match mode {
        ClippingMode::Batch => {
            let (loss, g) = gradient(params, |t, v| objective.loss(t, v, items))?;
            Ok((loss, vec![g]))
        }
        ClippingMode::PerSample => {
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(items.len());
            for &i in items {
                let (loss, g) = gradient(params, |t, v| objective.loss(t, v, &[i]))?;
                total += loss;
                grads.push(g);
            }
            Ok((total / items.len() as f64, grads))
        }
    }
}

/// Epoch loop shared by every phase: shuffle without replacement, cut into
/// mini-batches, one private step per mini-batch.
fn train(
    objective: &mut dyn Objective,
    mut params: ParamSet,
    n: usize,
    phase: &PhaseSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(ParamSet, PhaseMetrics)> {
    use rand::seq::SliceRandom;

    let started = Instant::now();
    let mut optimizer = DpOptimizer::new(
        phase.optimizer.clone(),
        &params,
        ChaCha8Rng::seed_from_u64(rng.random()),
    )?;
    let mut visits = vec![0u32; n];
    let mut order: Vec<usize> = (0..n).collect();
    let (mut epoch_mean_loss, mut epoch_clip_rate) = (Vec::new(), Vec::new());
    let mut steps = 0usize;
    for _ in 0..phase.epochs {
        objective.begin_epoch(&params, rng)?;
        order.shuffle(rng);
        let (mut loss_sum, mut clip_sum, mut batches) = (0.0, 0.0, 0usize);
        for items in order.chunks(phase.batch_size) {
            let wrap = |e: Error| Error::Training {
                step: steps,
                source: Box::new(e),
            };
            let (loss, grads) = batch_gradient(objective, &params, items, phase.optimizer.clipping_mode).map_err(wrap)?;
            let input = match phase.optimizer.clipping_mode {
                ClippingMode::Batch => GradInput::Batch(&grads[0]),
                ClippingMode::PerSample => GradInput::PerSample(&grads),
            };
            let (next, info) = optimizer.step(&params, input).map_err(wrap)?;
            params = next;
            for &i in items {
                visits[i] += 1;
            }
            loss_sum += loss;
            clip_sum += info.clip_fraction;
            batches += 1;
            steps += 1;
        }
        epoch_mean_loss.push(loss_sum / batches as f64);
        epoch_clip_rate.push(clip_sum / batches as f64);
    }
    if let Some(i) = visits.iter().position(|&v| v != phase.epochs) {
        return Err(Error::invalid(format!(
            "example {i} was visited {} times, expected {}",
            visits[i], phase.epochs
        )));
    }
    let metrics = PhaseMetrics {
        loss_kind: phase.loss_kind,
        examples: n,
        steps,
        noise_multiplier: phase.optimizer.noise_multiplier,
        pure_noise: phase.optimizer.pure_noise,
        epoch_mean_loss,
        epoch_clip_rate,
        visits_per_example: phase.epochs,
        elapsed_ms: started.elapsed().as_millis(),
    };
    Ok((params, metrics))
}

/// Runs one phase on its data slice and returns the updated models.
pub fn run_phase(
    models: &Models,
    data: &[PreferenceTriple],
    phase: &PhaseSpec,
    ppo: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Models, PhaseMetrics)> {
    if data.is_empty() {
        return Err(Error::invalid("phase data is empty"));
    }
    if let Some((f, m)) = phase.violations().into_iter().next() {
        return Err(Error::invalid(format!("{f}: {m}")));
    }
    let mut out = models.clone();
    let n = data.len();
    let metrics = match phase.loss_kind {
        LossKind::Sft | LossKind::Dpo => {
            let mut obj = PreferenceObjective {
                kind: phase.loss_kind,
                policy: Some(&models.policy),
                reward: None,
                data,
            };
            let (params, metrics) = train(&mut obj, models.policy.params().clone(), n, phase, rng)?;
            out.policy = models.policy.with_params(params)?;
            metrics
        }
        LossKind::Rm => {
            let rm = models
                .reward
                .as_ref()
                .ok_or_else(|| Error::invalid("reward-model phase needs a reward network"))?;
            let mut obj = PreferenceObjective {
                kind: LossKind::Rm,
                policy: None,
                reward: Some(rm),
                data,
            };
            let (params, metrics) = train(&mut obj, rm.params().clone(), n, phase, rng)?;
            out.reward = Some(rm.with_params(params)?);
            metrics
        }
        LossKind::Ppo => {
            let (Some(rm), Some(value)) = (models.reward.as_ref(), models.value.as_ref()) else {
                return Err(Error::invalid("PPO phase needs a reward model and a value network"));
            };
            let mut obj = PpoObjective {
                policy: &models.policy,
                value,
                reward: rm,
                prompts: data.iter().map(|t| &t.prompt[..]).collect(),
                config: ppo,
                trajectories: Vec::new(),
                advantages: Vec::new(),
            };
            let joint = models.policy.params().merged(value.params())?;
            let (params, metrics) = train(&mut obj, joint, n, phase, rng)?;
            out.policy = models.policy.with_params(params.with_prefix(TinyPolicy::PREFIX))?;
            out.value = Some(value.with_params(params.with_prefix(value.prefix()))?);
            metrics
        }
    };
    Ok((out, metrics))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub kind: PipelineKind,
    pub seed: u64,
    pub partition_sizes: Vec<usize>,
    pub partitions_disjoint: bool,
    pub pure_noise: bool,
    pub phases: Vec<PhaseMetrics>,
    pub budget: BudgetReport,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub policy: TinyPolicy,
    /// Policy right after supervised fine-tuning.
    pub sft_policy: TinyPolicy,
    pub initial_policy: TinyPolicy,
    pub reward_model: Option<RewardNet>,
    pub partition: PhasePartition,
    pub report: PipelineReport,
}

/// Partitions the data, then runs every phase in order.
pub fn run_pipeline(spec: &PipelineSpec, dataset: &AlignmentDataset) -> Result<PipelineOutput> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if dataset.vocab_size() > spec.policy.vocab_size {
        return Err(Error::invalid(format!(
            "dataset uses {} tokens but the policy vocabulary has {}",
            dataset.vocab_size(),
            spec.policy.vocab_size
        )));
    }
    let partition = partition_disjoint(dataset.len(), &spec.partition_fractions, spec.seed)?;
    partition.verify(dataset.len())?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let policy = TinyPolicy::new(spec.policy.clone(), rng.random())?;
    let (reward, value) = match spec.kind {
        PipelineKind::DpoPipeline => (None, None),
        PipelineKind::RlhfPipeline => (
            Some(RewardNet::new(spec.reward.clone(), RewardNet::REWARD_PREFIX, rng.random())?),
            Some(RewardNet::new(spec.reward.clone(), RewardNet::VALUE_PREFIX, rng.random())?),
        ),
    };
    let initial_policy = policy.clone();
    let mut models = Models { policy, reward, value };
    let mut sft_policy = None;
    let mut metrics = Vec::new();
    for (phase, part) in spec.phases.iter().zip(&partition.parts) {
        let data = dataset.select(part);
        let mut phase_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let (next, m) = run_phase(&models, &data, phase, &spec.ppo, &mut phase_rng)?;
        models = next;
        if phase.loss_kind == LossKind::Sft {
            sft_policy = Some(models.policy.clone());
        }
        metrics.push(m);
    }
    let budgets: Vec<PrivacyBudget> = spec.phases.iter().map(|p| p.budget).collect();
    let report = PipelineReport {
        kind: spec.kind,
        seed: spec.seed,
        partition_sizes: partition.sizes(),
        partitions_disjoint: true,
        pure_noise: spec.pure_noise(),
        phases: metrics,
        budget: phase_budget_report(&budgets, true)?,
    };
    Ok(PipelineOutput {
        sft_policy: sft_policy.unwrap_or_else(|| models.policy.clone()),
        policy: models.policy,
        initial_policy,
        reward_model: models.reward,
        partition,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_preferences, GeneratorConfig};
    use crate::optim::Variant;

    fn budget(eps: Epsilon) -> PrivacyBudget {
        PrivacyBudget::new(eps, 1e-5).unwrap()
    }

    fn optimizer() -> DpOptimizerConfig {
        DpOptimizerConfig {
            learning_rate: 1e-2,
            ..DpOptimizerConfig::default()
        }
    }

    fn spec(kind: PipelineKind, eps: Epsilon) -> PipelineSpec {
        let phases = kind
            .phase_kinds()
            .iter()
            .map(|&k| PhaseSpec::calibrated(k, optimizer(), 2, 16, budget(eps), 1.0).unwrap())
            .collect::<Vec<_>>();
        let fractions = match kind {
            PipelineKind::DpoPipeline => vec![0.5, 0.5],
            PipelineKind::RlhfPipeline => vec![0.4, 0.3, 0.3],
        };
        PipelineSpec {
            kind,
            phases,
            partition_fractions: fractions,
            seed: 5,
            policy: PolicyConfig {
                vocab_size: 8,
                context_window: 6,
                hidden_dim: 8,
                end_token: None,
            },
            reward: RewardConfig {
                vocab_size: 8,
                context_window: 6,
                hidden_dim: 8,
            },
            ppo: PpoConfig {
                max_response_len: 4,
                ..PpoConfig::default()
            },
            pure_noise_sigma: 1.0,
        }
    }

    fn dataset() -> AlignmentDataset {
        generate_synthetic_preferences(&GeneratorConfig {
            n: 120,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn calibration_follows_budget() {
        let p = PhaseSpec::calibrated(LossKind::Sft, optimizer(), 3, 8, budget(Epsilon::Finite(3.0)), 1.0).unwrap();
        assert!((p.optimizer.noise_multiplier - 7.165_104_690_08).abs() < 1e-9);
        p.check_calibration().unwrap();
        let mut bad = p.clone();
        bad.optimizer.noise_multiplier = 1.0;
        assert!(bad.check_calibration().is_err());
        let z = PhaseSpec::calibrated(LossKind::Sft, optimizer(), 3, 8, budget(Epsilon::Zero), 2.0).unwrap();
        assert!(z.optimizer.pure_noise && z.optimizer.noise_multiplier == 2.0);
        let inf = PhaseSpec::calibrated(LossKind::Sft, optimizer(), 3, 8, budget(Epsilon::Infinite), 2.0).unwrap();
        assert_eq!(inf.optimizer.noise_multiplier, 0.0);
    }

    #[test]
    fn spec_rejects_wrong_phase_order() {
        let mut s = spec(PipelineKind::DpoPipeline, Epsilon::Infinite);
        s.phases.swap(0, 1);
        assert!(s.validate().is_err());
        let mut s = spec(PipelineKind::RlhfPipeline, Epsilon::Infinite);
        s.partition_fractions = vec![0.5, 0.5];
        let v = s.violations();
        assert!(v.iter().any(|(f, _)| f == "partition_fractions"));
    }

    #[test]
    fn dpo_pipeline_is_deterministic_and_visits_each_example_epoch_times() {
        let s = spec(PipelineKind::DpoPipeline, Epsilon::Finite(3.0));
        let d = dataset();
        let a = run_pipeline(&s, &d).unwrap();
        let b = run_pipeline(&s, &d).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.report.partition_sizes, vec![60, 60]);
        for m in &a.report.phases {
            assert_eq!(m.visits_per_example, 2);
            assert_eq!(m.steps, 2 * 4);
            assert_eq!(m.epoch_mean_loss.len(), 2);
        }
        assert_eq!(a.report.budget.overall, budget(Epsilon::Finite(3.0)));
    }

    #[test]
    fn adamw_without_decay_matches_adam() {
        let d = dataset();
        let mut s = spec(PipelineKind::DpoPipeline, Epsilon::Finite(2.0));
        for p in &mut s.phases {
            p.optimizer.weight_decay = 0.0;
        }
        let adamw = run_pipeline(&s, &d).unwrap().policy;
        for p in &mut s.phases {
            p.optimizer.variant = Variant::DpAdam;
        }
        assert_eq!(run_pipeline(&s, &d).unwrap().policy, adamw);
    }

    #[test]
    fn rlhf_pipeline_runs_all_three_phases() {
        let s = spec(PipelineKind::RlhfPipeline, Epsilon::Infinite);
        let out = run_pipeline(&s, &dataset()).unwrap();
        let kinds: Vec<LossKind> = out.report.phases.iter().map(|m| m.loss_kind).collect();
        assert_eq!(kinds, vec![LossKind::Sft, LossKind::Rm, LossKind::Ppo]);
        assert!(out.reward_model.is_some());
        assert_eq!(out.report.partition_sizes.iter().sum::<usize>(), 120);
        for m in &out.report.phases {
            assert!(m.epoch_mean_loss.iter().all(|l| l.is_finite()));
        }
    }

    #[test]
    fn per_sample_clipping_runs() {
        let mut s = spec(PipelineKind::DpoPipeline, Epsilon::Finite(5.0));
        for p in &mut s.phases {
            p.optimizer.clipping_mode = ClippingMode::PerSample;
        }
        let out = run_pipeline(&s, &dataset()).unwrap();
        assert!(out.report.phases[1].epoch_clip_rate.iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn zero_epsilon_flags_pure_noise() {
        let s = spec(PipelineKind::DpoPipeline, Epsilon::Zero);
        let out = run_pipeline(&s, &dataset()).unwrap();
        assert!(out.report.pure_noise);
        assert!(out.report.phases.iter().all(|m| m.pure_noise));
    }

    #[test]
    fn mismatched_noise_is_rejected() {
        let mut s = spec(PipelineKind::DpoPipeline, Epsilon::Finite(1.0));
        s.phases[1].optimizer.noise_multiplier = 0.5;
        assert!(run_pipeline(&s, &dataset()).is_err());
    }
}
