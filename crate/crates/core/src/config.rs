//! One JSON document describing a run: data, pipeline, per-phase optimizer
//! settings, privacy budget and evaluation.
//!
//! Unknown keys are rejected. [`RunConfig::violations`] checks every nested
//! value and reports each problem under its key path, e.g.
//! `phases.rm.optimizer.learning_rate`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_jsonl, generate_synthetic_preferences, AlignmentDataset, GeneratorConfig};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::models::{PolicyConfig, RewardConfig};
use crate::optim::{ClippingMode, DpOptimizerConfig, Variant};
use crate::pipeline::{LossKind, PhaseSpec, PipelineKind, PipelineSpec, PpoConfig};
use crate::privacy::{Epsilon, PrivacyBudget};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub optimizer: DpOptimizerConfig,
    pub epochs: u32,
    pub batch_size: usize,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            optimizer: DpOptimizerConfig::default(),
            epochs: 3,
            batch_size: 32,
        }
    }
}

/// Settings for each loss; a pipeline reads only the phases it runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhasesConfig {
    pub sft: PhaseConfig,
    pub rm: PhaseConfig,
    pub dpo: PhaseConfig,
    pub ppo: PhaseConfig,
}

impl PhasesConfig {
    pub fn get(&self, kind: LossKind) -> &PhaseConfig {
        match kind {
            LossKind::Sft => &self.sft,
            LossKind::Rm => &self.rm,
            LossKind::Dpo => &self.dpo,
            LossKind::Ppo => &self.ppo,
        }
    }

    pub fn get_mut(&mut self, kind: LossKind) -> &mut PhaseConfig {
        match kind {
            LossKind::Sft => &mut self.sft,
            LossKind::Rm => &mut self.rm,
            LossKind::Dpo => &mut self.dpo,
            LossKind::Ppo => &mut self.ppo,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub epsilons: Vec<Epsilon>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            epsilons: standard_epsilon_grid(),
            seeds: (0..5).collect(),
        }
    }
}

/// `{0, 1, 2, 3, 4, 5, 10, inf}`.
pub fn standard_epsilon_grid() -> Vec<Epsilon> {
    let mut out = vec![Epsilon::Zero];
    out.extend([1.0, 2.0, 3.0, 4.0, 5.0, 10.0].map(Epsilon::Finite));
    out.push(Epsilon::Infinite);
    out
}

fn key_name(kind: LossKind) -> &'static str {
    match kind {
        LossKind::Sft => "sft",
        LossKind::Rm => "rm",
        LossKind::Dpo => "dpo",
        LossKind::Ppo => "ppo",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: PipelineKind,
    pub epsilon: Epsilon,
    pub delta: f64,
    pub seed: u64,
    /// JSONL dataset to train on; when absent, `generator` makes one.
    pub dataset: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub phases: PhasesConfig,
    /// Share of the data for each phase in order; defaults to an even
    /// split for DPO and 40/30/30 for RLHF.
    pub partition_fractions: Option<Vec<f64>>,
    pub policy: PolicyConfig,
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
    /// Noise multiplier for the epsilon = 0 runs.
    pub pure_noise_sigma: f64,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineKind::DpoPipeline,
            epsilon: Epsilon::Infinite,
            delta: 1e-5,
            seed: 0,
            dataset: None,
            generator: GeneratorConfig::default(),
            phases: PhasesConfig::default(),
            partition_fractions: None,
            policy: PolicyConfig::default(),
            reward: RewardConfig::default(),
            ppo: PpoConfig::default(),
            pure_noise_sigma: 1.0,
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Settings tuned for the synthetic task on a laptop CPU.
    pub fn desk(pipeline: PipelineKind) -> Self {
        let base = PhaseConfig {
            optimizer: DpOptimizerConfig {
                variant: Variant::DpAdamw,
                learning_rate: 0.05,
                weight_decay: 0.01,
                clip_norm: 0.1,
                denom_epsilon: 1e-8,
                clipping_mode: ClippingMode::PerSample,
                ..DpOptimizerConfig::default()
            },
            epochs: 3,
            batch_size: 256,
        };
        let rm = PhaseConfig {
            optimizer: DpOptimizerConfig {
                learning_rate: 0.03,
                clip_norm: 1.0,
                ..base.optimizer.clone()
            },
            epochs: 5,
            batch_size: 64,
        };
        Self {
            pipeline,
            generator: GeneratorConfig {
                n: 8000,
                ..GeneratorConfig::default()
            },
            phases: PhasesConfig {
                sft: base.clone(),
                rm,
                dpo: base.clone(),
                ppo: base,
            },
            policy: PolicyConfig {
                vocab_size: 8,
                context_window: 6,
                hidden_dim: 16,
                end_token: None,
            },
            reward: RewardConfig {
                vocab_size: 8,
                context_window: 6,
                hidden_dim: 32,
            },
            ppo: PpoConfig {
                max_response_len: 4,
                ..PpoConfig::default()
            },
            eval: EvalConfig {
                n_samples: 1000,
                ..EvalConfig::default()
            },
            ..Self::default()
        }
    }

    /// The desk DPO preset with plain DP-SGD in both phases.
    pub fn desk_sgd() -> Self {
        let mut c = Self::desk(PipelineKind::DpoPipeline);
        for kind in [LossKind::Sft, LossKind::Dpo] {
            let p = c.phases.get_mut(kind);
            p.optimizer.variant = Variant::DpSgd;
            p.optimizer.learning_rate = 2.0;
            p.batch_size = 128;
        }
        c
    }

    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config(vec![format!("{path}: {inner}")])
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn partition_fractions(&self) -> Vec<f64> {
        match &self.partition_fractions {
            Some(f) => f.clone(),
            None => match self.pipeline {
                PipelineKind::DpoPipeline => vec![0.5, 0.5],
                PipelineKind::RlhfPipeline => vec![0.4, 0.3, 0.3],
            },
        }
    }

    /// Every problem with the configuration, keyed by path.
    pub fn violations(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        fn nested(out: &mut Vec<(String, String)>, prefix: &str, items: Vec<(&'static str, String)>) {
            out.extend(items.into_iter().map(|(k, m)| (format!("{prefix}.{k}"), m)));
        }
        nested(&mut out, "generator", self.generator.violations());
        nested(&mut out, "policy", self.policy.violations());
        nested(&mut out, "reward", self.reward.violations());
        nested(&mut out, "ppo", self.ppo.violations());
        nested(&mut out, "eval", self.eval.violations());
        for kind in [LossKind::Sft, LossKind::Rm, LossKind::Dpo, LossKind::Ppo] {
            let p = self.phases.get(kind);
            let prefix = format!("phases.{}", key_name(kind));
            nested(&mut out, &format!("{prefix}.optimizer"), p.optimizer.violations());
            if p.epochs == 0 {
                out.push((format!("{prefix}.epochs"), "must be >= 1".into()));
            }
            if p.batch_size == 0 {
                out.push((format!("{prefix}.batch_size"), "must be >= 1".into()));
            }
            if p.optimizer.noise_multiplier != 0.0 || p.optimizer.pure_noise {
                out.push((
                    format!("{prefix}.optimizer"),
                    "noise_multiplier and pure_noise are derived from epsilon and must not be set".into(),
                ));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            out.push(("delta".into(), format!("must be in (0, 1), got {}", self.delta)));
        }
        if !(self.pure_noise_sigma.is_finite() && self.pure_noise_sigma > 0.0) {
            out.push(("pure_noise_sigma".into(), format!("must be > 0, got {}", self.pure_noise_sigma)));
        }
        let fractions = self.partition_fractions();
        let phases = self.pipeline.phase_kinds().len();
        let total: f64 = fractions.iter().sum();
        if fractions.len() != phases || fractions.iter().any(|f| !(*f > 0.0)) || (total - 1.0).abs() > 1e-9 {
            out.push((
                "partition_fractions".into(),
                format!("need {phases} positive values summing to 1, got {fractions:?}"),
            ));
        }
        if self.dataset.is_none() {
            let g = &self.generator;
            if g.vocab_size > self.policy.vocab_size {
                out.push((
                    "policy.vocab_size".into(),
                    format!("{} is smaller than generator.vocab_size {}", self.policy.vocab_size, g.vocab_size),
                ));
            }
            if g.prompt_len + g.response_len > self.policy.context_window {
                out.push((
                    "policy.context_window".into(),
                    format!("{} cannot hold a prompt and response of {} tokens", self.policy.context_window, g.prompt_len + g.response_len),
                ));
            }
            let longest = g.prompt_len + self.eval.max_len;
            if longest > self.policy.context_window {
                out.push(("eval.max_len".into(), format!("prompt plus response is {longest} tokens, over the policy window")));
            }
            if self.pipeline == PipelineKind::RlhfPipeline {
                let longest = g.prompt_len + self.ppo.max_response_len;
                if longest > self.policy.context_window.min(self.reward.context_window) {
                    out.push(("ppo.max_response_len".into(), format!("prompt plus rollout is {longest} tokens, over a model window")));
                }
                if g.vocab_size > self.reward.vocab_size {
                    out.push(("reward.vocab_size".into(), format!("{} is smaller than generator.vocab_size {}", self.reward.vocab_size, g.vocab_size)));
                }
            }
        }
        if self.sweep.epsilons.is_empty() {
            out.push(("sweep.epsilons".into(), "must not be empty".into()));
        }
        if self.sweep.seeds.is_empty() {
            out.push(("sweep.seeds".into(), "must not be empty".into()));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.into_iter().map(|(k, m)| format!("{k}: {m}")).collect()))
        }
    }

    /// The pipeline this configuration describes, calibrated to `epsilon`.
    pub fn pipeline_spec(&self) -> Result<PipelineSpec> {
        self.validate()?;
        let budget = PrivacyBudget::new(self.epsilon, self.delta)?;
        let phases = self
            .pipeline
            .phase_kinds()
            .iter()
            .map(|&k| {
                let p = self.phases.get(k);
                PhaseSpec::calibrated(k, p.optimizer.clone(), p.epochs, p.batch_size, budget, self.pure_noise_sigma)
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = PipelineSpec {
            kind: self.pipeline,
            phases,
            partition_fractions: self.partition_fractions(),
            seed: self.seed,
            policy: self.policy.clone(),
            reward: self.reward.clone(),
            ppo: self.ppo.clone(),
            pure_noise_sigma: self.pure_noise_sigma,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Loads `dataset` if set (relative paths resolve against `base`),
    /// otherwise generates one.
    pub fn dataset(&self, base: &Path) -> Result<AlignmentDataset> {
        match &self.dataset {
            Some(p) => load_jsonl(&base.join(p)),
            None => generate_synthetic_preferences(&self.generator),
        }
    }
}
