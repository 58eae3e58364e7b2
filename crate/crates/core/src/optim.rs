//! DP-SGD, DP-Adam and DP-AdamW.
//!
//! One step clips the gradient to global norm `C`, adds `N(0, sigma^2 C^2)`
//! noise per coordinate, updates the moment estimates with the privatized
//! gradient, removes the expected noise energy `(1 - beta2^t) sigma^2 C^2`
//! from the second moment (clamped at zero), and applies the
//! decoupled-weight-decay update
//!
//! ```text
//! theta <- (1 - lambda * lr) * theta
//!          - lr * m / sqrt(v_corrected + eps) * sqrt(1 - beta2^t) / (1 - beta1^t)
//! ```
//!
//! DP-Adam is the same update with `lambda = 0`. DP-SGD skips the moments.
//!
//! Batch clipping (the default) clips the mean batch gradient once, which
//! bounds sensitivity by `C` only when adjacent datasets differ in a whole
//! batch. Per-sample clipping clips every example to `C`, averages, and adds
//! noise with standard deviation `sigma * C / B`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{global_l2_norm, GradSet, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    DpSgd,
    DpAdam,
    DpAdamw,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::DpSgd => "DP-SGD",
            Variant::DpAdam => "DP-ADAM",
            Variant::DpAdamw => "DP-ADAMW",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClippingMode {
    #[default]
    Batch,
    PerSample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpOptimizerConfig {
    pub variant: Variant,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub denom_epsilon: f64,
    pub clipping_mode: ClippingMode,
    /// Drop the gradient signal entirely and step on noise alone.
    pub pure_noise: bool,
}

impl Default for DpOptimizerConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DpAdamw,
            learning_rate: 5e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            clip_norm: 0.1,
            noise_multiplier: 0.0,
            denom_epsilon: 1e-8,
            clipping_mode: ClippingMode::Batch,
            pure_noise: false,
        }
    }
}

impl DpOptimizerConfig {
    /// All invariant violations as `(field, message)` pairs.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            out.push(("learning_rate", format!("must be > 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            out.push(("weight_decay", format!("must be >= 0, got {}", self.weight_decay)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                out.push((name, format!("must be in [0, 1), got {b}")));
            }
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            out.push(("clip_norm", format!("must be > 0, got {}", self.clip_norm)));
        }
        if !(self.noise_multiplier.is_finite() && self.noise_multiplier >= 0.0) {
            out.push((
                "noise_multiplier",
                format!("must be >= 0, got {}", self.noise_multiplier),
            ));
        }
        if !(self.denom_epsilon.is_finite() && self.denom_epsilon > 0.0) {
            out.push(("denom_epsilon", format!("must be > 0, got {}", self.denom_epsilon)));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().first() {
            None => Ok(()),
            Some((field, msg)) => Err(Error::invalid(format!("optimizer.{field}: {msg}"))),
        }
    }

    fn effective_weight_decay(&self) -> f64 {
        match self.variant {
            Variant::DpAdamw => self.weight_decay,
            Variant::DpAdam | Variant::DpSgd => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: GradSet,
    pub v: GradSet,
    /// Number of completed steps; the first update runs with `t = 1`.
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            m: GradSet::zeros_like(params),
            v: GradSet::zeros_like(params),
            t: 0,
        }
    }
}

/// Gradient input to a step: one batch-mean gradient or one per example.
#[derive(Clone, Copy, Debug)]
pub enum GradInput<'a> {
    Batch(&'a GradSet),
    PerSample(&'a [GradSet]),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Global norm of the gradient before clipping (mean over examples in
    /// per-sample mode).
    pub grad_norm: f64,
    /// Fraction of clipped gradients (0 or 1 in batch mode).
    pub clip_fraction: f64,
}

/// Scales `g` by `1 / max(1, |g| / C)`.
pub fn clip_gradient(g: &GradSet, clip_norm: f64) -> Result<GradSet> {
    if !(clip_norm > 0.0) {
        return Err(Error::invalid(format!("clip norm must be > 0, got {clip_norm}")));
    }
    if !g.is_finite() {
        return Err(Error::NonFinite { op: "clip_gradient" });
    }
    let norm = global_l2_norm(g);
    let divisor = (norm / clip_norm).max(1.0);
    if divisor == 1.0 {
        return Ok(g.clone());
    }
    Ok(g.scaled(1.0 / divisor))
}

/// Adds i.i.d. `N(0, (sigma C)^2)` noise to every coordinate, drawing in
/// parameter-name order.
pub fn privatize_gradient<R: Rng + ?Sized>(
    g_clipped: &GradSet,
    sigma: f64,
    clip_norm: f64,
    rng: &mut R,
) -> Result<GradSet> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("noise multiplier must be >= 0, got {sigma}")));
    }
    let std = sigma * clip_norm;
    if std == 0.0 {
        return Ok(g_clipped.clone());
    }
    Ok(g_clipped.map_data(|_, d| {
        d.iter()
            .map(|&x| x + std * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }))
}

/// `max(v - (1 - beta2^t) sigma^2 C^2, 0)` elementwise.
pub fn corrected_second_moment(
    v: &GradSet,
    t: u64,
    beta2: f64,
    sigma: f64,
    clip_norm: f64,
) -> Result<GradSet> {
    if t == 0 {
        return Err(Error::invalid("second-moment correction needs t >= 1"));
    }
    let shift = noise_energy(t, beta2, sigma * clip_norm);
    if shift == 0.0 {
        return Ok(v.clone());
    }
    Ok(v.map_data(|_, d| d.iter().map(|&x| (x - shift).max(0.0)).collect()))
}

fn noise_energy(t: u64, beta2: f64, noise_std: f64) -> f64 {
    (1.0 - beta2.powf(t as f64)) * noise_std * noise_std
}

/// One optimizer step. Returns the updated parameters and state.
pub fn step<R: Rng + ?Sized>(
    params: &ParamSet,
    grads: GradInput<'_>,
    state: &OptimizerState,
    config: &DpOptimizerConfig,
    rng: &mut R,
) -> Result<(ParamSet, OptimizerState, StepInfo)> {
    config.validate()?;
    let t = state.t.checked_add(1).ok_or(Error::StepOverflow)?;
    let c = config.clip_norm;

    // clip, then noise
    let (clipped, noise_std, info) = match grads {
        GradInput::Batch(g) => {
            g.check_matches(params)?;
            let norm = global_l2_norm(g);
            let clipped = clip_gradient(g, c)?;
            let info = StepInfo {
                grad_norm: norm,
                clip_fraction: if norm > c { 1.0 } else { 0.0 },
            };
            (clipped, config.noise_multiplier * c, info)
        }
        GradInput::PerSample(gs) => {
            if gs.is_empty() {
                return Err(Error::invalid("per-sample step needs at least one gradient"));
            }
            let b = gs.len() as f64;
            let mut acc = GradSet::zeros_like(params);
            let (mut norm_sum, mut clipped_count) = (0.0, 0usize);
            for g in gs {
                g.check_matches(params)?;
                let norm = global_l2_norm(g);
                norm_sum += norm;
                if norm > c {
                    clipped_count += 1;
                }
                acc = acc.add(&clip_gradient(g, c)?)?;
            }
            let info = StepInfo {
                grad_norm: norm_sum / b,
                clip_fraction: clipped_count as f64 / b,
            };
            (acc.scaled(1.0 / b), config.noise_multiplier * c / b, info)
        }
    };
    let signal = if config.pure_noise {
        clipped.scaled(0.0)
    } else {
        clipped
    };
    let noisy = privatize_gradient(&signal, noise_std, 1.0, rng)?;

    let lr = config.learning_rate;
    let mut new_params = std::collections::BTreeMap::new();
    let new_state = match config.variant {
        Variant::DpSgd => {
            for (name, p) in params.iter() {
                let g = noisy.get(name).expect("layout checked");
                let data: Vec<f64> = p
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&theta, &g)| theta - lr * g)
                    .collect();
                new_params.insert(name.to_string(), finite_param(name, p, data)?);
            }
            OptimizerState {
                m: state.m.clone(),
                v: state.v.clone(),
                t,
            }
        }
        Variant::DpAdam | Variant::DpAdamw => {
            let (b1, b2) = (config.beta1, config.beta2);
            let m = state.m.map_data(|name, m| {
                let g = noisy.get(name).expect("layout checked").data();
                m.iter().zip(g).map(|(&m, &g)| b1 * m + (1.0 - b1) * g).collect()
            });
            let v = state.v.map_data(|name, v| {
                let g = noisy.get(name).expect("layout checked").data();
                v.iter()
                    .zip(g)
                    .map(|(&v, &g)| b2 * v + (1.0 - b2) * g * g)
                    .collect()
            });
            let v_corr = corrected_second_moment(&v, t, b2, noise_std, 1.0)?;
            let bias = (1.0 - b2.powf(t as f64)).sqrt() / (1.0 - b1.powf(t as f64));
            let decay = 1.0 - config.effective_weight_decay() * lr;
            let eps = config.denom_epsilon;
            for (name, p) in params.iter() {
                let m_t = m.get(name).expect("layout checked").data();
                let v_t = v_corr.get(name).expect("layout checked").data();
                let data: Vec<f64> = p
                    .data()
                    .iter()
                    .zip(m_t.iter().zip(v_t))
                    .map(|(&theta, (&m, &v))| decay * theta - lr * m / (v + eps).sqrt() * bias)
                    .collect();
                new_params.insert(name.to_string(), finite_param(name, p, data)?);
            }
            OptimizerState { m, v, t }
        }
    };
    Ok((ParamSet::from_map(new_params), new_state, info))
}

fn finite_param(name: &str, like: &Tensor, data: Vec<f64>) -> Result<Tensor> {
    Tensor::new(like.shape().to_vec(), data).map_err(|_| Error::Parameter {
        name: name.to_string(),
        detail: "update produced a non-finite value".into(),
    })
}

/// Optimizer instance owning its state and its seeded noise source.
#[derive(Clone, Debug)]
pub struct DpOptimizer {
    config: DpOptimizerConfig,
    state: OptimizerState,
    rng: ChaCha8Rng,
}

impl DpOptimizer {
    pub fn new(config: DpOptimizerConfig, params: &ParamSet, rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: OptimizerState::new(params),
            rng,
        })
    }

    pub fn config(&self) -> &DpOptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn step(&mut self, params: &ParamSet, grads: GradInput<'_>) -> Result<(ParamSet, StepInfo)> {
        let (p, s, info) = step(params, grads, &self.state, &self.config, &mut self.rng)?;
        self.state = s;
        Ok((p, info))
    }
}
