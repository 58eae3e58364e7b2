//! Gaussian-mechanism calibration with conservative epoch composition.
//!
//! A run of `E` epochs touches every record `E` times. Each access is
//! `(eps/E, delta/E)`-DP when the noise multiplier satisfies
//! `sigma = 2 * sqrt(ln(1.25 / delta')) / eps'`, and basic composition over
//! the `E` accesses gives `(eps, delta)` for the whole phase. Phases that
//! train on disjoint partitions compose in parallel (overall budget is the
//! per-phase maximum); overlapping phases add up.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Privacy parameter `epsilon` with the two sentinel endpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Epsilon {
    /// No usable signal: training sees pure noise.
    Zero,
    Finite(f64),
    /// Non-private.
    Infinite,
}

impl Epsilon {
    /// Maps `0` to `Zero` and `+inf` to `Infinite`.
    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value < 0.0 {
            return Err(Error::Privacy(format!("epsilon must be >= 0, got {value}")));
        }
        Ok(if value == 0.0 {
            Epsilon::Zero
        } else if value.is_infinite() {
            Epsilon::Infinite
        } else {
            Epsilon::Finite(value)
        })
    }

    pub fn value(self) -> f64 {
        match self {
            Epsilon::Zero => 0.0,
            Epsilon::Finite(v) => v,
            Epsilon::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite_positive(self) -> bool {
        matches!(self, Epsilon::Finite(_))
    }

    /// Short label used in CSV headers and reports: `0`, `inf`, or the number.
    pub fn label(self) -> String {
        self.to_string()
    }
}

impl PartialOrd for Epsilon {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.value().partial_cmp(&other.value())
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Epsilon::Zero => write!(f, "0"),
            Epsilon::Finite(v) => write!(f, "{v}"),
            Epsilon::Infinite => write!(f, "inf"),
        }
    }
}

impl FromStr for Epsilon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" | "∞" => Ok(Epsilon::Infinite),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| Error::Privacy(format!("cannot parse epsilon `{s}`")))?;
                Epsilon::new(v)
            }
        }
    }
}

impl Serialize for Epsilon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Epsilon::Zero => s.serialize_f64(0.0),
            Epsilon::Finite(v) => s.serialize_f64(*v),
            Epsilon::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(v) => Epsilon::new(v),
            Raw::Str(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: Epsilon,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: Epsilon, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Privacy(format!("delta must be in (0, 1), got {delta}")));
        }
        if let Epsilon::Finite(v) = epsilon {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Privacy(format!("invalid finite epsilon {v}")));
            }
        }
        Ok(Self { epsilon, delta })
    }

    pub fn non_private(delta: f64) -> Result<Self> {
        Self::new(Epsilon::Infinite, delta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountantConfig {
    /// Number of times each record is accessed within a phase.
    pub epochs: u32,
}

impl AccountantConfig {
    pub fn new(epochs: u32) -> Result<Self> {
        if epochs == 0 {
            return Err(Error::Privacy("epochs must be >= 1".into()));
        }
        Ok(Self { epochs })
    }
}

/// Noise level implied by a budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCalibration {
    /// `epsilon = 0`: the gradient signal is dropped and only noise is applied.
    PureNoise,
    /// Gaussian noise multiplier; `0` for the non-private setting.
    Multiplier(f64),
}

impl NoiseCalibration {
    pub fn multiplier(self) -> Option<f64> {
        match self {
            NoiseCalibration::PureNoise => None,
            NoiseCalibration::Multiplier(s) => Some(s),
        }
    }
}

/// Noise multiplier for a total budget spread evenly over `epochs` accesses.
pub fn sigma_for_budget(budget: &PrivacyBudget, acct: &AccountantConfig) -> Result<NoiseCalibration> {
    let epochs = f64::from(acct.epochs);
    match budget.epsilon {
        Epsilon::Zero => Ok(NoiseCalibration::PureNoise),
        Epsilon::Infinite => Ok(NoiseCalibration::Multiplier(0.0)),
        Epsilon::Finite(eps) => {
            let eps_step = eps / epochs;
            let delta_step = budget.delta / epochs;
            let ratio = 1.25 / delta_step;
            if ratio <= 1.0 {
                return Err(Error::Privacy(format!(
                    "per-access delta {delta_step} must be below 1.25"
                )));
            }
            Ok(NoiseCalibration::Multiplier(2.0 * ratio.ln().sqrt() / eps_step))
        }
    }
}

/// Total epsilon spent by `epochs` accesses at noise multiplier `sigma`.
pub fn epsilon_for_sigma(sigma: f64, delta: f64, acct: &AccountantConfig) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Privacy(format!("sigma must be > 0, got {sigma}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Privacy(format!("delta must be in (0, 1), got {delta}")));
    }
    let epochs = f64::from(acct.epochs);
    let ratio = 1.25 * epochs / delta;
    Ok(epochs * 2.0 * ratio.ln().sqrt() / sigma)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    /// Disjoint partitions: overall = per-phase maximum.
    Parallel,
    /// Overlapping data: budgets add.
    Sequential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub phases: Vec<PrivacyBudget>,
    pub composition: Composition,
    pub overall: PrivacyBudget,
}

impl BudgetReport {
    /// Plain-text table: one row per phase plus the overall line.
    pub fn to_text(&self) -> String {
        let mut out = String::from("phase  epsilon  delta\n");
        for (i, b) in self.phases.iter().enumerate() {
            out.push_str(&format!("{:<5}  {:<7}  {:e}\n", i + 1, b.epsilon, b.delta));
        }
        let label = match self.composition {
            Composition::Parallel => "overall (parallel)",
            Composition::Sequential => "overall (sequential)",
        };
        out.push_str(&format!(
            "{label}: epsilon={} delta={:e}\n",
            self.overall.epsilon, self.overall.delta
        ));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,epsilon,delta\n");
        for (i, b) in self.phases.iter().enumerate() {
            out.push_str(&format!("{},{},{:e}\n", i + 1, b.epsilon, b.delta));
        }
        out.push_str(&format!(
            "overall,{},{:e}\n",
            self.overall.epsilon, self.overall.delta
        ));
        out
    }
}

/// Combines per-phase budgets for a multi-phase pipeline.
pub fn phase_budget_report(phases: &[PrivacyBudget], partitions_disjoint: bool) -> Result<BudgetReport> {
    let Some(first) = phases.first() else {
        return Err(Error::Privacy("at least one phase is required".into()));
    };
    let overall = if partitions_disjoint {
        let epsilon = phases
            .iter()
            .map(|b| b.epsilon)
            .fold(first.epsilon, |a, b| if b > a { b } else { a });
        let delta = phases.iter().map(|b| b.delta).fold(0.0, f64::max);
        PrivacyBudget { epsilon, delta }
    } else {
        let eps_sum: f64 = phases.iter().map(|b| b.epsilon.value()).sum();
        let delta: f64 = phases.iter().map(|b| b.delta).sum();
        PrivacyBudget {
            epsilon: Epsilon::new(eps_sum)?,
            delta,
        }
    };
    Ok(BudgetReport {
        phases: phases.to_vec(),
        composition: if partitions_disjoint {
            Composition::Parallel
        } else {
            Composition::Sequential
        },
        overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // 2 * sqrt(ln(1.25e5)), 30-digit arithmetic
    const SIGMA_EPS1: f64 = 6.851_589_309_433_086;

    fn budget(eps: f64, delta: f64) -> PrivacyBudget {
        PrivacyBudget::new(Epsilon::new(eps).unwrap(), delta).unwrap()
    }

    fn sigma(eps: f64, delta: f64, epochs: u32) -> f64 {
        sigma_for_budget(&budget(eps, delta), &AccountantConfig::new(epochs).unwrap())
            .unwrap()
            .multiplier()
            .unwrap()
    }

    #[test]
    fn sigma_at_unit_epsilon() {
        assert!((sigma(1.0, 1e-5, 1) - SIGMA_EPS1).abs() < 1e-5);
    }

    #[test]
    fn composition_splits_evenly() {
        assert!((sigma(3.0, 3e-5, 3) - SIGMA_EPS1).abs() < 1e-5);
    }

    #[test]
    fn sentinels() {
        let acct = AccountantConfig::new(3).unwrap();
        let inf = PrivacyBudget::non_private(1e-5).unwrap();
        assert_eq!(sigma_for_budget(&inf, &acct).unwrap(), NoiseCalibration::Multiplier(0.0));
        let zero = PrivacyBudget::new(Epsilon::Zero, 1e-5).unwrap();
        assert_eq!(sigma_for_budget(&zero, &acct).unwrap(), NoiseCalibration::PureNoise);
    }

    #[test]
    fn delta_outside_unit_interval() {
        assert!(PrivacyBudget::new(Epsilon::Finite(1.0), 1.0).is_err());
        assert!(epsilon_for_sigma(1.0, 1.5, &AccountantConfig::new(1).unwrap()).is_err());
    }

    #[test]
    fn epsilon_from_sigma() {
        let acct = AccountantConfig::new(1).unwrap();
        let eps = epsilon_for_sigma(6.85159, 1e-5, &acct).unwrap();
        assert!((eps - 1.0).abs() < 1e-4);
        let doubled = epsilon_for_sigma(2.0 * 6.85159, 1e-5, &acct).unwrap();
        assert!((doubled - eps / 2.0).abs() < 1e-12);
        assert!(epsilon_for_sigma(0.0, 1e-5, &acct).is_err());
        assert!(epsilon_for_sigma(-1.0, 1e-5, &acct).is_err());
    }

    #[test]
    fn experiment_grid_is_strictly_decreasing() {
        let grid = [1.0, 2.0, 3.0, 4.0, 5.0, 10.0];
        let sigmas: Vec<f64> = grid.iter().map(|&e| sigma(e, 1e-5, 3)).collect();
        assert!(sigmas.iter().all(|s| s.is_finite() && *s > 0.0));
        assert!(sigmas.windows(2).all(|w| w[0] > w[1]), "{sigmas:?}");
        assert!((sigmas[0] - 21.495_314_070_240_79).abs() < 1e-9);
    }

    #[test]
    fn disjoint_and_overlapping_composition() {
        let phases = [budget(3.0, 1e-5), budget(3.0, 1e-5)];
        let par = phase_budget_report(&phases, true).unwrap();
        assert_eq!(par.overall, budget(3.0, 1e-5));
        let seq = phase_budget_report(&phases, false).unwrap();
        assert_eq!(seq.overall.epsilon, Epsilon::Finite(6.0));
        assert!((seq.overall.delta - 2e-5).abs() < 1e-20);
        let single = phase_budget_report(&phases[..1], false).unwrap();
        assert_eq!(single.overall, phases[0]);
        assert!(phase_budget_report(&[], true).is_err());
    }

    #[test]
    fn parallel_composition_orders_sentinels() {
        let zero = PrivacyBudget::new(Epsilon::Zero, 1e-5).unwrap();
        let inf = PrivacyBudget::non_private(1e-5).unwrap();
        let r = phase_budget_report(&[zero, budget(2.0, 1e-5)], true).unwrap();
        assert_eq!(r.overall.epsilon, Epsilon::Finite(2.0));
        let r = phase_budget_report(&[budget(2.0, 1e-5), inf], true).unwrap();
        assert_eq!(r.overall.epsilon, Epsilon::Infinite);
        let r = phase_budget_report(&[zero, zero], false).unwrap();
        assert_eq!(r.overall.epsilon, Epsilon::Zero);
    }

    #[test]
    fn epsilon_parsing_and_serde() {
        assert_eq!("inf".parse::<Epsilon>().unwrap(), Epsilon::Infinite);
        assert_eq!("0".parse::<Epsilon>().unwrap(), Epsilon::Zero);
        assert_eq!("2.5".parse::<Epsilon>().unwrap(), Epsilon::Finite(2.5));
        assert!("-1".parse::<Epsilon>().is_err());
        let json = serde_json::to_string(&[Epsilon::Zero, Epsilon::Finite(3.0), Epsilon::Infinite]).unwrap();
        assert_eq!(json, r#"[0.0,3.0,"inf"]"#);
        let back: Vec<Epsilon> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, [Epsilon::Zero, Epsilon::Finite(3.0), Epsilon::Infinite]);
    }

    proptest! {
        #[test]
        fn round_trip_identity(
            eps in 0.1f64..100.0,
            log_delta in -8.0f64..-2.0,
            epochs in 1u32..=10,
        ) {
            let delta = 10f64.powf(log_delta);
            let acct = AccountantConfig::new(epochs).unwrap();
            let s = sigma_for_budget(&budget(eps, delta), &acct).unwrap().multiplier().unwrap();
            let back = epsilon_for_sigma(s, delta, &acct).unwrap();
            prop_assert!((back - eps).abs() / eps < 1e-9);
        }

        #[test]
        fn sigma_monotone(
            eps in 0.1f64..50.0,
            bump in 0.01f64..10.0,
            log_delta in -8.0f64..-2.5,
            epochs in 1u32..=10,
        ) {
            let delta = 10f64.powf(log_delta);
            prop_assert!(sigma(eps, delta, epochs) > sigma(eps + bump, delta, epochs));
            prop_assert!(sigma(eps, delta / 2.0, epochs) > sigma(eps, delta, epochs));
        }
    }
}
