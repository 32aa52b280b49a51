//! Trainer hyperparameters and agent specifications.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Learning method of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Method {
    /// Level-0 independent learner: deterministic policy, no opponent model.
    Indep,
    /// GR2-L: level-k recursive rollout.
    Gr2l,
    /// GR2-M: Poisson mixture over levels `0..=k`.
    Gr2m,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Indep => "indep",
            Method::Gr2l => "gr2l",
            Method::Gr2m => "gr2m",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AgentSpec {
    pub method: Method,
    pub level: usize,
    pub lambda: Option<f64>,
}

impl AgentSpec {
    pub fn indep() -> Self {
        Self {
            method: Method::Indep,
            level: 0,
            lambda: None,
        }
    }

    pub fn gr2l(level: usize) -> Self {
        Self {
            method: Method::Gr2l,
            level,
            lambda: None,
        }
    }

    pub fn gr2m(level: usize, lambda: f64) -> Self {
        Self {
            method: Method::Gr2m,
            level,
            lambda: Some(lambda),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            Method::Indep if self.level != 0 => {
                Err(Error::Config(format!("indep agents are level 0, got level {}", self.level)))
            }
            Method::Gr2m => match self.lambda {
                Some(l) if l > 0.0 && l.is_finite() => Ok(()),
                Some(l) => Err(Error::Config(format!("gr2m needs a positive lambda, got {l}"))),
                None => Err(Error::Config("gr2m needs lambda".into())),
            },
            _ => Ok(()),
        }
    }

    /// Short label such as `gr2l2`, `gr2m3` or `indep`.
    pub fn label(&self) -> String {
        match self.method {
            Method::Indep => "indep".into(),
            m => format!("{}{}", m.as_str(), self.level),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainerConfig {
    pub lr_q: f64,
    pub lr_pi: f64,
    pub lr_rho: f64,
    /// Polyak coefficient for the target critic.
    pub polyak: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub replay_capacity: usize,
    pub warmup: usize,
    /// Gaussian exploration noise (normalized action units) for the first `explore_steps`.
    pub explore_noise: f64,
    pub explore_steps: usize,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub iterations: usize,
    pub steps_per_iteration: usize,
    pub hidden: Vec<usize>,
    /// Opponent samples per transition for marginalizing the joint critic.
    pub opponent_samples: usize,
    pub aux_loss: bool,
    pub aux_weight: f64,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    pub reward_scale: f64,
    /// Initial log standard deviation of the Gaussian heads.
    pub init_log_std: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lr_q: 1e-4,
            lr_pi: 1e-4,
            lr_rho: 1e-4,
            polyak: 0.001,
            batch_size: 64,
            gamma: 0.95,
            replay_capacity: 100_000,
            warmup: 1000,
            explore_noise: 0.1,
            explore_steps: 1000,
            alpha_start: 1.0,
            alpha_end: 0.05,
            iterations: 400,
            steps_per_iteration: 10,
            hidden: vec![10, 10],
            opponent_samples: 8,
            aux_loss: true,
            aux_weight: 1.0,
            ou_theta: 0.15,
            ou_sigma: 0.3,
            reward_scale: 1.0,
            init_log_std: -1.0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [("lr_q", self.lr_q), ("lr_pi", self.lr_pi), ("lr_rho", self.lr_rho)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return bad(format!("polyak must lie in [0, 1], got {}", self.polyak));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.batch_size == 0 || self.iterations == 0 || self.steps_per_iteration == 0 {
            return bad("batch size, iterations and steps per iteration must be positive".into());
        }
        if self.batch_size > self.warmup.max(1) {
            return bad(format!(
                "batch size {} exceeds the warm-up threshold {}",
                self.batch_size, self.warmup
            ));
        }
        if self.replay_capacity < self.warmup {
            return bad("replay capacity is below the warm-up threshold".into());
        }
        if self.opponent_samples == 0 {
            return bad("opponent_samples must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        if self.alpha_start < 0.0 || self.alpha_end < 0.0 {
            return bad("entropy temperatures must be non-negative".into());
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.iterations * self.steps_per_iteration
    }

    /// Entropy temperature for `iteration`, decayed linearly across the run.
    pub fn alpha_at(&self, iteration: usize) -> f64 {
        if self.iterations <= 1 {
            return self.alpha_start;
        }
        let t = (iteration.min(self.iterations - 1)) as f64 / (self.iterations - 1) as f64;
        self.alpha_start + (self.alpha_end - self.alpha_start) * t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainerConfig::default().validate().unwrap();
        assert!(AgentSpec::gr2m(2, 1.5).validate().is_ok());
        assert!(AgentSpec {
            lambda: None,
            ..AgentSpec::gr2m(2, 1.5)
        }
        .validate()
        .is_err());
        let cfg = TrainerConfig {
            lr_q: -1.0,
            ..TrainerConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn temperature_is_linear_and_non_increasing() {
        let cfg = TrainerConfig::default();
        assert_eq!(cfg.alpha_at(0), 1.0);
        assert!((cfg.alpha_at(399) - 0.05).abs() < 1e-12);
        for i in 1..400 {
            assert!(cfg.alpha_at(i) <= cfg.alpha_at(i - 1));
        }
    }
}
