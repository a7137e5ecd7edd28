//! Epoch-indexed scalars driving the progressive attention fusion.
//!
//! Every value is a pure function of training progress `tau = min(t / T, 1)`.

use serde::{Deserialize, Serialize};

use crate::autograd::sigmoid;
use crate::error::{Error, Result};

/// Base weight and relative growth of an affine-in-`tau` fusion weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineSchedule {
    pub base: f64,
    pub growth: f64,
}

impl AffineSchedule {
    pub const ALPHA: Self = Self { base: 0.6, growth: 0.1 };
    pub const BETA: Self = Self { base: 0.4, growth: 0.1 };

    /// `base * (1 + growth * tau)`.
    pub fn eval(&self, tau: f64) -> f64 {
        self.base * (1.0 + self.growth * tau)
    }
}

impl Default for AffineSchedule {
    fn default() -> Self {
        Self::BETA
    }
}

/// Shape of the attention-branch intensity ramp from 0.5 to 1.0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseSchedule {
    #[default]
    Linear,
    /// Logistic ramp centred at `tau = 0.5` with steepness 8, rescaled to hit both endpoints.
    Sigmoid,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaMode {
    /// `0.5 + 0.22 * tau`.
    #[default]
    Scheduled,
    /// A trainable scalar per block, initialized at 0.5.
    Learnable,
}

pub const LAMBDA_INIT: f64 = 0.5;
const SIGMOID_STEEPNESS: f64 = 8.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScheduleConfig {
    pub beta: AffineSchedule,
    pub phase: PhaseSchedule,
    pub lambda_mode: LambdaMode,
}

/// Training progress, clamped to 1 past the horizon.
pub fn progress(t: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::Invalid("total epochs must be at least 1".into()));
    }
    Ok((t as f64 / total as f64).min(1.0))
}

pub fn alpha_schedule(tau: f64) -> f64 {
    AffineSchedule::ALPHA.eval(tau)
}

pub fn beta_schedule(tau: f64) -> f64 {
    AffineSchedule::BETA.eval(tau)
}

pub fn lambda_schedule(tau: f64) -> f64 {
    0.5 + 0.22 * tau
}

/// Linear intensity ramp `0.5 + 0.5 * tau`.
pub fn phase_scale(tau: f64) -> f64 {
    phase_scale_with(PhaseSchedule::Linear, tau)
}

pub fn phase_scale_with(kind: PhaseSchedule, tau: f64) -> f64 {
    match kind {
        PhaseSchedule::Linear => 0.5 + 0.5 * tau,
        PhaseSchedule::Sigmoid => {
            let s = |u: f64| sigmoid(SIGMOID_STEEPNESS * (u - 0.5));
            let (lo, hi) = (s(0.0), s(1.0));
            0.5 + 0.5 * (s(tau) - lo) / (hi - lo)
        }
    }
}

/// Every schedule-driven scalar for one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleState {
    pub t: usize,
    pub total: usize,
    pub tau: f64,
    /// Channel-attention fusion weight before the sigmoid squash.
    pub alpha: f64,
    /// Spatial-attention fusion weight before the sigmoid squash.
    pub beta: f64,
    /// Residual weight; ignored by blocks in learnable mode.
    pub lambda: f64,
    /// Multiplier on the attention branch.
    pub scale: f64,
    pub config: ScheduleConfig,
}

impl ScheduleState {
    pub fn at(t: usize, total: usize, config: ScheduleConfig) -> Result<Self> {
        let tau = progress(t, total)?;
        Ok(Self {
            t,
            total,
            tau,
            alpha: alpha_schedule(tau),
            beta: config.beta.eval(tau),
            lambda: lambda_schedule(tau),
            scale: phase_scale_with(config.phase, tau),
            config,
        })
    }

    /// State for epoch `t` of an `epochs`-epoch run.
    ///
    /// Progress spans the run inclusively (`tau = t / (epochs - 1)`), so the
    /// first epoch sees `tau = 0` and the last `tau = 1`.
    pub fn for_epoch(t: usize, epochs: usize, config: ScheduleConfig) -> Result<Self> {
        if epochs == 0 {
            return Err(Error::Invalid("total epochs must be at least 1".into()));
        }
        Self::at(t, (epochs - 1).max(1), config)
    }

    /// Recomputes the state for epoch `t` of `total`, keeping the configuration.
    pub fn step(&self, t: usize, total: usize) -> Result<Self> {
        Self::at(t, total, self.config)
    }

    /// State at the end of training (`tau = 1`), used for inference.
    pub fn final_state(config: ScheduleConfig) -> Self {
        Self::at(1, 1, config).expect("total is nonzero")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn progress_clamps() {
        assert_eq!(progress(0, 100).unwrap(), 0.0);
        assert_eq!(progress(100, 100).unwrap(), 1.0);
        assert_eq!(progress(150, 100).unwrap(), 1.0);
        assert!(progress(1, 0).is_err());
    }

    #[test]
    fn point_values() {
        assert_eq!(alpha_schedule(0.0), 0.6);
        assert!((alpha_schedule(1.0) - 0.66).abs() < 1e-15);
        assert!((alpha_schedule(0.5) - 0.63).abs() < 1e-15);
        assert_eq!(lambda_schedule(0.0), 0.5);
        assert!((lambda_schedule(1.0) - 0.72).abs() < 1e-15);
        assert!((lambda_schedule(0.5) - 0.61).abs() < 1e-15);
        assert_eq!(beta_schedule(0.0), 0.4);
        assert!((beta_schedule(1.0) - 0.44).abs() < 1e-15);
        assert!((beta_schedule(0.5) - 0.42).abs() < 1e-15);
        assert_eq!(phase_scale(0.0), 0.5);
        assert_eq!(phase_scale(1.0), 1.0);
        assert_eq!(phase_scale(0.5), 0.75);
    }

    #[test]
    fn sigmoid_phase_hits_endpoints() {
        let f = |t| phase_scale_with(PhaseSchedule::Sigmoid, t);
        assert!((f(0.0) - 0.5).abs() < 1e-15);
        assert!((f(1.0) - 1.0).abs() < 1e-15);
        assert!((f(0.5) - 0.75).abs() < 1e-12);
        let mut prev = f(0.0);
        for i in 1..=100 {
            let v = f(i as f64 / 100.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn squashed_weights_stay_in_band() {
        for i in 0..=1000 {
            let tau = i as f64 / 1000.0;
            let s = sigmoid(alpha_schedule(tau)) + sigmoid(beta_schedule(tau));
            assert!(s > 1.2 && s < 1.35, "tau {tau}: {s}");
        }
    }

    #[test]
    fn epoch_span_reaches_both_ends() {
        let cfg = ScheduleConfig::default();
        assert_eq!(ScheduleState::for_epoch(0, 5, cfg).unwrap().tau, 0.0);
        assert_eq!(ScheduleState::for_epoch(2, 5, cfg).unwrap().tau, 0.5);
        assert_eq!(ScheduleState::for_epoch(4, 5, cfg).unwrap().tau, 1.0);
        assert_eq!(ScheduleState::for_epoch(0, 1, cfg).unwrap().tau, 0.0);
        assert!(ScheduleState::for_epoch(0, 0, cfg).is_err());
    }

    #[test]
    fn step_endpoints() {
        let s0 = ScheduleState::at(0, 100, ScheduleConfig::default()).unwrap();
        assert_eq!((s0.tau, s0.alpha, s0.beta, s0.lambda, s0.scale), (0.0, 0.6, 0.4, 0.5, 0.5));
        let s1 = s0.step(100, 100).unwrap();
        assert_eq!(s1.tau, 1.0);
        assert!((s1.alpha - 0.66).abs() < 1e-15);
        assert!((s1.beta - 0.44).abs() < 1e-15);
        assert!((s1.lambda - 0.72).abs() < 1e-15);
        assert_eq!(s1.scale, 1.0);
    }
}
