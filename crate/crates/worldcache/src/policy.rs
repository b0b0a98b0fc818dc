//! Skip policy: when is the probe drift small enough to reuse the cache?
//!
//! The base threshold `tau0` is tightened by scene motion (dividing by
//! `1 + alpha * velocity`) and relaxed along the schedule by a multiplier
//! that grows with the step index, either linearly in `beta_d * t / T` or
//! by a fixed quadratic profile of the schedule length. Ties recompute:
//! only a drift strictly below the threshold skips.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid policy config: {field} {reason}")]
    InvalidField { field: &'static str, reason: String },
}

/// Schedule-aware threshold relaxation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AtsMode {
    /// Constant threshold over the schedule.
    Off,
    /// `1 + beta_d * t / T`.
    Linear,
    /// Fixed quadratic profile of the normalised schedule length; `beta_d`
    /// has no effect in this mode.
    Quadratic,
}

/// Thresholds, gains, and structural knobs for the caching controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Base skip threshold. Zero disables caching outright (every drift
    /// ties or exceeds it, and ties recompute).
    pub tau0: f64,
    /// Velocity sensitivity of the threshold.
    pub alpha: f64,
    /// Saliency weight in the drift measure.
    pub beta_s: f64,
    /// Slope of the linear schedule relaxation.
    pub beta_d: f64,
    /// Upper clamp on the interpolation gain.
    pub gamma_max: f64,
    /// Denominator guard for all relative quantities.
    pub eps: f64,
    /// Steps always recomputed at the start of a trajectory.
    pub warmup_steps: usize,
    pub ats_mode: AtsMode,
    /// Master switch for flow-compensated reuse.
    pub warp_enabled: bool,
    /// Warping stays off before this step even when enabled.
    pub warp_disable_before: usize,
    /// Spatial scale the flow is solved at, in `(0, 1]`.
    pub s_flow: f64,
    /// Schedule length `T` the thresholds are normalised by.
    pub total_steps: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            tau0: 0.08,
            alpha: 2.0,
            beta_s: 0.12,
            beta_d: 4.0,
            gamma_max: 2.0,
            eps: 1e-8,
            warmup_steps: 3,
            ats_mode: AtsMode::Quadratic,
            warp_enabled: true,
            warp_disable_before: 5,
            s_flow: 0.5,
            total_steps: 35,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let field = |field: &'static str, ok: bool, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(PolicyError::InvalidField { field, reason: reason.to_string() })
            }
        };
        field("tau0", self.tau0.is_finite() && self.tau0 >= 0.0, "must be finite and >= 0")?;
        field("alpha", self.alpha.is_finite() && self.alpha >= 0.0, "must be finite and >= 0")?;
        field("beta_s", self.beta_s.is_finite() && self.beta_s >= 0.0, "must be finite and >= 0")?;
        field("beta_d", self.beta_d.is_finite() && self.beta_d >= 0.0, "must be finite and >= 0")?;
        field("gamma_max", self.gamma_max.is_finite() && self.gamma_max > 0.0, "must be > 0")?;
        field("eps", self.eps.is_finite() && self.eps > 0.0, "must be > 0")?;
        field(
            "warmup_steps",
            self.warmup_steps >= 2,
            "needs at least 2 full steps to seed the cache",
        )?;
        field("s_flow", self.s_flow > 0.0 && self.s_flow <= 1.0, "must be in (0, 1]")?;
        field("total_steps", self.total_steps >= 1, "must be >= 1")?;
        Ok(())
    }
}

/// Motion-tightened base threshold, `tau0 / (1 + alpha * velocity)`.
pub fn cfc_threshold(tau0: f64, alpha: f64, velocity: f64) -> f64 {
    tau0 / (1.0 + alpha * velocity)
}

/// Linear schedule relaxation, `1 + beta_d * t / T`.
pub fn ats_multiplier_linear(step: usize, total_steps: usize, beta_d: f64) -> f64 {
    1.0 + beta_d * step as f64 / total_steps as f64
}

/// Quadratic schedule relaxation. The curvature is a fixed function of the
/// schedule length normalised to 35 steps; at `T = 35` the multiplier runs
/// from 1 at the start to 5 at the final step.
pub fn ats_multiplier_quadratic(step: usize, total_steps: usize) -> f64 {
    let u = total_steps as f64 / 35.0;
    let c = u * u / 6.0 + u / 2.0 + 10.0 / 3.0;
    let r = step as f64 / total_steps as f64;
    1.0 + c * r
}

/// Threshold actually compared against the drift at `step`.
pub fn effective_threshold(cfg: &PolicyConfig, velocity: f64, step: usize) -> f64 {
    let base = cfc_threshold(cfg.tau0, cfg.alpha, velocity);
    let mult = match cfg.ats_mode {
        AtsMode::Off => 1.0,
        AtsMode::Linear => ats_multiplier_linear(step, cfg.total_steps, cfg.beta_d),
        AtsMode::Quadratic => ats_multiplier_quadratic(step, cfg.total_steps),
    };
    base * mult
}

/// Why a step was or was not skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionKind {
    /// Forced recompute while the trajectory warms up or the cache is not
    /// yet seeded with two full steps.
    MissWarmup,
    /// Drift at or above the threshold.
    MissDrift,
    /// Recompute dictated by a fixed cadence (baseline policies only).
    MissSchedule,
    Hit,
}

impl DecisionKind {
    pub fn is_hit(self) -> bool {
        matches!(self, DecisionKind::Hit)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DecisionKind::MissWarmup => "miss-warmup",
            DecisionKind::MissDrift => "miss-drift",
            DecisionKind::MissSchedule => "miss-schedule",
            DecisionKind::Hit => "hit",
        }
    }
}

/// A decision together with the numbers it was made from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheDecision {
    pub step: usize,
    pub kind: DecisionKind,
    pub drift_used: f64,
    pub threshold_used: f64,
}

/// Core decision rule against a precomputed threshold. Warmup and an
/// unseeded cache force a recompute; otherwise skip iff the drift is
/// strictly below the threshold.
pub fn decide_with_threshold(
    step: usize,
    drift: f64,
    threshold: f64,
    warmup_steps: usize,
    cache_ready: bool,
) -> CacheDecision {
    let kind = if step < warmup_steps || !cache_ready {
        DecisionKind::MissWarmup
    } else if drift < threshold {
        DecisionKind::Hit
    } else {
        DecisionKind::MissDrift
    };
    CacheDecision { step, kind, drift_used: drift, threshold_used: threshold }
}

/// Full default decision: motion-tightened, schedule-relaxed threshold
/// applied to the saliency-weighted drift. A missing velocity reads as 0.
pub fn decide(
    cfg: &PolicyConfig,
    swd_drift: f64,
    velocity: Option<f64>,
    step: usize,
    cache_ready: bool,
) -> CacheDecision {
    let threshold = effective_threshold(cfg, velocity.unwrap_or(0.0), step);
    decide_with_threshold(step, swd_drift, threshold, cfg.warmup_steps, cache_ready)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = PolicyConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.tau0, 0.08);
        assert_eq!(cfg.alpha, 2.0);
        assert_eq!(cfg.beta_s, 0.12);
        assert_eq!(cfg.beta_d, 4.0);
        assert_eq!(cfg.gamma_max, 2.0);
        assert_eq!(cfg.warmup_steps, 3);
        assert_eq!(cfg.ats_mode, AtsMode::Quadratic);
        assert_eq!(cfg.s_flow, 0.5);
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let mut cfg = PolicyConfig { warmup_steps: 1, ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg = PolicyConfig { eps: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg = PolicyConfig { s_flow: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg = PolicyConfig { s_flow: 1.5, ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg = PolicyConfig { tau0: -0.1, ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg = PolicyConfig { tau0: f64::NAN, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn cfc_threshold_values() {
        assert_eq!(cfc_threshold(0.08, 2.0, 0.0), 0.08);
        assert!((cfc_threshold(0.08, 2.0, 0.5) - 0.04).abs() <= 1e-12);
        // Faster motion always tightens.
        assert!(cfc_threshold(0.08, 2.0, 1.0) < cfc_threshold(0.08, 2.0, 0.5));
    }

    #[test]
    fn linear_multiplier_anchor_points() {
        let early = ats_multiplier_linear(2, 35, 4.0);
        assert!((1.20..=1.25).contains(&early), "early multiplier {early}");
        let late = ats_multiplier_linear(32, 35, 4.0);
        assert!((4.60..=4.70).contains(&late), "late multiplier {late}");
    }

    #[test]
    fn quadratic_multiplier_profile() {
        assert_eq!(ats_multiplier_quadratic(0, 35), 1.0);
        assert!((ats_multiplier_quadratic(35, 35) - 5.0).abs() <= 1e-12);
        // Longer schedules steepen the curvature: T=70 midpoint.
        assert!((ats_multiplier_quadratic(35, 70) - 3.5).abs() <= 1e-12);
        // Strictly increasing in t.
        for t in 1..=35 {
            assert!(ats_multiplier_quadratic(t, 35) > ats_multiplier_quadratic(t - 1, 35));
        }
    }

    #[test]
    fn effective_threshold_linear_late_step() {
        let cfg = PolicyConfig { ats_mode: AtsMode::Linear, ..Default::default() };
        let thr = effective_threshold(&cfg, 0.0, 32);
        assert!((thr - 0.3726).abs() <= 1e-3, "threshold {thr}");
    }

    #[test]
    fn decide_warmup_and_readiness_force_miss() {
        let cfg = PolicyConfig::default();
        let d = decide(&cfg, 0.0, None, 1, true);
        assert_eq!(d.kind, DecisionKind::MissWarmup);
        let d = decide(&cfg, 0.0, None, 10, false);
        assert_eq!(d.kind, DecisionKind::MissWarmup);
    }

    #[test]
    fn decide_tie_recomputes() {
        let cfg = PolicyConfig { ats_mode: AtsMode::Off, ..Default::default() };
        let thr = effective_threshold(&cfg, 0.0, 10);
        let tie = decide(&cfg, thr, Some(0.0), 10, true);
        assert_eq!(tie.kind, DecisionKind::MissDrift);
        let below = decide(&cfg, thr - 1e-12, Some(0.0), 10, true);
        assert_eq!(below.kind, DecisionKind::Hit);
    }

    #[test]
    fn decide_records_inputs() {
        let cfg = PolicyConfig::default();
        let d = decide(&cfg, 0.05, Some(0.2), 12, true);
        assert_eq!(d.step, 12);
        assert_eq!(d.drift_used, 0.05);
        assert!((d.threshold_used - effective_threshold(&cfg, 0.2, 12)).abs() <= 1e-15);
    }

    #[test]
    fn zero_tau0_never_hits() {
        let cfg = PolicyConfig { tau0: 0.0, ..Default::default() };
        for t in 0..40 {
            let d = decide(&cfg, 0.0, Some(0.0), t, true);
            assert!(!d.kind.is_hit(), "step {t} skipped with tau0 = 0");
        }
    }
}
