//! Step controller: wire the signals, policy, cache, and reconstruction
//! together over a denoiser split into a probe prefix and a deep suffix.
//!
//! Four policies share the loop. `worldcache` is the full pipeline;
//! `fixed-threshold` applies one global threshold to the raw drift and
//! reuses with the magnitude-ratio gain; `fixed-schedule` recomputes on a
//! fixed cadence and replays the newer cached output verbatim;
//! `full-compute` never skips (identical to `worldcache` with `tau0 = 0`).
//!
//! Costs are abstract units: a miss charges `probe + deep`, a hit charges
//! `probe` plus a configurable fraction of `deep` for the reconstruction
//! work. Wall-clock times are recorded separately and are the only
//! non-deterministic part of a report.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheError, CacheSlot, ResidualCache};
use crate::ofa::{self, LkParams, OfaError};
use crate::policy::{
    self, CacheDecision, DecisionKind, PolicyConfig, PolicyError,
};
use crate::signals::{self, DriftReading};
use crate::tensor::{relative_l1, LatentTensor, TensorError, TensorShape};
use crate::par;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Ofa(#[from] OfaError),
    #[error("invalid engine config: {0}")]
    BadConfig(String),
    #[error("input sequence has {got} steps but the schedule needs {expected}")]
    InputLengthMismatch { expected: usize, got: usize },
    #[error("steps must be driven in order: expected {expected}, got {got}")]
    OutOfOrderStep { expected: usize, got: usize },
}

/// A denoiser split into an always-run probe prefix and a skippable deep
/// suffix. Costs are abstract per-invocation units.
pub trait Denoiser {
    fn shape(&self) -> TensorShape;
    /// First stage: raw input to probe features.
    fn probe_forward(&self, z0: &LatentTensor, step: usize) -> LatentTensor;
    /// Second stage: probe features to the final output.
    fn deep_forward(&self, zk: &LatentTensor, step: usize) -> LatentTensor;
    fn probe_cost(&self) -> f64;
    fn deep_cost(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Worldcache,
    FixedThreshold,
    FixedSchedule,
    FullCompute,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Worldcache => "worldcache",
            PolicyKind::FixedThreshold => "fixed-threshold",
            PolicyKind::FixedSchedule => "fixed-schedule",
            PolicyKind::FullCompute => "full-compute",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "worldcache" => Ok(PolicyKind::Worldcache),
            "fixed-threshold" => Ok(PolicyKind::FixedThreshold),
            "fixed-schedule" => Ok(PolicyKind::FixedSchedule),
            "full-compute" => Ok(PolicyKind::FullCompute),
            other => Err(format!(
                "unknown policy '{other}' (expected worldcache, fixed-threshold, fixed-schedule, or full-compute)"
            )),
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Feature toggles for incremental ablations of the full pipeline. With a
/// flag off the controller falls back to the simpler mechanism: fixed base
/// threshold, raw drift, verbatim reuse, or a flat schedule multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    /// Velocity-tightened threshold.
    pub cfc: bool,
    /// Saliency-weighted drift as the decision signal.
    pub swd: bool,
    /// Residual interpolation (off = reuse the newer output verbatim).
    pub ofa: bool,
    /// Schedule-dependent threshold relaxation.
    pub ats: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags { cfc: true, swd: true, ofa: true, ats: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub policy: PolicyConfig,
    pub lk: LkParams,
    /// Reconstruction overhead charged per hit, as a fraction of the deep
    /// cost.
    pub overhead_frac: f64,
    /// Recompute cadence of the fixed-schedule baseline.
    pub schedule_period: usize,
    pub ablation: AblationFlags,
    /// Run the deep stage in shadow on every step to report approximation
    /// errors. Never charged to the cost ledger.
    pub oracle: bool,
    /// Measure velocity against the input from two steps back instead of
    /// the cache's older slot. Only meaningful when replaying a trace in
    /// which every step was fully computed; keeps decisions independent of
    /// the replay's own cache state.
    pub input_anchored_velocity: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            policy: PolicyConfig::default(),
            lk: LkParams::default(),
            overhead_frac: 0.03,
            schedule_period: 2,
            ablation: AblationFlags::default(),
            oracle: false,
            input_anchored_velocity: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        self.policy.validate()?;
        self.lk.validate()?;
        if !(self.overhead_frac.is_finite() && (0.0..1.0).contains(&self.overhead_frac)) {
            return Err(EngineError::BadConfig("overhead_frac must be in [0, 1)".into()));
        }
        if self.schedule_period < 1 {
            return Err(EngineError::BadConfig("schedule_period must be >= 1".into()));
        }
        Ok(())
    }
}

/// Where the per-step inputs come from.
pub enum InputSource {
    /// Feed each output back: `z_{t+1} = z_t + eta * (out_t - z_t)`.
    ClosedLoop { initial: LatentTensor, eta: f64 },
    /// Fixed input per step, e.g. from a recorded trace.
    Sequence(Vec<LatentTensor>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    ClosedLoop,
    OpenLoop,
}

/// Wall-clock seconds spent per component in one step. Excluded from any
/// determinism comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepWall {
    pub probe_s: f64,
    pub signals_s: f64,
    pub decide_s: f64,
    pub deep_s: f64,
    pub approx_s: f64,
    pub flow_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepTelemetry {
    pub step: usize,
    pub decision: CacheDecision,
    pub raw_drift: f64,
    pub swd_drift: f64,
    pub velocity: Option<f64>,
    /// Gain applied on a hit; absent on misses and verbatim reuse.
    pub gamma: Option<f64>,
    /// Projection gain before clamping.
    pub gamma_raw: Option<f64>,
    /// Magnitude-ratio gain over the same deltas, as a diagnostic.
    pub gamma_scalar: Option<f64>,
    pub warp_used: bool,
    /// Largest flow component in latent pixels, when flow was solved.
    pub flow_max_px: Option<f64>,
    pub cost_spent: f64,
    /// Relative L1 against the true deep output for this step's input;
    /// only reported on hits when oracle bookkeeping is on.
    pub oracle_error: Option<f64>,
    pub wall: StepWall,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: PolicyKind,
    pub mode: RunMode,
    pub total_steps: usize,
    pub hits: usize,
    pub misses: usize,
    pub skip_rate: f64,
    pub total_cost: f64,
    pub full_cost: f64,
    pub simulated_speedup: f64,
    /// Relative L1 of the final output against a full-compute run over the
    /// same inputs. Requires oracle bookkeeping.
    pub final_output_error: Option<f64>,
    /// Mean per-hit approximation error. Requires oracle bookkeeping and
    /// at least one hit.
    pub mean_hit_error: Option<f64>,
    pub mean_gamma: Option<f64>,
    pub mean_gamma_scalar: Option<f64>,
    pub wall_total_s: f64,
    pub steps: Vec<StepTelemetry>,
}

impl RunReport {
    /// Drop wall-clock values, leaving only the deterministic content.
    pub fn zero_wall_times(&mut self) {
        self.wall_total_s = 0.0;
        for s in &mut self.steps {
            s.wall = StepWall::default();
        }
    }
}

/// Decision for one step under a policy and its ablation flags.
pub(crate) fn select_decision(
    kind: PolicyKind,
    cfg: &EngineConfig,
    reading: &DriftReading,
    cache_ready: bool,
) -> CacheDecision {
    let p = &cfg.policy;
    let step = reading.step;
    match kind {
        PolicyKind::Worldcache | PolicyKind::FullCompute => {
            let tau0 = if kind == PolicyKind::FullCompute { 0.0 } else { p.tau0 };
            let drift = if cfg.ablation.swd { reading.swd_drift } else { reading.raw_drift };
            let velocity = reading.velocity.unwrap_or(0.0);
            let base =
                if cfg.ablation.cfc { policy::cfc_threshold(tau0, p.alpha, velocity) } else { tau0 };
            let mult = if cfg.ablation.ats {
                match p.ats_mode {
                    policy::AtsMode::Off => 1.0,
                    policy::AtsMode::Linear => {
                        policy::ats_multiplier_linear(step, p.total_steps, p.beta_d)
                    }
                    policy::AtsMode::Quadratic => {
                        policy::ats_multiplier_quadratic(step, p.total_steps)
                    }
                }
            } else {
                1.0
            };
            policy::decide_with_threshold(step, drift, base * mult, p.warmup_steps, cache_ready)
        }
        PolicyKind::FixedThreshold => policy::decide_with_threshold(
            step,
            reading.raw_drift,
            p.tau0,
            p.warmup_steps,
            cache_ready,
        ),
        PolicyKind::FixedSchedule => {
            let kind = if step < p.warmup_steps || !cache_ready {
                DecisionKind::MissWarmup
            } else if (step - p.warmup_steps).is_multiple_of(cfg.schedule_period) {
                DecisionKind::MissSchedule
            } else {
                DecisionKind::Hit
            };
            CacheDecision { step, kind, drift_used: reading.raw_drift, threshold_used: 0.0 }
        }
    }
}

/// Everything produced by a hit reconstruction.
pub(crate) struct HitOutcome {
    pub output: LatentTensor,
    pub gamma: Option<f64>,
    pub gamma_raw: Option<f64>,
    pub gamma_scalar: Option<f64>,
    pub warp_used: bool,
    pub flow_max_px: Option<f64>,
    pub flow_s: f64,
}

/// Reconstruct the deep output on a hit. The cache must be ready.
pub(crate) fn reconstruct_hit(
    kind: PolicyKind,
    cfg: &EngineConfig,
    cache: &ResidualCache,
    z0: &LatentTensor,
    zk: &LatentTensor,
    step: usize,
) -> Result<HitOutcome, EngineError> {
    let newer = cache.newer().expect("hit with unseeded cache");
    let older = cache.older().expect("hit with unseeded cache");
    let p = &cfg.policy;
    match kind {
        PolicyKind::FixedSchedule => Ok(HitOutcome {
            output: newer.zn().clone(),
            gamma: None,
            gamma_raw: None,
            gamma_scalar: None,
            warp_used: false,
            flow_max_px: None,
            flow_s: 0.0,
        }),
        PolicyKind::FixedThreshold => {
            let res = ofa::osi_approximate(
                z0,
                zk,
                newer.residual(),
                older.residual(),
                p.eps,
                p.gamma_max,
                false,
            )?;
            Ok(HitOutcome {
                output: res.output,
                gamma: Some(res.gamma_scalar),
                gamma_raw: Some(res.gamma_raw),
                gamma_scalar: Some(res.gamma_scalar),
                warp_used: false,
                flow_max_px: None,
                flow_s: 0.0,
            })
        }
        PolicyKind::Worldcache | PolicyKind::FullCompute => {
            if !cfg.ablation.ofa {
                // Verbatim reuse of the newer cached output.
                return Ok(HitOutcome {
                    output: newer.zn().clone(),
                    gamma: None,
                    gamma_raw: None,
                    gamma_scalar: None,
                    warp_used: false,
                    flow_max_px: None,
                    flow_s: 0.0,
                });
            }
            let warp = ofa::warp_gate(step, p);
            let (newer_residual, flow_max, flow_s) = if warp {
                let t0 = Instant::now();
                let flow = ofa::estimate_flow(z0, newer.z0(), p.s_flow, &cfg.lk)?;
                let corrected = ofa::corrected_residual(newer, &flow)?;
                (corrected, Some(flow.max_abs()), t0.elapsed().as_secs_f64())
            } else {
                (newer.residual().clone(), None, 0.0)
            };
            let res = ofa::osi_approximate(
                z0,
                zk,
                &newer_residual,
                older.residual(),
                p.eps,
                p.gamma_max,
                true,
            )?;
            Ok(HitOutcome {
                output: res.output,
                gamma: Some(res.gamma),
                gamma_raw: Some(res.gamma_raw),
                gamma_scalar: Some(res.gamma_scalar),
                warp_used: warp,
                flow_max_px: flow_max,
                flow_s,
            })
        }
    }
}

/// Feedback rule for closed-loop runs: move the input toward the output by
/// rate `eta`.
pub fn closed_loop_update(z0: &LatentTensor, output: &LatentTensor, eta: f64) -> LatentTensor {
    LatentTensor::from_vec(
        z0.shape(),
        par::zip_map(z0.data(), output.data(), move |z, o| z + eta * (o - z)),
    )
    .expect("finite inputs stay finite under convex update")
}

/// Stateful per-step driver. Steps must be fed in order starting at 0.
pub struct Controller<'a> {
    kind: PolicyKind,
    cfg: &'a EngineConfig,
    cache: ResidualCache,
    last_probe: Option<LatentTensor>,
    prev_input: Option<LatentTensor>,
    prev_prev_input: Option<LatentTensor>,
    next_step: usize,
}

impl<'a> Controller<'a> {
    pub fn new(kind: PolicyKind, cfg: &'a EngineConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        Ok(Controller {
            kind,
            cfg,
            cache: ResidualCache::new(),
            last_probe: None,
            prev_input: None,
            prev_prev_input: None,
            next_step: 0,
        })
    }

    pub fn cache(&self) -> &ResidualCache {
        &self.cache
    }

    /// Run one step: probe, measure, decide, then either compute the deep
    /// stage (recording the step in the cache) or reconstruct from it.
    pub fn run_step(
        &mut self,
        denoiser: &dyn Denoiser,
        z0: &LatentTensor,
        step: usize,
    ) -> Result<(LatentTensor, StepTelemetry), EngineError> {
        if step != self.next_step {
            return Err(EngineError::OutOfOrderStep { expected: self.next_step, got: step });
        }
        self.next_step += 1;
        let p = &self.cfg.policy;
        let mut wall = StepWall::default();

        let t0 = Instant::now();
        let zk = denoiser.probe_forward(z0, step);
        wall.probe_s = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let saliency = signals::saliency_map(&zk, step);
        let anchor = if self.cfg.input_anchored_velocity {
            self.prev_prev_input.as_ref()
        } else {
            self.cache.velocity_anchor()
        };
        let reading = DriftReading::measure(
            step,
            &zk,
            self.last_probe.as_ref(),
            &saliency,
            z0,
            anchor,
            p.beta_s,
            p.eps,
        )?;
        wall.signals_s = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let decision = select_decision(self.kind, self.cfg, &reading, self.cache.cache_ready());
        wall.decide_s = t0.elapsed().as_secs_f64();

        let probe_cost = denoiser.probe_cost();
        let deep_cost = denoiser.deep_cost();

        let (output, mut telemetry) = if decision.kind.is_hit() {
            let t0 = Instant::now();
            let hit = reconstruct_hit(self.kind, self.cfg, &self.cache, z0, &zk, step)?;
            wall.approx_s = t0.elapsed().as_secs_f64() - hit.flow_s;
            wall.flow_s = hit.flow_s;
            let telemetry = StepTelemetry {
                step,
                decision,
                raw_drift: reading.raw_drift,
                swd_drift: reading.swd_drift,
                velocity: reading.velocity,
                gamma: hit.gamma,
                gamma_raw: hit.gamma_raw,
                gamma_scalar: hit.gamma_scalar,
                warp_used: hit.warp_used,
                flow_max_px: hit.flow_max_px,
                cost_spent: probe_cost + self.cfg.overhead_frac * deep_cost,
                oracle_error: None,
                wall,
            };
            (hit.output, telemetry)
        } else {
            let t0 = Instant::now();
            let zn = denoiser.deep_forward(&zk, step);
            wall.deep_s = t0.elapsed().as_secs_f64();
            self.cache.record_full_step(CacheSlot::new(
                step,
                z0.clone(),
                zk.clone(),
                zn.clone(),
            )?)?;
            let telemetry = StepTelemetry {
                step,
                decision,
                raw_drift: reading.raw_drift,
                swd_drift: reading.swd_drift,
                velocity: reading.velocity,
                gamma: None,
                gamma_raw: None,
                gamma_scalar: None,
                warp_used: false,
                flow_max_px: None,
                cost_spent: probe_cost + deep_cost,
                oracle_error: None,
                wall,
            };
            (zn, telemetry)
        };

        if self.cfg.oracle && decision.kind.is_hit() {
            // Shadow deep stage for the same input; measurement only.
            let truth = denoiser.deep_forward(&zk, step);
            telemetry.oracle_error = Some(relative_l1(&output, &truth, p.eps)?);
        }

        self.prev_prev_input = self.prev_input.take();
        self.prev_input = Some(z0.clone());
        self.last_probe = Some(zk);
        Ok((output, telemetry))
    }
}

/// Drive a full schedule under one policy and assemble the report.
pub fn run_trajectory(
    kind: PolicyKind,
    denoiser: &dyn Denoiser,
    source: InputSource,
    cfg: &EngineConfig,
) -> Result<RunReport, EngineError> {
    cfg.validate()?;
    let total = cfg.policy.total_steps;
    let mode = match &source {
        InputSource::ClosedLoop { .. } => RunMode::ClosedLoop,
        InputSource::Sequence(v) => {
            if v.len() != total {
                return Err(EngineError::InputLengthMismatch { expected: total, got: v.len() });
            }
            RunMode::OpenLoop
        }
    };
    if let InputSource::ClosedLoop { eta, .. } = &source {
        if !(eta.is_finite() && (0.0..=1.0).contains(eta)) {
            return Err(EngineError::BadConfig("closed-loop eta must be in [0, 1]".into()));
        }
    }

    let wall_start = Instant::now();
    let mut controller = Controller::new(kind, cfg)?;
    let mut steps = Vec::with_capacity(total);
    let mut last_output: Option<LatentTensor> = None;

    // Shadow full-compute trajectory for the end-to-end error figure.
    let mut shadow_input: Option<LatentTensor> = None;
    let mut shadow_final: Option<LatentTensor> = None;

    match source {
        InputSource::ClosedLoop { initial, eta } => {
            if cfg.oracle {
                shadow_input = Some(initial.clone());
            }
            let mut z = initial;
            for t in 0..total {
                let (out, telemetry) = controller.run_step(denoiser, &z, t)?;
                steps.push(telemetry);
                if let Some(sz) = shadow_input.take() {
                    let szk = denoiser.probe_forward(&sz, t);
                    let szn = denoiser.deep_forward(&szk, t);
                    shadow_input = Some(closed_loop_update(&sz, &szn, eta));
                    shadow_final = Some(szn);
                }
                z = closed_loop_update(&z, &out, eta);
                last_output = Some(out);
            }
        }
        InputSource::Sequence(inputs) => {
            for (t, z) in inputs.iter().enumerate() {
                let (out, telemetry) = controller.run_step(denoiser, z, t)?;
                steps.push(telemetry);
                if cfg.oracle && t + 1 == total {
                    let szk = denoiser.probe_forward(z, t);
                    shadow_final = Some(denoiser.deep_forward(&szk, t));
                }
                last_output = Some(out);
            }
        }
    }

    let hits = steps.iter().filter(|s| s.decision.kind.is_hit()).count();
    let misses = total - hits;
    let total_cost: f64 = steps.iter().map(|s| s.cost_spent).sum();
    let full_cost = total as f64 * (denoiser.probe_cost() + denoiser.deep_cost());
    let final_output_error = match (&last_output, &shadow_final) {
        (Some(out), Some(truth)) => Some(relative_l1(out, truth, cfg.policy.eps)?),
        _ => None,
    };
    let mean = |vals: Vec<f64>| {
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    let mean_hit_error = mean(steps.iter().filter_map(|s| s.oracle_error).collect());
    let mean_gamma = mean(steps.iter().filter_map(|s| s.gamma).collect());
    let mean_gamma_scalar = mean(steps.iter().filter_map(|s| s.gamma_scalar).collect());

    Ok(RunReport {
        policy: kind,
        mode,
        total_steps: total,
        hits,
        misses,
        skip_rate: hits as f64 / total as f64,
        total_cost,
        full_cost,
        simulated_speedup: full_cost / total_cost,
        final_output_error,
        mean_hit_error,
        mean_gamma,
        mean_gamma_scalar,
        wall_total_s: wall_start.elapsed().as_secs_f64(),
        steps,
    })
}
