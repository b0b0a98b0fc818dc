//! Offline policy evaluation over recorded traces.
//!
//! A replay walks the recorded taps step by step and makes the same
//! decisions the live engine would, but every signal comes from the trace:
//! probe drift from recorded `zk`, velocity from the recorded input two
//! steps back (valid because recorded traces are fully computed), and
//! cache slots from recorded `z0`/`zn` at miss steps. Decisions therefore
//! depend only on the fixed recorded values, which makes threshold sweeps
//! provably monotone and lets two configs be compared under identical
//! decision sequences.
//!
//! Traces need `z0` and `zk`. With `zn` present, hits are reconstructed
//! and scored against the recorded deep outputs; without it the replay is
//! decisions-only.

use std::time::Instant;

use thiserror::Error;

use crate::cache::{CacheError, CacheSlot, ResidualCache};
use crate::engine::{
    self, Denoiser, EngineConfig, EngineError, PolicyKind, RunMode, RunReport, StepTelemetry,
    StepWall,
};
use crate::signals::{self, DriftReading};
use crate::sim::{SyntheticDenoiser, DEEP_COST, PROBE_COST};
use crate::tensor::{relative_l1, TensorError};
use crate::trace::{TapMask, TraceHeader, TraceStep};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("trace header lacks the {tap} tap required for replay")]
    HeaderMissingTap { tap: &'static str },
    #[error("step {step}: tap {tap} missing from the trace body")]
    StepMissingTap { step: usize, tap: &'static str },
    #[error("trace declares {expected} steps but {got} were provided")]
    LengthMismatch { expected: usize, got: usize },
    #[error("cannot replay an empty trace")]
    Empty,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// Record a full-compute run of a synthetic scenario as trace steps.
pub fn record_trace(
    denoiser: &SyntheticDenoiser,
    taps: TapMask,
) -> (TraceHeader, Vec<TraceStep>) {
    let cfg = denoiser.config();
    let run = denoiser.run_oracle();
    let header = TraceHeader {
        shape: cfg.shape,
        total_steps: cfg.total_steps as u32,
        taps,
        seed: cfg.seed,
    };
    let steps = (0..cfg.total_steps)
        .map(|t| TraceStep {
            step: t as u32,
            z0: taps.has_z0().then(|| run.inputs[t].clone()),
            zk: taps.has_zk().then(|| denoiser.probe_forward(&run.inputs[t], t)),
            zn: taps.has_zn().then(|| run.outputs[t].clone()),
        })
        .collect();
    (header, steps)
}

/// Replay a trace under one policy. The schedule horizon is taken from the
/// trace itself; velocity is always anchored to the recorded input two
/// steps back so decisions are independent of the replay's cache state.
pub fn replay_decisions(
    header: &TraceHeader,
    steps: &[TraceStep],
    kind: PolicyKind,
    cfg: &EngineConfig,
) -> Result<RunReport, ReplayError> {
    cfg.validate()?;
    for (tap, present) in [("z0", header.taps.has_z0()), ("zk", header.taps.has_zk())] {
        if !present {
            return Err(ReplayError::HeaderMissingTap { tap });
        }
    }
    let total = header.total_steps as usize;
    if steps.len() != total {
        return Err(ReplayError::LengthMismatch { expected: total, got: steps.len() });
    }
    if total == 0 {
        return Err(ReplayError::Empty);
    }
    let has_zn = header.taps.has_zn();

    let mut eff = *cfg;
    eff.policy.total_steps = total;
    eff.input_anchored_velocity = true;

    let wall_start = Instant::now();
    let p = eff.policy;
    let mut cache = ResidualCache::new();
    let mut miss_count = 0usize;
    let mut out_steps: Vec<StepTelemetry> = Vec::with_capacity(total);
    let mut last_error = 0.0f64;

    fn tap<'a>(
        t: usize,
        name: &'static str,
        v: Option<&'a crate::tensor::LatentTensor>,
    ) -> Result<&'a crate::tensor::LatentTensor, ReplayError> {
        v.ok_or(ReplayError::StepMissingTap { step: t, tap: name })
    }

    for t in 0..total {
        let mut wall = StepWall::default();
        let z0 = tap(t, "z0", steps[t].z0.as_ref())?;
        let zk = tap(t, "zk", steps[t].zk.as_ref())?;

        let t0 = Instant::now();
        let saliency = signals::saliency_map(zk, t);
        let prev_zk = if t >= 1 { steps[t - 1].zk.as_ref() } else { None };
        let anchor = if t >= 2 { steps[t - 2].z0.as_ref() } else { None };
        let reading =
            DriftReading::measure(t, zk, prev_zk, &saliency, z0, anchor, p.beta_s, p.eps)?;
        wall.signals_s = t0.elapsed().as_secs_f64();

        let decision = engine::select_decision(kind, &eff, &reading, miss_count >= 2);

        let telemetry = if decision.kind.is_hit() {
            let (gamma, gamma_raw, gamma_scalar, warp_used, flow_max_px, oracle_error) = if has_zn
            {
                let t0 = Instant::now();
                let hit = engine::reconstruct_hit(kind, &eff, &cache, z0, zk, t)?;
                wall.approx_s = t0.elapsed().as_secs_f64() - hit.flow_s;
                wall.flow_s = hit.flow_s;
                let zn = tap(t, "zn", steps[t].zn.as_ref())?;
                let err = relative_l1(&hit.output, zn, p.eps)?;
                last_error = err;
                (hit.gamma, hit.gamma_raw, hit.gamma_scalar, hit.warp_used, hit.flow_max_px, Some(err))
            } else {
                (None, None, None, false, None, None)
            };
            StepTelemetry {
                step: t,
                decision,
                raw_drift: reading.raw_drift,
                swd_drift: reading.swd_drift,
                velocity: reading.velocity,
                gamma,
                gamma_raw,
                gamma_scalar,
                warp_used,
                flow_max_px,
                cost_spent: PROBE_COST + eff.overhead_frac * DEEP_COST,
                oracle_error,
                wall,
            }
        } else {
            miss_count += 1;
            if has_zn {
                let zn = tap(t, "zn", steps[t].zn.as_ref())?;
                cache.record_full_step(CacheSlot::new(t, z0.clone(), zk.clone(), zn.clone())?)?;
            }
            last_error = 0.0;
            StepTelemetry {
                step: t,
                decision,
                raw_drift: reading.raw_drift,
                swd_drift: reading.swd_drift,
                velocity: reading.velocity,
                gamma: None,
                gamma_raw: None,
                gamma_scalar: None,
                warp_used: false,
                flow_max_px: None,
                cost_spent: PROBE_COST + DEEP_COST,
                oracle_error: None,
                wall,
            }
        };
        out_steps.push(telemetry);
    }

    let hits = total - miss_count;
    let total_cost: f64 = out_steps.iter().map(|s| s.cost_spent).sum();
    let full_cost = total as f64 * (PROBE_COST + DEEP_COST);
    let mean = |vals: Vec<f64>| {
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    Ok(RunReport {
        policy: kind,
        mode: RunMode::OpenLoop,
        total_steps: total,
        hits,
        misses: miss_count,
        skip_rate: hits as f64 / total as f64,
        total_cost,
        full_cost,
        simulated_speedup: full_cost / total_cost,
        final_output_error: has_zn.then_some(last_error),
        mean_hit_error: mean(out_steps.iter().filter_map(|s| s.oracle_error).collect()),
        mean_gamma: mean(out_steps.iter().filter_map(|s| s.gamma).collect()),
        mean_gamma_scalar: mean(out_steps.iter().filter_map(|s| s.gamma_scalar).collect()),
        wall_total_s: wall_start.elapsed().as_secs_f64(),
        steps: out_steps,
    })
}
