//! Drift-aware feature caching for iterative denoisers.
//!
//! The model of a denoiser here is a two-stage step: a cheap *probe* prefix
//! that always runs, and an expensive *deep* suffix that we try to skip.
//! Each step the controller measures how much the probe features moved,
//! weights that drift by where the latent is structurally busy, and compares
//! it against a threshold that adapts to scene motion and to the position in
//! the denoising schedule. On a skip, the deep output is reconstructed from
//! the two most recent fully-computed steps by a least-squares gain over
//! their residuals, optionally after motion-compensating the newer one with
//! a Lucas-Kanade latent flow.
//!
//! The crate ships the numeric core ([`tensor`]), the drift signals
//! ([`signals`]), the skip policy ([`policy`]), the two-slot residual cache
//! ([`cache`]), residual interpolation and flow warping ([`ofa`]), the step
//! controller and baselines ([`engine`]), synthetic scenarios ([`sim`]), and
//! a binary trace format with open-loop replay ([`trace`], [`replay`]).
//!
//! The `parallel` feature (on by default) runs the elementwise kernels and
//! the flow solver on rayon; reductions combine fixed-size chunks in order,
//! so results do not depend on thread scheduling.

mod par;

pub mod cache;
pub mod engine;
pub mod ofa;
pub mod policy;
pub mod replay;
pub mod signals;
pub mod sim;
pub mod tensor;
pub mod trace;

pub use cache::{CacheError, CacheSlot, ResidualCache};
pub use engine::{
    AblationFlags, Controller, Denoiser, EngineConfig, EngineError, InputSource, PolicyKind,
    RunMode, RunReport, StepTelemetry, run_trajectory,
};
pub use ofa::{DisplacementField, LkParams, OsiResult};
pub use policy::{AtsMode, CacheDecision, DecisionKind, PolicyConfig, PolicyError};
pub use replay::{record_trace, replay_decisions, ReplayError};
pub use signals::{DriftReading, SaliencyMap};
pub use sim::{OracleRun, ScenarioConfig, ScenarioKind, SyntheticDenoiser};
pub use tensor::{ChannelGrid, LatentTensor, SpatialMap, TensorError, TensorShape};
pub use trace::{TapMask, TraceError, TraceHeader, TraceStep};
