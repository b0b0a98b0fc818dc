//! Synthetic denoisers with analytically known residuals.
//!
//! Each scenario isolates one part of the pipeline: `static` holds the
//! residual fixed, `linear-drift` makes it affine in the step index so
//! least-squares interpolation is exact, `translating-pattern` moves a
//! spatial bump to exercise flow and warping, `curved` rotates the
//! residual in a fixed 2-plane to exercise gain attenuation, and
//! `rising-drift` grows its magnitude so probe drift climbs over the run.
//!
//! The model is deliberately transparent: the probe applies a seeded
//! per-channel mixing plus a fraction of the step residual, and the deep
//! stage inverts the mixing and adds the full residual. Deep output minus
//! input therefore reproduces the declared residual field up to rounding.
//!
//! Field amplitudes are expressed in units of `1 / (batch * frames *
//! channels)` so that a scale of 1.0 gives a mean absolute value whose L1
//! norm equals the location count. This keeps the absolute
//! saliency-weighted drift and the relative probe drift on a comparable
//! scale under one threshold.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Denoiser, InputSource};
use crate::tensor::{LatentTensor, TensorError, TensorShape};

/// Abstract cost of the probe prefix, as a fraction of one full step.
pub const PROBE_COST: f64 = 0.15;
/// Abstract cost of the deep suffix, as a fraction of one full step.
pub const DEEP_COST: f64 = 0.85;

/// Largest tensor a scenario will generate; keeps runs desk-scale.
pub const MAX_ELEMENTS: usize = 1_000_000;

const SMOOTH_PASSES: usize = 3;
const BUMP_SIGMA: f64 = 3.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Static,
    LinearDrift,
    TranslatingPattern,
    Curved,
    RisingDrift,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Static,
        ScenarioKind::LinearDrift,
        ScenarioKind::TranslatingPattern,
        ScenarioKind::Curved,
        ScenarioKind::RisingDrift,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Static => "static",
            ScenarioKind::LinearDrift => "linear-drift",
            ScenarioKind::TranslatingPattern => "translating-pattern",
            ScenarioKind::Curved => "curved",
            ScenarioKind::RisingDrift => "rising-drift",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown scenario '{s}' (expected static, linear-drift, translating-pattern, curved, or rising-drift)"
                )
            })
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub shape: TensorShape,
    pub seed: u64,
    pub total_steps: usize,
    /// Feedback rate of the closed-loop update; 0 freezes the input.
    pub eta: f64,
    /// Mean absolute value of the input field, in base units.
    pub input_scale: f64,
    /// Mean absolute value of the residual field, in base units.
    pub residual_scale: f64,
    /// Kind-specific second amplitude: slope field scale for linear-drift,
    /// total magnitude growth factor for rising-drift; unused otherwise.
    pub drift_scale: f64,
    /// Bump translation in latent pixels per step (translating-pattern).
    pub motion_speed: f64,
    /// Residual rotation in radians per step (curved), in [0, 1].
    pub curvature: f64,
    /// Per-element residual noise amplitude, in base units.
    pub noise_sigma: f64,
    /// Fraction of the step residual visible to the probe.
    pub probe_fraction: f64,
    /// Half-range of the per-channel probe mixing around 1.
    pub mix_spread: f64,
}

impl ScenarioConfig {
    /// Tuned defaults per scenario kind.
    pub fn preset(kind: ScenarioKind) -> Self {
        let base = ScenarioConfig {
            kind,
            shape: TensorShape::new(1, 4, 32, 32, 16).expect("default shape is valid"),
            seed: 7,
            total_steps: 35,
            eta: 0.5,
            input_scale: 1.0,
            residual_scale: 0.12,
            drift_scale: 0.0,
            motion_speed: 0.0,
            curvature: 0.0,
            noise_sigma: 0.0,
            probe_fraction: 0.4,
            mix_spread: 0.1,
        };
        match kind {
            // Frozen input: every post-warmup step is a perfect reuse.
            ScenarioKind::Static => ScenarioConfig { eta: 0.0, ..base },
            // Full probe visibility and identity mixing keep the probe's
            // partial residual colinear with the cached deltas. The
            // amplitudes sit where the decision pattern settles into
            // miss-then-lengthening-hit-streak cycles whose implied gain
            // never leaves [0, 2], so the interpolation stays exact for
            // the whole run.
            ScenarioKind::LinearDrift => ScenarioConfig {
                eta: 0.38,
                residual_scale: 0.22,
                drift_scale: 0.40,
                probe_fraction: 1.0,
                mix_spread: 0.0,
                ..base
            },
            // Per-step noise keeps the drift signal fluctuating, which
            // delays the threshold crossover and keeps hit streaks short
            // enough that the moving bump stays within flow range of the
            // cached slots.
            ScenarioKind::TranslatingPattern => ScenarioConfig {
                eta: 0.6,
                input_scale: 0.25,
                residual_scale: 0.8,
                motion_speed: 0.5,
                noise_sigma: 0.2,
                ..base
            },
            // Amplitude low enough that drift stays under the fixed
            // threshold, so every policy skips at the same saturated rate
            // and the comparison isolates how each gain rule handles the
            // rotating residual.
            ScenarioKind::Curved => ScenarioConfig {
                eta: 0.4,
                residual_scale: 0.10,
                curvature: 0.5,
                ..base
            },
            // Starts just under the fixed threshold so the baseline gets
            // its early hits, then the thirtyfold rise prices it out
            // while the relaxing threshold keeps skipping.
            ScenarioKind::RisingDrift => ScenarioConfig {
                eta: 0.4,
                residual_scale: 0.075,
                drift_scale: 30.0,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::BadConfig(msg.to_string()));
        if self.shape.element_count() > MAX_ELEMENTS {
            return bad("shape exceeds the desk-scale element budget");
        }
        if self.total_steps == 0 {
            return bad("total_steps must be at least 1");
        }
        if !(self.eta.is_finite() && (0.0..=1.0).contains(&self.eta)) {
            return bad("eta must be in [0, 1]");
        }
        for (name, v) in [
            ("input_scale", self.input_scale),
            ("residual_scale", self.residual_scale),
            ("drift_scale", self.drift_scale),
            ("motion_speed", self.motion_speed),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be finite and nonnegative"));
            }
        }
        if !(self.curvature.is_finite() && (0.0..=1.0).contains(&self.curvature)) {
            return bad("curvature must be in [0, 1]");
        }
        if !(self.probe_fraction.is_finite() && self.probe_fraction > 0.0 && self.probe_fraction <= 1.0)
        {
            return bad("probe_fraction must be in (0, 1]");
        }
        if !(self.mix_spread.is_finite() && (0.0..=0.5).contains(&self.mix_spread)) {
            return bad("mix_spread must be in [0, 0.5]");
        }
        if self.kind == ScenarioKind::RisingDrift && self.drift_scale < 1.0 {
            return bad("rising-drift needs a growth factor (drift_scale) of at least 1");
        }
        Ok(())
    }

    /// Base amplitude unit: `1 / (batch * frames * channels)`, so a field
    /// at scale 1.0 has L1 norm equal to the location count.
    pub fn unit(&self) -> f64 {
        1.0 / (self.shape.batch * self.shape.frames * self.shape.channels) as f64
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::preset(ScenarioKind::Static)
    }
}

/// Full-compute reference trajectory.
pub struct OracleRun {
    /// Raw input per step.
    pub inputs: Vec<LatentTensor>,
    /// True deep output per step.
    pub outputs: Vec<LatentTensor>,
}

impl OracleRun {
    pub fn final_output(&self) -> &LatentTensor {
        self.outputs.last().expect("oracle runs cover at least one step")
    }
}

/// Deterministic synthetic denoiser with a per-step residual schedule.
pub struct SyntheticDenoiser {
    cfg: ScenarioConfig,
    mixing: Vec<f64>,
    residuals: Vec<LatentTensor>,
    initial: LatentTensor,
    /// Present only for scenarios driven open-loop.
    input_sequence: Option<Vec<LatentTensor>>,
}

/// Independent substream of the run seed; ChaCha streams keep every
/// consumer decoupled from generation order.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_INPUT: u64 = 1;
const STREAM_MIXING: u64 = 2;
const STREAM_FIELD_A: u64 = 3;
const STREAM_FIELD_B: u64 = 4;
const STREAM_BUMP_WEIGHTS: u64 = 5;
const STREAM_NOISE_BASE: u64 = 0x100;

/// White noise blurred along H and W, then scaled to mean absolute value
/// exactly 1. `wrap` makes the field periodic so it can be translated on a
/// torus without seams.
fn smooth_unit_field(rng: &mut ChaCha8Rng, shape: TensorShape, wrap: bool) -> Vec<f64> {
    let n = shape.element_count();
    let mut data: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    for _ in 0..SMOOTH_PASSES {
        blur_axis(&mut data, shape, true, wrap);
        blur_axis(&mut data, shape, false, wrap);
    }
    let l1: f64 = data.iter().map(|v| v.abs()).sum();
    let scale = n as f64 / l1;
    for v in &mut data {
        *v *= scale;
    }
    data
}

/// One 1-2-1 pass along W (`horizontal`) or H, per (batch, frame,
/// channel) plane. Edges replicate unless `wrap`.
fn blur_axis(data: &mut [f64], shape: TensorShape, horizontal: bool, wrap: bool) {
    let (bn, fs, h, w, d) = (
        shape.batch,
        shape.frames,
        shape.height,
        shape.width,
        shape.channels,
    );
    let src = data.to_vec();
    let extent = if horizontal { w } else { h };
    let pick = |i: isize| -> usize {
        if wrap {
            i.rem_euclid(extent as isize) as usize
        } else {
            i.clamp(0, extent as isize - 1) as usize
        }
    };
    for b in 0..bn {
        for f in 0..fs {
            for y in 0..h {
                for x in 0..w {
                    for c in 0..d {
                        let at = |yy: usize, xx: usize| src[shape.index(b, f, yy, xx, c)];
                        let i = if horizontal { x } else { y } as isize;
                        let (lo, hi) = (pick(i - 1), pick(i + 1));
                        let (a, m, z) = if horizontal {
                            (at(y, lo), at(y, x), at(y, hi))
                        } else {
                            (at(lo, x), at(y, x), at(hi, x))
                        };
                        data[shape.index(b, f, y, x, c)] = 0.25 * a + 0.5 * m + 0.25 * z;
                    }
                }
            }
        }
    }
}

/// Sample `base` at `(h - dy, w - dx)` with wrapped bilinear weights, so
/// content moves by `(dy, dx)` pixels.
fn translate_wrapped(base: &[f64], shape: TensorShape, dy: f64, dx: f64) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let mut out = vec![0.0; shape.element_count()];
    for b in 0..shape.batch {
        for f in 0..shape.frames {
            for y in 0..h {
                let sy = (y as f64 - dy).rem_euclid(h as f64);
                let y0 = sy.floor() as usize % h;
                let fy = sy - sy.floor();
                let y1 = (y0 + 1) % h;
                for x in 0..w {
                    let sx = (x as f64 - dx).rem_euclid(w as f64);
                    let x0 = sx.floor() as usize % w;
                    let fx = sx - sx.floor();
                    let x1 = (x0 + 1) % w;
                    for c in 0..shape.channels {
                        let v = if fy == 0.0 && fx == 0.0 {
                            base[shape.index(b, f, y0, x0, c)]
                        } else {
                            let v00 = base[shape.index(b, f, y0, x0, c)];
                            let v01 = base[shape.index(b, f, y0, x1, c)];
                            let v10 = base[shape.index(b, f, y1, x0, c)];
                            let v11 = base[shape.index(b, f, y1, x1, c)];
                            (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
                                + fy * ((1.0 - fx) * v10 + fx * v11)
                        };
                        out[shape.index(b, f, y, x, c)] = v;
                    }
                }
            }
        }
    }
    out
}

/// Gaussian bump centered at `(cy, cx)` in wrapped coordinates, scaled per
/// channel by `weights`.
fn bump_field(shape: TensorShape, cy: f64, cx: f64, weights: &[f64]) -> Vec<f64> {
    let (h, w) = (shape.height as f64, shape.width as f64);
    let mut out = vec![0.0; shape.element_count()];
    for b in 0..shape.batch {
        for f in 0..shape.frames {
            for y in 0..shape.height {
                let mut ddy = (y as f64 - cy).abs() % h;
                ddy = ddy.min(h - ddy);
                for x in 0..shape.width {
                    let mut ddx = (x as f64 - cx).abs() % w;
                    ddx = ddx.min(w - ddx);
                    let g = (-(ddy * ddy + ddx * ddx) / (2.0 * BUMP_SIGMA * BUMP_SIGMA)).exp();
                    for c in 0..shape.channels {
                        out[shape.index(b, f, y, x, c)] = g * weights[c];
                    }
                }
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l1(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

impl SyntheticDenoiser {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let shape = cfg.shape;
        let n = shape.element_count();
        let unit = cfg.unit();
        let t_total = cfg.total_steps;
        // Shared denominator for per-step phases; guards the T = 1 edge.
        let span = (t_total.saturating_sub(1)).max(1) as f64;

        let mixing: Vec<f64> = {
            let mut rng = stream_rng(cfg.seed, STREAM_MIXING);
            (0..shape.channels)
                .map(|_| {
                    let u: f64 = StandardNormal.sample(&mut rng);
                    1.0 + cfg.mix_spread * (2.0 * (1.0 / (1.0 + (-u).exp())) - 1.0)
                })
                .collect()
        };

        let mut input_rng = stream_rng(cfg.seed, STREAM_INPUT);
        let wrap = cfg.kind == ScenarioKind::TranslatingPattern;
        let input_base = smooth_unit_field(&mut input_rng, shape, wrap);
        let input_amp = cfg.input_scale * unit;
        let scale_field = |field: &[f64], amp: f64| -> Vec<f64> {
            field.iter().map(|v| v * amp).collect()
        };

        let (initial, input_sequence) = if wrap {
            // Open-loop stream: the input itself translates, so the flow
            // estimator observes real motion between consecutive inputs.
            let seq: Vec<LatentTensor> = (0..t_total)
                .map(|t| {
                    let dx = cfg.motion_speed * t as f64;
                    let shifted = translate_wrapped(&input_base, shape, 0.0, dx);
                    LatentTensor::from_vec(shape, scale_field(&shifted, input_amp))
                })
                .collect::<Result<_, _>>()?;
            (seq[0].clone(), Some(seq))
        } else {
            (
                LatentTensor::from_vec(shape, scale_field(&input_base, input_amp))?,
                None,
            )
        };

        let residual_amp = cfg.residual_scale * unit;
        let mut fields: Vec<Vec<f64>> = match cfg.kind {
            ScenarioKind::Static => {
                let mut rng = stream_rng(cfg.seed, STREAM_FIELD_A);
                let r = scale_field(&smooth_unit_field(&mut rng, shape, false), residual_amp);
                (0..t_total).map(|_| r.clone()).collect()
            }
            ScenarioKind::LinearDrift => {
                let mut rng_a = stream_rng(cfg.seed, STREAM_FIELD_A);
                let mut rng_b = stream_rng(cfg.seed, STREAM_FIELD_B);
                let a = scale_field(&smooth_unit_field(&mut rng_a, shape, false), residual_amp);
                let b = scale_field(
                    &smooth_unit_field(&mut rng_b, shape, false),
                    cfg.drift_scale * unit,
                );
                (0..t_total)
                    .map(|t| {
                        let phase = t as f64 / t_total as f64;
                        a.iter().zip(&b).map(|(x, y)| x + phase * y).collect()
                    })
                    .collect()
            }
            ScenarioKind::TranslatingPattern => {
                let weights: Vec<f64> = {
                    let mut rng = stream_rng(cfg.seed, STREAM_BUMP_WEIGHTS);
                    (0..shape.channels)
                        .map(|_| {
                            let u: f64 = StandardNormal.sample(&mut rng);
                            0.6 + 0.8 / (1.0 + (-u).exp())
                        })
                        .collect()
                };
                let cy = shape.height as f64 / 2.0;
                let cx0 = shape.width as f64 / 4.0;
                // One normalization constant for the whole path keeps the
                // bump's amplitude consistent as it moves.
                let probe0 = bump_field(shape, cy, cx0, &weights);
                let amp = residual_amp * n as f64 / l1(&probe0);
                (0..t_total)
                    .map(|t| {
                        let cx = cx0 + cfg.motion_speed * t as f64;
                        scale_field(&bump_field(shape, cy, cx, &weights), amp)
                    })
                    .collect()
            }
            ScenarioKind::Curved => {
                let mut rng_a = stream_rng(cfg.seed, STREAM_FIELD_A);
                let mut rng_b = stream_rng(cfg.seed, STREAM_FIELD_B);
                let f1 = smooth_unit_field(&mut rng_a, shape, false);
                let f2 = smooth_unit_field(&mut rng_b, shape, false);
                // Orthonormal 2-plane basis so the rotation is an exact
                // circle in L2.
                let n1 = dot(&f1, &f1).sqrt();
                let e1: Vec<f64> = f1.iter().map(|v| v / n1).collect();
                let proj = dot(&f2, &e1);
                let g2: Vec<f64> = f2.iter().zip(&e1).map(|(v, e)| v - proj * e).collect();
                let n2 = dot(&g2, &g2).sqrt();
                let e2: Vec<f64> = g2.iter().map(|v| v / n2).collect();
                let amp = residual_amp * n as f64 * 2.0 / (l1(&e1) + l1(&e2));
                (0..t_total)
                    .map(|t| {
                        let (s, c) = (cfg.curvature * t as f64).sin_cos();
                        e1.iter()
                            .zip(&e2)
                            .map(|(x, y)| amp * (c * x + s * y))
                            .collect()
                    })
                    .collect()
            }
            ScenarioKind::RisingDrift => {
                let mut rng = stream_rng(cfg.seed, STREAM_FIELD_A);
                let base = scale_field(&smooth_unit_field(&mut rng, shape, false), residual_amp);
                (0..t_total)
                    .map(|t| {
                        let g = cfg.drift_scale.powf(t as f64 / span);
                        base.iter().map(|v| v * g).collect()
                    })
                    .collect()
            }
        };

        if cfg.noise_sigma > 0.0 {
            let noise_amp = cfg.noise_sigma * unit;
            for (t, field) in fields.iter_mut().enumerate() {
                let mut rng = stream_rng(cfg.seed, STREAM_NOISE_BASE + t as u64);
                for v in field.iter_mut() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *v += noise_amp * e;
                }
            }
        }

        let residuals = fields
            .into_iter()
            .map(|f| LatentTensor::from_vec(shape, f))
            .collect::<Result<Vec<_>, _>>()?;

        Ok(SyntheticDenoiser { cfg, mixing, residuals, initial, input_sequence })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn mixing(&self) -> &[f64] {
        &self.mixing
    }

    /// Declared residual field for one step.
    pub fn residual(&self, step: usize) -> &LatentTensor {
        &self.residuals[step]
    }

    pub fn initial_input(&self) -> &LatentTensor {
        &self.initial
    }

    /// How the engine should drive this scenario: a closed feedback loop,
    /// or the scenario's own open-loop input stream.
    pub fn input_source(&self) -> InputSource {
        match &self.input_sequence {
            Some(seq) => InputSource::Sequence(seq.clone()),
            None => InputSource::ClosedLoop { initial: self.initial.clone(), eta: self.cfg.eta },
        }
    }

    /// Full-compute reference trajectory, written as its own plain loop so
    /// engine tests have an independent target.
    pub fn run_oracle(&self) -> OracleRun {
        let total = self.cfg.total_steps;
        let mut inputs = Vec::with_capacity(total);
        let mut outputs = Vec::with_capacity(total);
        match &self.input_sequence {
            Some(seq) => {
                for (t, z) in seq.iter().enumerate() {
                    let zk = self.probe_forward(z, t);
                    let zn = self.deep_forward(&zk, t);
                    inputs.push(z.clone());
                    outputs.push(zn);
                }
            }
            None => {
                let eta = self.cfg.eta;
                let mut z = self.initial.clone();
                for t in 0..total {
                    let zk = self.probe_forward(&z, t);
                    let zn = self.deep_forward(&zk, t);
                    let next: Vec<f64> = z
                        .data()
                        .iter()
                        .zip(zn.data())
                        .map(|(a, o)| a + eta * (o - a))
                        .collect();
                    inputs.push(z.clone());
                    outputs.push(zn.clone());
                    z = LatentTensor::from_vec(self.cfg.shape, next)
                        .expect("finite inputs stay finite under convex update");
                }
            }
        }
        OracleRun { inputs, outputs }
    }
}

impl Denoiser for SyntheticDenoiser {
    fn shape(&self) -> TensorShape {
        self.cfg.shape
    }

    /// `zk = mix(z0) + probe_fraction * r_t`, channelwise mixing.
    fn probe_forward(&self, z0: &LatentTensor, step: usize) -> LatentTensor {
        let d = self.cfg.shape.channels;
        let f = self.cfg.probe_fraction;
        let r = self.residuals[step].data();
        let data: Vec<f64> = z0
            .data()
            .iter()
            .enumerate()
            .map(|(i, z)| self.mixing[i % d] * z + f * r[i])
            .collect();
        LatentTensor::from_vec(self.cfg.shape, data).expect("probe output is finite")
    }

    /// Invert the mixing, then add the full residual:
    /// `zn = (zk - probe_fraction * r_t) / mix + r_t`.
    fn deep_forward(&self, zk: &LatentTensor, step: usize) -> LatentTensor {
        let d = self.cfg.shape.channels;
        let f = self.cfg.probe_fraction;
        let r = self.residuals[step].data();
        let data: Vec<f64> = zk
            .data()
            .iter()
            .enumerate()
            .map(|(i, k)| (k - f * r[i]) / self.mixing[i % d] + r[i])
            .collect();
        LatentTensor::from_vec(self.cfg.shape, data).expect("deep output is finite")
    }

    fn probe_cost(&self) -> f64 {
        PROBE_COST
    }

    fn deep_cost(&self) -> f64 {
        DEEP_COST
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::relative_l1;

    fn den(kind: ScenarioKind) -> SyntheticDenoiser {
        SyntheticDenoiser::new(ScenarioConfig::preset(kind)).unwrap()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn construction_is_deterministic() {
        for kind in ScenarioKind::ALL {
            let a = den(kind);
            let b = den(kind);
            assert_eq!(a.initial_input().data(), b.initial_input().data());
            assert_eq!(a.residual(5).data(), b.residual(5).data());
            let ra = a.run_oracle();
            let rb = b.run_oracle();
            assert_eq!(ra.final_output().data(), rb.final_output().data());
        }
    }

    #[test]
    fn input_amplitude_is_calibrated() {
        for kind in ScenarioKind::ALL {
            let d = den(kind);
            let cfg = d.config();
            let mean_abs =
                d.initial_input().l1_norm() / cfg.shape.element_count() as f64;
            let want = cfg.input_scale * cfg.unit();
            assert!(
                (mean_abs - want).abs() <= 1e-9 * want,
                "{kind}: {mean_abs} vs {want}"
            );
        }
    }

    #[test]
    fn deep_minus_input_reproduces_the_residual() {
        for kind in ScenarioKind::ALL {
            let d = den(kind);
            let z = d.initial_input();
            for t in [0, 7, 20] {
                let zn = d.deep_forward(&d.probe_forward(z, t), t);
                let diff = zn.subtract(z).unwrap();
                let err = max_abs_diff(diff.data(), d.residual(t).data());
                assert!(err <= 1e-12, "{kind} step {t}: {err}");
            }
        }
    }

    #[test]
    fn probe_exposes_the_declared_fraction() {
        let d = den(ScenarioKind::Curved);
        let z = d.initial_input();
        let zk = d.probe_forward(z, 4);
        let dch = d.config().shape.channels;
        let f = d.config().probe_fraction;
        let r = d.residual(4).data();
        for (i, (k, z0)) in zk.data().iter().zip(z.data()).enumerate() {
            let want = d.mixing()[i % dch] * z0 + f * r[i];
            assert!((k - want).abs() <= 1e-15);
        }
    }

    #[test]
    fn static_outputs_differ_only_by_input_difference() {
        // Run static with feedback so the inputs actually move.
        let cfg = ScenarioConfig { eta: 0.5, ..ScenarioConfig::preset(ScenarioKind::Static) };
        let d = SyntheticDenoiser::new(cfg).unwrap();
        let run = d.run_oracle();
        let out_diff = run.outputs[7].subtract(&run.outputs[3]).unwrap();
        let in_diff = run.inputs[7].subtract(&run.inputs[3]).unwrap();
        assert!(max_abs_diff(out_diff.data(), in_diff.data()) <= 1e-12);
    }

    #[test]
    fn static_rollout_matches_the_closed_form() {
        // z_{t+1} = z_t + eta * r, so the last output is
        // z_0 + ((T-1) * eta + 1) * r.
        let cfg = ScenarioConfig { eta: 0.5, ..ScenarioConfig::preset(ScenarioKind::Static) };
        let d = SyntheticDenoiser::new(cfg).unwrap();
        let run = d.run_oracle();
        let t = cfg.total_steps as f64;
        let gain = (t - 1.0) * cfg.eta + 1.0;
        let want: Vec<f64> = d
            .initial_input()
            .data()
            .iter()
            .zip(d.residual(0).data())
            .map(|(z, r)| z + gain * r)
            .collect();
        assert!(max_abs_diff(run.final_output().data(), &want) <= 1e-9);
    }

    #[test]
    fn oracle_inputs_follow_the_feedback_rule() {
        let d = den(ScenarioKind::Curved);
        let run = d.run_oracle();
        let eta = d.config().eta;
        for t in 0..d.config().total_steps - 1 {
            let want: Vec<f64> = run.inputs[t]
                .data()
                .iter()
                .zip(run.outputs[t].data())
                .map(|(z, o)| z + eta * (o - z))
                .collect();
            assert_eq!(run.inputs[t + 1].data(), &want[..]);
        }
    }

    #[test]
    fn linear_drift_second_difference_vanishes() {
        let d = den(ScenarioKind::LinearDrift);
        for t in 1..d.config().total_steps - 1 {
            let (a, b, c) =
                (d.residual(t - 1).data(), d.residual(t).data(), d.residual(t + 1).data());
            let worst = (0..a.len())
                .map(|i| (c[i] - 2.0 * b[i] + a[i]).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-12, "step {t}: {worst}");
        }
    }

    #[test]
    fn curved_residual_traces_a_cosine() {
        let d = den(ScenarioKind::Curved);
        let c = d.config().curvature;
        let r0 = d.residual(0).data();
        let norm_sq = dot(r0, r0);
        for t in 0..20 {
            let rt = d.residual(t).data();
            let diff: Vec<f64> = rt.iter().zip(r0).map(|(a, b)| a - b).collect();
            let got = dot(&diff, r0);
            let want = ((c * t as f64).cos() - 1.0) * norm_sq;
            assert!((got - want).abs() <= 1e-9, "step {t}: {got} vs {want}");
        }
    }

    #[test]
    fn rising_drift_magnitude_grows() {
        let d = den(ScenarioKind::RisingDrift);
        let mut prev = d.residual(0).l1_norm();
        for t in 1..d.config().total_steps {
            let cur = d.residual(t).l1_norm();
            assert!(cur > prev, "step {t}: {cur} <= {prev}");
            prev = cur;
        }
        let total_growth = d.residual(d.config().total_steps - 1).l1_norm()
            / d.residual(0).l1_norm();
        let want = d.config().drift_scale;
        assert!((total_growth - want).abs() <= 1e-6 * want);
    }

    #[test]
    fn translating_bump_moves_at_the_configured_speed() {
        // Noise-free so the centroid weighs only the bump itself.
        let mut cfg = ScenarioConfig::preset(ScenarioKind::TranslatingPattern);
        cfg.noise_sigma = 0.0;
        let d = SyntheticDenoiser::new(cfg).unwrap();
        let shape = d.config().shape;
        let centroid_x = |r: &LatentTensor| {
            let mut mass = 0.0;
            let mut mx = 0.0;
            for x in 0..shape.width {
                for y in 0..shape.height {
                    let v = r.get(0, 0, y, x, 0).abs();
                    mass += v;
                    mx += v * x as f64;
                }
            }
            mx / mass
        };
        let c0 = centroid_x(d.residual(0));
        let c4 = centroid_x(d.residual(4));
        let want = 4.0 * d.config().motion_speed;
        assert!(((c4 - c0) - want).abs() <= 0.1, "moved {} want {want}", c4 - c0);
    }

    #[test]
    fn translating_inputs_translate_too() {
        let d = den(ScenarioKind::TranslatingPattern);
        let run = d.run_oracle();
        // Input at step 2 equals input at step 0 shifted by one pixel
        // (speed 0.5 px/step, wrapped).
        let shape = d.config().shape;
        let a = run.inputs[0].data();
        let b = run.inputs[2].data();
        let mut worst = 0.0f64;
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    let src = b[shape.index(0, 1, y, x, c)];
                    let dst = a[shape.index(0, 1, y, (x + shape.width - 1) % shape.width, c)];
                    worst = worst.max((src - dst).abs());
                }
            }
        }
        let scale = d.config().input_scale * d.config().unit();
        assert!(worst <= 1e-9 * scale.max(1.0), "worst {worst}");
    }

    #[test]
    fn noise_perturbs_but_stays_deterministic() {
        let base = ScenarioConfig::preset(ScenarioKind::Static);
        let noisy = ScenarioConfig { noise_sigma: 0.05, ..base };
        let a = SyntheticDenoiser::new(noisy).unwrap();
        let b = SyntheticDenoiser::new(noisy).unwrap();
        assert_eq!(a.residual(3).data(), b.residual(3).data());
        let clean = SyntheticDenoiser::new(base).unwrap();
        let moved = relative_l1(a.residual(3), clean.residual(3), 1e-8).unwrap();
        assert!(moved > 0.0);
        // Distinct steps draw from distinct noise streams.
        let step_diff = relative_l1(a.residual(3), a.residual(4), 1e-8).unwrap();
        assert!(step_diff > 0.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = ScenarioConfig::preset(ScenarioKind::Curved);
        for bad in [
            ScenarioConfig { eta: 1.5, ..base },
            ScenarioConfig { curvature: 1.5, ..base },
            ScenarioConfig { probe_fraction: 0.0, ..base },
            ScenarioConfig { total_steps: 0, ..base },
            ScenarioConfig { mix_spread: 0.9, ..base },
            ScenarioConfig {
                shape: TensorShape::new(4, 8, 64, 64, 32).unwrap(),
                ..base
            },
        ] {
            assert!(SyntheticDenoiser::new(bad).is_err());
        }
    }

    #[test]
    fn scenario_names_round_trip() {
        for kind in ScenarioKind::ALL {
            assert_eq!(kind.as_str().parse::<ScenarioKind>().unwrap(), kind);
        }
        assert!("warp-speed".parse::<ScenarioKind>().is_err());
    }
}
