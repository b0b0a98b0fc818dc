//! Cache-hit reconstruction: residual interpolation plus optional
//! flow-compensated alignment of the newer cached step.
//!
//! On a hit the deep output is approximated as
//! `z0 + r_old + gamma * (r_new - r_old)`, with the gain chosen by a
//! least-squares projection of the probe's partial residual onto the span
//! of the two cached residuals, clamped to `[0, gamma_max]`. When warping
//! is enabled, a dense Lucas-Kanade flow field between the current input
//! and the newer slot's input re-aligns that slot's deep features first,
//! and `r_new` is replaced by the re-aligned residual.
//!
//! The flow is solved on a bilinearly downscaled grid (`s_flow` times the
//! latent extent), then upsampled with its magnitudes rescaled by
//! `1 / s_flow`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::CacheSlot;
use crate::par;
use crate::policy::PolicyConfig;
use crate::tensor::{ChannelGrid, LatentTensor, TensorError};

#[derive(Debug, Error)]
pub enum OfaError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("flow grid {height}x{width} after scaling is below the 3x3 minimum")]
    DegenerateFlowExtent { height: usize, width: usize },
    #[error("invalid flow solver parameter: {0}")]
    BadLkParams(&'static str),
    #[error("flow field is {flow_h}x{flow_w} but features are {feat_h}x{feat_w}")]
    FlowShapeMismatch { flow_h: usize, flow_w: usize, feat_h: usize, feat_w: usize },
}

/// Lucas-Kanade solver settings: window half-width, solver iterations,
/// and the Tikhonov term added to the structure tensor diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LkParams {
    pub window_radius: usize,
    pub num_iterations: usize,
    pub regularization: f64,
}

impl Default for LkParams {
    fn default() -> Self {
        LkParams { window_radius: 2, num_iterations: 3, regularization: 1e-4 }
    }
}

impl LkParams {
    pub fn validate(&self) -> Result<(), OfaError> {
        if self.window_radius < 1 {
            return Err(OfaError::BadLkParams("window_radius must be >= 1"));
        }
        if self.num_iterations < 1 {
            return Err(OfaError::BadLkParams("num_iterations must be >= 1"));
        }
        if !(self.regularization.is_finite() && self.regularization > 0.0) {
            return Err(OfaError::BadLkParams("regularization must be finite and > 0"));
        }
        Ok(())
    }
}

/// Dense per-pixel displacement `(dy, dx)` in latent pixels, mapping a
/// current-frame coordinate to where its content sits in the previous
/// frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    height: usize,
    width: usize,
    /// Interleaved `(dy, dx)` pairs, row-major.
    values: Vec<f64>,
    scale_used: f64,
}

impl DisplacementField {
    pub fn zeros(height: usize, width: usize) -> Self {
        DisplacementField { height, width, values: vec![0.0; height * width * 2], scale_used: 1.0 }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Scale factor the flow was solved at.
    pub fn scale_used(&self) -> f64 {
        self.scale_used
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> (f64, f64) {
        let i = (h * self.width + w) * 2;
        (self.values[i], self.values[i + 1])
    }

    /// Largest absolute component across the field.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Componentwise mean `(dy, dx)`.
    pub fn mean(&self) -> (f64, f64) {
        let n = (self.height * self.width) as f64;
        let mut dy = 0.0;
        let mut dx = 0.0;
        for p in self.values.chunks_exact(2) {
            dy += p[0];
            dx += p[1];
        }
        (dy / n, dx / n)
    }
}

/// Least-squares gain of the source delta against the target delta,
/// `<dt, ds> / (|ds|^2 + eps)`, clamped into `[0, gamma_max]`.
pub fn osi_gamma(
    delta_tgt: &LatentTensor,
    delta_src: &LatentTensor,
    eps: f64,
    gamma_max: f64,
) -> Result<f64, TensorError> {
    Ok(osi_gamma_raw(delta_tgt, delta_src, eps)?.clamp(0.0, gamma_max))
}

/// The unclamped projection gain.
pub fn osi_gamma_raw(
    delta_tgt: &LatentTensor,
    delta_src: &LatentTensor,
    eps: f64,
) -> Result<f64, TensorError> {
    let num = delta_tgt.inner_product(delta_src)?;
    let den = delta_src.inner_product(delta_src)? + eps;
    Ok(num / den)
}

/// Direction-blind magnitude ratio `|dt|_1 / (|ds|_1 + eps)`, the gain
/// rule used by the fixed-threshold baseline.
pub fn scalar_ratio_gamma(
    delta_tgt: &LatentTensor,
    delta_src: &LatentTensor,
    eps: f64,
) -> Result<f64, TensorError> {
    Ok(delta_tgt.l1_norm() / (delta_src.l1_norm() + eps))
}

/// A reconstructed deep output and the gains that produced it.
#[derive(Debug, Clone)]
pub struct OsiResult {
    pub output: LatentTensor,
    /// Gain actually applied (clamped projection).
    pub gamma: f64,
    /// Projection before clamping.
    pub gamma_raw: f64,
    /// Magnitude-ratio gain over the same deltas, kept as a diagnostic.
    pub gamma_scalar: f64,
}

/// Reconstruct a deep output from the current input and probe plus the two
/// cached residuals. `newer_residual` may already be flow-corrected. With
/// `least_squares` false the scalar magnitude ratio is applied instead of
/// the projection (baseline behaviour); the other gains are still reported.
pub fn osi_approximate(
    z0: &LatentTensor,
    zk: &LatentTensor,
    newer_residual: &LatentTensor,
    older_residual: &LatentTensor,
    eps: f64,
    gamma_max: f64,
    least_squares: bool,
) -> Result<OsiResult, TensorError> {
    // Partial residual seen by the probe, against the older slot.
    let delta_tgt = LatentTensor::from_vec(
        z0.shape(),
        par::zip3_map(zk.data(), z0.data(), older_residual.data(), |k, z, r| k - z - r),
    )
    .expect("finite inputs stay finite under subtraction");
    let delta_src = newer_residual.subtract(older_residual)?;
    let gamma_raw = osi_gamma_raw(&delta_tgt, &delta_src, eps)?;
    let gamma = gamma_raw.clamp(0.0, gamma_max);
    let gamma_scalar = scalar_ratio_gamma(&delta_tgt, &delta_src, eps)?;
    let applied = if least_squares { gamma } else { gamma_scalar };
    let output = LatentTensor::from_vec(
        z0.shape(),
        par::zip3_map(z0.data(), older_residual.data(), delta_src.data(), move |z, r, d| {
            z + r + applied * d
        }),
    )
    .expect("finite inputs stay finite under interpolation");
    Ok(OsiResult { output, gamma, gamma_raw, gamma_scalar })
}

/// Whether warping is active at `step` under this config.
pub fn warp_gate(step: usize, cfg: &PolicyConfig) -> bool {
    cfg.warp_enabled && step >= cfg.warp_disable_before
}

/// Dense flow from the current input to the previous one, solved by
/// iterative Lucas-Kanade on batch/frame-averaged features at scale
/// `s_flow`, then upsampled back to the latent extent.
pub fn estimate_flow(
    curr_input: &LatentTensor,
    prev_input: &LatentTensor,
    s_flow: f64,
    lk: &LkParams,
) -> Result<DisplacementField, OfaError> {
    lk.validate()?;
    if curr_input.shape() != prev_input.shape() {
        return Err(TensorError::ShapeMismatch {
            expected: curr_input.shape(),
            got: prev_input.shape(),
        }
        .into());
    }
    let shape = curr_input.shape();
    let (height, width) = (shape.height, shape.width);
    let coarse_h = (s_flow * height as f64).round() as usize;
    let coarse_w = (s_flow * width as f64).round() as usize;
    if coarse_h < 3 || coarse_w < 3 {
        return Err(OfaError::DegenerateFlowExtent { height: coarse_h, width: coarse_w });
    }

    let curr = curr_input.mean_over_batch_frames().bilinear_resize(coarse_h, coarse_w)?;
    let prev = prev_input.mean_over_batch_frames().bilinear_resize(coarse_h, coarse_w)?;
    let coarse = solve_lk_dense(&curr, &prev, lk);

    // Upsample as a 2-channel grid; magnitudes convert from coarse to
    // latent pixels by 1 / s_flow.
    let coarse_grid = ChannelGrid::from_vec(coarse_h, coarse_w, 2, coarse)?;
    let fine = coarse_grid.bilinear_resize(height, width)?;
    let limit = height.max(width) as f64;
    let inv_scale = 1.0 / s_flow;
    let values: Vec<f64> =
        fine.values().iter().map(|v| (v * inv_scale).clamp(-limit, limit)).collect();
    Ok(DisplacementField { height, width, values, scale_used: s_flow })
}

/// Iterative per-pixel LK with a fixed structure tensor from the current
/// frame's gradients. Returns interleaved `(dy, dx)` in coarse pixels.
fn solve_lk_dense(curr: &ChannelGrid, prev: &ChannelGrid, lk: &LkParams) -> Vec<f64> {
    let (h, w, ch) = (curr.height(), curr.width(), curr.channels());
    let n = h * w;

    // Per-channel central differences with replicated edges.
    let mut gx = vec![0.0; n * ch];
    let mut gy = vec![0.0; n * ch];
    par::for_rows(&mut gx, w * ch, |i, row| {
        for j in 0..w {
            let jl = j.saturating_sub(1);
            let jr = (j + 1).min(w - 1);
            for d in 0..ch {
                row[j * ch + d] = (curr.get(i, jr, d) - curr.get(i, jl, d)) / 2.0;
            }
        }
    });
    par::for_rows(&mut gy, w * ch, |i, row| {
        let iu = i.saturating_sub(1);
        let id = (i + 1).min(h - 1);
        for j in 0..w {
            for d in 0..ch {
                row[j * ch + d] = (curr.get(id, j, d) - curr.get(iu, j, d)) / 2.0;
            }
        }
    });

    // Channel-summed structure tensor, then window sums (fixed across
    // iterations).
    let mut pxx = vec![0.0; n];
    let mut pxy = vec![0.0; n];
    let mut pyy = vec![0.0; n];
    for i in 0..n {
        let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
        for d in 0..ch {
            let x = gx[i * ch + d];
            let y = gy[i * ch + d];
            xx += x * x;
            xy += x * y;
            yy += y * y;
        }
        pxx[i] = xx;
        pxy[i] = xy;
        pyy[i] = yy;
    }
    let r = lk.window_radius;
    let wxx = window_sum(&pxx, h, w, r);
    let wxy = window_sum(&pxy, h, w, r);
    let wyy = window_sum(&pyy, h, w, r);

    let lambda = lk.regularization;
    let mut flow = vec![0.0; n * 2];
    for _ in 0..lk.num_iterations {
        // Warp the previous frame by the current field and accumulate the
        // gradient-weighted error per pixel.
        let coords: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                (y as f64 + flow[i * 2], x as f64 + flow[i * 2 + 1])
            })
            .collect();
        let warped = prev.bilinear_sample(&coords).expect("coords cover the grid");
        let mut ex = vec![0.0; n];
        let mut ey = vec![0.0; n];
        par::for_rows(&mut ex, w, |i, row| {
            for (j, out) in row.iter_mut().enumerate() {
                let p = (i * w + j) * ch;
                let mut acc = 0.0;
                for d in 0..ch {
                    acc += gx[p + d] * (curr.get(i, j, d) - warped.get(i, j, d));
                }
                *out = acc;
            }
        });
        par::for_rows(&mut ey, w, |i, row| {
            for (j, out) in row.iter_mut().enumerate() {
                let p = (i * w + j) * ch;
                let mut acc = 0.0;
                for d in 0..ch {
                    acc += gy[p + d] * (curr.get(i, j, d) - warped.get(i, j, d));
                }
                *out = acc;
            }
        });
        let bx = window_sum(&ex, h, w, r);
        let by = window_sum(&ey, h, w, r);

        par::for_rows(&mut flow, w * 2, |i, row| {
            for j in 0..w {
                let p = i * w + j;
                let a11 = wxx[p] + lambda;
                let a22 = wyy[p] + lambda;
                let a12 = wxy[p];
                // Positive-definite by Cauchy-Schwarz plus the ridge term.
                let det = a11 * a22 - a12 * a12;
                let dux = (a22 * bx[p] - a12 * by[p]) / det;
                let duy = (a11 * by[p] - a12 * bx[p]) / det;
                row[j * 2] += duy;
                row[j * 2 + 1] += dux;
            }
        });
    }
    flow
}

/// Sum over a `(2r+1)^2` window with indices clamped to the border.
fn window_sum(src: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    par::for_rows(&mut out, w, |i, row| {
        let i0 = i.saturating_sub(r);
        let i1 = (i + r).min(h - 1);
        for (j, out) in row.iter_mut().enumerate() {
            let j0 = j.saturating_sub(r);
            let j1 = (j + r).min(w - 1);
            let mut acc = 0.0;
            for ii in i0..=i1 {
                for jj in j0..=j1 {
                    acc += src[ii * w + jj];
                }
            }
            *out = acc;
        }
    });
    out
}

/// Resample features along the flow: output at `(h, w)` reads the input at
/// `(h + dy, w + dx)`, bilinear with border clamping, independently for
/// every batch, frame, and channel.
pub fn warp_features(
    features: &LatentTensor,
    flow: &DisplacementField,
) -> Result<LatentTensor, OfaError> {
    let shape = features.shape();
    if flow.height != shape.height || flow.width != shape.width {
        return Err(OfaError::FlowShapeMismatch {
            flow_h: flow.height,
            flow_w: flow.width,
            feat_h: shape.height,
            feat_w: shape.width,
        });
    }
    let (hh, ww, ch) = (shape.height, shape.width, shape.channels);
    let planes = shape.batch * shape.frames;
    let plane_len = hh * ww * ch;
    let src = features.data();
    let mut out = vec![0.0; src.len()];
    // One output row per (plane, h); sampling weights are shared across
    // channels and recomputed per plane, which keeps rows independent.
    par::for_rows(&mut out, ww * ch, |row_idx, row| {
        let plane = row_idx / hh;
        let hy = row_idx % hh;
        debug_assert!(plane < planes);
        let base = plane * plane_len;
        for wx in 0..ww {
            let (dy, dx) = flow.get(hy, wx);
            let y = (hy as f64 + dy).clamp(0.0, (hh - 1) as f64);
            let x = (wx as f64 + dx).clamp(0.0, (ww - 1) as f64);
            let y0 = y.floor();
            let x0 = x.floor();
            let fy = y - y0;
            let fx = x - x0;
            let iy = y0 as usize;
            let ix = x0 as usize;
            let out_px = &mut row[wx * ch..(wx + 1) * ch];
            if fy == 0.0 && fx == 0.0 {
                let s = base + (iy * ww + ix) * ch;
                out_px.copy_from_slice(&src[s..s + ch]);
                continue;
            }
            let iy1 = (iy + 1).min(hh - 1);
            let ix1 = (ix + 1).min(ww - 1);
            let w00 = (1.0 - fy) * (1.0 - fx);
            let w01 = (1.0 - fy) * fx;
            let w10 = fy * (1.0 - fx);
            let w11 = fy * fx;
            let p00 = base + (iy * ww + ix) * ch;
            let p01 = base + (iy * ww + ix1) * ch;
            let p10 = base + (iy1 * ww + ix) * ch;
            let p11 = base + (iy1 * ww + ix1) * ch;
            for d in 0..ch {
                out_px[d] = w00 * src[p00 + d]
                    + w01 * src[p01 + d]
                    + w10 * src[p10 + d]
                    + w11 * src[p11 + d];
            }
        }
    });
    Ok(LatentTensor::from_vec(shape, out)?)
}

/// Residual of the newer slot after re-aligning its deep features:
/// `warp(zn) - z0`. With a zero flow this reproduces the stored residual
/// exactly.
pub fn corrected_residual(
    slot: &CacheSlot,
    flow: &DisplacementField,
) -> Result<LatentTensor, OfaError> {
    Ok(warp_features(slot.zn(), flow)?.subtract(slot.z0())?)
}
