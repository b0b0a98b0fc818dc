//! Dense latent tensors and the small set of kernels everything else is
//! built from: L1 reductions, per-location reductions, channel variance,
//! and corner-aligned bilinear resampling.
//!
//! Layout is row-major `(batch, frame, height, width, channel)` with the
//! channel axis innermost. All arithmetic is f64; traces narrow to f32 on
//! disk but never in memory.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: TensorShape, got: TensorShape },
    #[error("data length {got} does not match shape {shape} ({expected} elements)")]
    LengthMismatch { shape: TensorShape, expected: usize, got: usize },
    #[error("every axis must be nonzero: {0}")]
    EmptyAxis(TensorShape),
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("grid dimensions must be at least 1x1, got {height}x{width}")]
    DegenerateGrid { height: usize, width: usize },
}

/// Extent of a latent tensor: `(batch, frames, height, width, channels)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub batch: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl TensorShape {
    pub fn new(
        batch: usize,
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
    ) -> Result<Self, TensorError> {
        let shape = TensorShape { batch, frames, height, width, channels };
        if batch == 0 || frames == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(TensorError::EmptyAxis(shape));
        }
        Ok(shape)
    }

    pub fn element_count(&self) -> usize {
        self.batch * self.frames * self.height * self.width * self.channels
    }

    /// Number of spatial locations, `height * width`.
    pub fn locations(&self) -> usize {
        self.height * self.width
    }

    /// Values reduced per spatial location: `batch * frames * channels`.
    pub fn per_location(&self) -> usize {
        self.batch * self.frames * self.channels
    }

    #[inline]
    pub fn index(&self, b: usize, t: usize, h: usize, w: usize, d: usize) -> usize {
        ((((b * self.frames + t) * self.height + h) * self.width + w) * self.channels) + d
    }
}

impl std::fmt::Display for TensorShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}x{}",
            self.batch, self.frames, self.height, self.width, self.channels
        )
    }
}

/// Dense f64 latent block in `(b, frame, h, w, channel)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    shape: TensorShape,
    data: Vec<f64>,
}

impl LatentTensor {
    /// Wrap raw data, rejecting length mismatches and non-finite values.
    pub fn from_vec(shape: TensorShape, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != shape.element_count() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected: shape.element_count(),
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(LatentTensor { shape, data })
    }

    pub fn zeros(shape: TensorShape) -> Self {
        LatentTensor { shape, data: vec![0.0; shape.element_count()] }
    }

    pub fn from_fn<F>(shape: TensorShape, mut f: F) -> Self
    where
        F: FnMut(usize, usize, usize, usize, usize) -> f64,
    {
        let mut data = Vec::with_capacity(shape.element_count());
        for b in 0..shape.batch {
            for t in 0..shape.frames {
                for h in 0..shape.height {
                    for w in 0..shape.width {
                        for d in 0..shape.channels {
                            data.push(f(b, t, h, w, d));
                        }
                    }
                }
            }
        }
        LatentTensor { shape, data }
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, b: usize, t: usize, h: usize, w: usize, d: usize) -> f64 {
        self.data[self.shape.index(b, t, h, w, d)]
    }

    fn check_same_shape(&self, other: &LatentTensor) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch { expected: self.shape, got: other.shape });
        }
        Ok(())
    }

    /// Sum of absolute values over the whole tensor.
    pub fn l1_norm(&self) -> f64 {
        par::sum_map(&self.data, f64::abs)
    }

    /// Elementwise difference `self - other`.
    pub fn subtract(&self, other: &LatentTensor) -> Result<LatentTensor, TensorError> {
        self.check_same_shape(other)?;
        Ok(LatentTensor {
            shape: self.shape,
            data: par::zip_map(&self.data, &other.data, |x, y| x - y),
        })
    }

    /// Unweighted dot product over all elements.
    pub fn inner_product(&self, other: &LatentTensor) -> Result<f64, TensorError> {
        self.check_same_shape(other)?;
        Ok(par::sum_zip(&self.data, &other.data, |x, y| x * y))
    }

    /// L1 of the elementwise difference, without materialising it.
    pub fn l1_distance(&self, other: &LatentTensor) -> Result<f64, TensorError> {
        self.check_same_shape(other)?;
        Ok(par::sum_zip(&self.data, &other.data, |x, y| (x - y).abs()))
    }

    /// Per spatial location, the L1 over batch, frame, and channel axes.
    pub fn per_location_l1(&self) -> SpatialMap {
        self.per_location_reduce(|acc, v, _| acc + v.abs())
    }

    /// Per spatial location, the L1 of `self - other` over batch, frame,
    /// and channel axes.
    pub fn per_location_abs_diff(&self, other: &LatentTensor) -> Result<SpatialMap, TensorError> {
        self.check_same_shape(other)?;
        let shape = self.shape;
        let loc_stride = shape.locations() * shape.channels;
        let reps = shape.batch * shape.frames;
        let mut values = vec![0.0; shape.locations()];
        let a = &self.data;
        let b = &other.data;
        par::for_rows(&mut values, shape.width, |h, row| {
            for (w, out) in row.iter_mut().enumerate() {
                let base = (h * shape.width + w) * shape.channels;
                let mut acc = 0.0;
                for k in 0..reps {
                    let start = base + k * loc_stride;
                    for d in 0..shape.channels {
                        acc += (a[start + d] - b[start + d]).abs();
                    }
                }
                *out = acc;
            }
        });
        Ok(SpatialMap { height: shape.height, width: shape.width, values })
    }

    fn per_location_reduce<F>(&self, f: F) -> SpatialMap
    where
        F: Fn(f64, f64, usize) -> f64 + Sync,
    {
        let shape = self.shape;
        let loc_stride = shape.locations() * shape.channels;
        let reps = shape.batch * shape.frames;
        let mut values = vec![0.0; shape.locations()];
        let data = &self.data;
        par::for_rows(&mut values, shape.width, |h, row| {
            for (w, out) in row.iter_mut().enumerate() {
                let base = (h * shape.width + w) * shape.channels;
                let mut acc = 0.0;
                for k in 0..reps {
                    let start = base + k * loc_stride;
                    for d in 0..shape.channels {
                        acc = f(acc, data[start + d], d);
                    }
                }
                *out = acc;
            }
        });
        SpatialMap { height: shape.height, width: shape.width, values }
    }

    /// Mean over batch and frame axes, keeping `(h, w, channel)`.
    pub fn mean_over_batch_frames(&self) -> ChannelGrid {
        let shape = self.shape;
        let loc_stride = shape.locations() * shape.channels;
        let reps = shape.batch * shape.frames;
        let inv = 1.0 / reps as f64;
        let mut values = vec![0.0; shape.locations() * shape.channels];
        let data = &self.data;
        let row_len = shape.width * shape.channels;
        par::for_rows(&mut values, row_len, |h, row| {
            for w in 0..shape.width {
                let base = (h * shape.width + w) * shape.channels;
                let out = &mut row[w * shape.channels..(w + 1) * shape.channels];
                for k in 0..reps {
                    let start = base + k * loc_stride;
                    for d in 0..shape.channels {
                        out[d] += data[start + d];
                    }
                }
                for v in out.iter_mut() {
                    *v *= inv;
                }
            }
        });
        ChannelGrid { height: shape.height, width: shape.width, channels: shape.channels, values }
    }

    /// Population variance across channels of the batch/frame-averaged
    /// features, one value per spatial location.
    pub fn channel_variance_map(&self) -> SpatialMap {
        self.mean_over_batch_frames().channel_variance()
    }
}

/// Relative L1 distance `|x - reference|_1 / (|reference|_1 + eps)`.
pub fn relative_l1(x: &LatentTensor, reference: &LatentTensor, eps: f64) -> Result<f64, TensorError> {
    Ok(x.l1_distance(reference)? / (reference.l1_norm() + eps))
}

/// Scalar field over the spatial grid, row-major `(h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SpatialMap {
    pub fn from_vec(height: usize, width: usize, values: Vec<f64>) -> Result<Self, TensorError> {
        if height == 0 || width == 0 {
            return Err(TensorError::DegenerateGrid { height, width });
        }
        if values.len() != height * width {
            let shape = TensorShape { batch: 1, frames: 1, height, width, channels: 1 };
            return Err(TensorError::LengthMismatch {
                shape,
                expected: height * width,
                got: values.len(),
            });
        }
        Ok(SpatialMap { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> f64 {
        self.values[h * self.width + w]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Min-max rescale into `[0, 1]`. A constant map (degenerate range)
    /// normalises to all zeros rather than dividing by zero.
    pub fn minmax_normalized(&self) -> SpatialMap {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let range = hi - lo;
        let values = if range > 0.0 {
            self.values.iter().map(|&v| (v - lo) / range).collect()
        } else {
            vec![0.0; self.values.len()]
        };
        SpatialMap { height: self.height, width: self.width, values }
    }
}

/// Dense `(h, w, channel)` grid, the working form for resampling and flow.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl ChannelGrid {
    pub fn from_vec(
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self, TensorError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(TensorError::DegenerateGrid { height, width });
        }
        if values.len() != height * width * channels {
            let shape = TensorShape { batch: 1, frames: 1, height, width, channels };
            return Err(TensorError::LengthMismatch {
                shape,
                expected: height * width * channels,
                got: values.len(),
            });
        }
        Ok(ChannelGrid { height, width, channels, values })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        ChannelGrid { height, width, channels, values: vec![0.0; height * width * channels] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, d: usize) -> f64 {
        self.values[(h * self.width + w) * self.channels + d]
    }

    #[inline]
    fn pixel(&self, h: usize, w: usize) -> &[f64] {
        let start = (h * self.width + w) * self.channels;
        &self.values[start..start + self.channels]
    }

    /// Population variance across channels per location.
    pub fn channel_variance(&self) -> SpatialMap {
        let mut values = vec![0.0; self.height * self.width];
        let channels = self.channels;
        let grid = &self.values;
        par::for_rows(&mut values, self.width, |h, row| {
            for (w, out) in row.iter_mut().enumerate() {
                let start = (h * self.width + w) * channels;
                let px = &grid[start..start + channels];
                let mean = px.iter().sum::<f64>() / channels as f64;
                let var =
                    px.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / channels as f64;
                *out = var;
            }
        });
        SpatialMap { height: self.height, width: self.width, values }
    }

    /// Bilinear sample at a continuous `(y, x)`, clamped to the border.
    /// Integer coordinates return the stored pixel values untouched.
    pub fn sample_into(&self, y: f64, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let y0 = yc.floor();
        let x0 = xc.floor();
        let fy = yc - y0;
        let fx = xc - x0;
        let iy = y0 as usize;
        let ix = x0 as usize;
        if fy == 0.0 && fx == 0.0 {
            out.copy_from_slice(self.pixel(iy, ix));
            return;
        }
        let iy1 = (iy + 1).min(self.height - 1);
        let ix1 = (ix + 1).min(self.width - 1);
        let w00 = (1.0 - fy) * (1.0 - fx);
        let w01 = (1.0 - fy) * fx;
        let w10 = fy * (1.0 - fx);
        let w11 = fy * fx;
        let p00 = self.pixel(iy, ix);
        let p01 = self.pixel(iy, ix1);
        let p10 = self.pixel(iy1, ix);
        let p11 = self.pixel(iy1, ix1);
        for d in 0..self.channels {
            out[d] = w00 * p00[d] + w01 * p01[d] + w10 * p10[d] + w11 * p11[d];
        }
    }

    /// Corner-aligned bilinear resize to `(out_h, out_w)`. Resizing to the
    /// same extent reproduces the input bit for bit; constants stay
    /// constant at any scale.
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<ChannelGrid, TensorError> {
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::DegenerateGrid { height: out_h, width: out_w });
        }
        let scale_y = if out_h > 1 { (self.height - 1) as f64 / (out_h - 1) as f64 } else { 0.0 };
        let scale_x = if out_w > 1 { (self.width - 1) as f64 / (out_w - 1) as f64 } else { 0.0 };
        let channels = self.channels;
        let mut values = vec![0.0; out_h * out_w * channels];
        let row_len = out_w * channels;
        par::for_rows(&mut values, row_len, |i, row| {
            let y = i as f64 * scale_y;
            for j in 0..out_w {
                let x = j as f64 * scale_x;
                self.sample_into(y, x, &mut row[j * channels..(j + 1) * channels]);
            }
        });
        Ok(ChannelGrid { height: out_h, width: out_w, channels, values })
    }

    /// Sample at one continuous coordinate per output location.
    /// `coords` is row-major `(y, x)` over this grid's extent.
    pub fn bilinear_sample(&self, coords: &[(f64, f64)]) -> Result<ChannelGrid, TensorError> {
        if coords.len() != self.height * self.width {
            let shape =
                TensorShape { batch: 1, frames: 1, height: self.height, width: self.width, channels: 2 };
            return Err(TensorError::LengthMismatch {
                shape,
                expected: self.height * self.width,
                got: coords.len(),
            });
        }
        let channels = self.channels;
        let mut values = vec![0.0; self.values.len()];
        let row_len = self.width * channels;
        par::for_rows(&mut values, row_len, |h, row| {
            for w in 0..self.width {
                let (y, x) = coords[h * self.width + w];
                self.sample_into(y, x, &mut row[w * channels..(w + 1) * channels]);
            }
        });
        Ok(ChannelGrid { height: self.height, width: self.width, channels, values })
    }
}

/// Sequential reference kernels. The public ops route through rayon when
/// the `parallel` feature is on; these stay available for the benches that
/// compare the two paths.
#[doc(hidden)]
pub mod serial {
    use super::{LatentTensor, SpatialMap};

    pub fn l1_norm(x: &LatentTensor) -> f64 {
        x.data().iter().map(|v| v.abs()).sum()
    }

    pub fn inner_product(x: &LatentTensor, y: &LatentTensor) -> f64 {
        x.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
    }

    pub fn l1_distance(x: &LatentTensor, y: &LatentTensor) -> f64 {
        x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn per_location_l1(x: &LatentTensor) -> SpatialMap {
        let shape = x.shape();
        let mut values = vec![0.0; shape.locations()];
        for b in 0..shape.batch {
            for t in 0..shape.frames {
                for h in 0..shape.height {
                    for w in 0..shape.width {
                        for d in 0..shape.channels {
                            values[h * shape.width + w] += x.get(b, t, h, w, d).abs();
                        }
                    }
                }
            }
        }
        SpatialMap::from_vec(shape.height, shape.width, values).unwrap()
    }

    pub fn channel_variance_map(x: &LatentTensor) -> SpatialMap {
        let shape = x.shape();
        let reps = (shape.batch * shape.frames) as f64;
        let mut values = vec![0.0; shape.locations()];
        for h in 0..shape.height {
            for w in 0..shape.width {
                let mut avg = vec![0.0; shape.channels];
                for b in 0..shape.batch {
                    for t in 0..shape.frames {
                        for (d, slot) in avg.iter_mut().enumerate() {
                            *slot += x.get(b, t, h, w, d);
                        }
                    }
                }
                for v in avg.iter_mut() {
                    *v /= reps;
                }
                let mean = avg.iter().sum::<f64>() / shape.channels as f64;
                values[h * shape.width + w] =
                    avg.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>()
                        / shape.channels as f64;
            }
        }
        SpatialMap::from_vec(shape.height, shape.width, values).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_shape() -> TensorShape {
        TensorShape::new(2, 3, 4, 5, 6).unwrap()
    }

    fn random_tensor(shape: TensorShape, seed: u64) -> LatentTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.element_count()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        LatentTensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn l1_norm_matches_scalar_loop() {
        let x = random_tensor(small_shape(), 11);
        let expect: f64 = x.data().iter().map(|v| v.abs()).sum();
        assert!((x.l1_norm() - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn l1_norm_zero_only_for_zero_tensor() {
        let z = LatentTensor::zeros(small_shape());
        assert_eq!(z.l1_norm(), 0.0);
        let mut data = vec![0.0; small_shape().element_count()];
        data[17] = -3.5;
        let x = LatentTensor::from_vec(small_shape(), data).unwrap();
        assert_eq!(x.l1_norm(), 3.5);
    }

    #[test]
    fn subtract_then_inner_product_oracle() {
        let x = random_tensor(small_shape(), 1);
        let y = random_tensor(small_shape(), 2);
        let d = x.subtract(&y).unwrap();
        for i in 0..d.data().len() {
            assert_eq!(d.data()[i], x.data()[i] - y.data()[i]);
        }
        let ip = x.inner_product(&y).unwrap();
        let expect: f64 = x.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        assert!((ip - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let x = random_tensor(small_shape(), 3);
        let y = random_tensor(TensorShape::new(2, 3, 4, 5, 7).unwrap(), 3);
        assert!(matches!(x.subtract(&y), Err(TensorError::ShapeMismatch { .. })));
        assert!(matches!(x.inner_product(&y), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let shape = small_shape();
        let mut data = vec![0.0; shape.element_count()];
        data[5] = f64::NAN;
        assert!(matches!(
            LatentTensor::from_vec(shape, data),
            Err(TensorError::NonFinite { index: 5 })
        ));
    }

    #[test]
    fn per_location_l1_sums_to_l1_norm() {
        let x = random_tensor(small_shape(), 4);
        let map = x.per_location_l1();
        let total: f64 = map.values().iter().sum();
        let l1 = x.l1_norm();
        assert!((total - l1).abs() <= 1e-12 * l1);
        // Spot check one location against a scalar loop.
        let shape = x.shape();
        let mut acc = 0.0;
        for b in 0..shape.batch {
            for t in 0..shape.frames {
                for d in 0..shape.channels {
                    acc += x.get(b, t, 2, 3, d).abs();
                }
            }
        }
        assert!((map.get(2, 3) - acc).abs() <= 1e-12 * acc.max(1.0));
    }

    #[test]
    fn per_location_abs_diff_matches_subtract_path() {
        let x = random_tensor(small_shape(), 5);
        let y = random_tensor(small_shape(), 6);
        let fused = x.per_location_abs_diff(&y).unwrap();
        let explicit = x.subtract(&y).unwrap().per_location_l1();
        for i in 0..fused.values().len() {
            let a = fused.values()[i];
            let b = explicit.values()[i];
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn channel_variance_two_channel_profile() {
        // Channels (0, 2) at every location: population variance 1.
        let shape = TensorShape::new(1, 1, 2, 2, 2).unwrap();
        let x = LatentTensor::from_fn(shape, |_, _, _, _, d| if d == 0 { 0.0 } else { 2.0 });
        let map = x.channel_variance_map();
        for &v in map.values() {
            assert!((v - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn channel_variance_matches_two_pass_oracle() {
        let x = random_tensor(small_shape(), 7);
        let got = x.channel_variance_map();
        let expect = serial::channel_variance_map(&x);
        for i in 0..got.values().len() {
            let e = expect.values()[i];
            assert!((got.values()[i] - e).abs() <= 1e-10 * e.abs().max(1.0));
        }
    }

    #[test]
    fn channel_variance_invariant_under_constant_shift() {
        let x = random_tensor(small_shape(), 8);
        let shifted = LatentTensor::from_vec(
            x.shape(),
            x.data().iter().map(|v| v + 7.25).collect(),
        )
        .unwrap();
        let a = x.channel_variance_map();
        let b = shifted.channel_variance_map();
        for i in 0..a.values().len() {
            assert!((a.values()[i] - b.values()[i]).abs() <= 1e-9 * a.values()[i].abs().max(1.0));
        }
    }

    #[test]
    fn minmax_normalize_basics() {
        let m = SpatialMap::from_vec(1, 3, vec![1.0, 3.0, 5.0]).unwrap();
        let n = m.minmax_normalized();
        assert_eq!(n.values(), &[0.0, 0.5, 1.0]);
        // Idempotent once in [0, 1] with endpoints present.
        assert_eq!(n.minmax_normalized().values(), n.values());
        // Degenerate (constant) input maps to zeros.
        let c = SpatialMap::from_vec(2, 2, vec![4.0; 4]).unwrap();
        assert_eq!(c.minmax_normalized().values(), &[0.0; 4]);
    }

    #[test]
    fn bilinear_resize_2x2_to_3x3_center() {
        let g = ChannelGrid::from_vec(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let r = g.bilinear_resize(3, 3).unwrap();
        assert_eq!(r.get(1, 1, 0), 1.5);
        // Corners are aligned.
        assert_eq!(r.get(0, 0, 0), 0.0);
        assert_eq!(r.get(0, 2, 0), 1.0);
        assert_eq!(r.get(2, 0, 0), 2.0);
        assert_eq!(r.get(2, 2, 0), 3.0);
    }

    #[test]
    fn bilinear_resize_same_size_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vals: Vec<f64> = (0..7 * 5 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = ChannelGrid::from_vec(7, 5, 3, vals.clone()).unwrap();
        let r = g.bilinear_resize(7, 5).unwrap();
        assert_eq!(r.values(), vals.as_slice());
    }

    #[test]
    fn bilinear_resize_preserves_constants() {
        let g = ChannelGrid::from_vec(4, 4, 2, vec![0.75; 4 * 4 * 2]).unwrap();
        for (h, w) in [(9, 3), (2, 2), (1, 7), (16, 16)] {
            let r = g.bilinear_resize(h, w).unwrap();
            for &v in r.values() {
                assert!((v - 0.75).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn bilinear_sample_identity_grid_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let vals: Vec<f64> = (0..6 * 6 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = ChannelGrid::from_vec(6, 6, 4, vals.clone()).unwrap();
        let coords: Vec<(f64, f64)> = (0..6)
            .flat_map(|h| (0..6).map(move |w| (h as f64, w as f64)))
            .collect();
        let s = g.bilinear_sample(&coords).unwrap();
        assert_eq!(s.values(), vals.as_slice());
    }

    #[test]
    fn bilinear_sample_clamps_out_of_bounds() {
        let g = ChannelGrid::from_vec(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let coords = vec![(-5.0, -5.0), (-1.0, 10.0), (10.0, 0.0), (10.0, 10.0)];
        let s = g.bilinear_sample(&coords).unwrap();
        assert_eq!(s.values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn bilinear_sample_midpoint_average() {
        let g = ChannelGrid::from_vec(1, 2, 1, vec![2.0, 6.0]).unwrap();
        let s = g.bilinear_sample(&[(0.0, 0.5), (0.0, 0.5)]).unwrap();
        assert_eq!(s.values(), &[4.0, 4.0]);
    }

    #[test]
    fn serial_kernels_agree_with_dispatched() {
        // Large enough to cross the parallel chunk threshold.
        let shape = TensorShape::new(1, 2, 48, 48, 8).unwrap();
        let x = random_tensor(shape, 12);
        let y = random_tensor(shape, 13);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        assert!(rel(x.l1_norm(), serial::l1_norm(&x)) <= 1e-12);
        assert!(rel(x.inner_product(&y).unwrap(), serial::inner_product(&x, &y)) <= 1e-12);
        assert!(rel(x.l1_distance(&y).unwrap(), serial::l1_distance(&x, &y)) <= 1e-12);
        let a = x.per_location_l1();
        let b = serial::per_location_l1(&x);
        for i in 0..a.values().len() {
            assert!(rel(a.values()[i], b.values()[i]) <= 1e-12);
        }
    }
}
