//! Drift measurements taken from the probe features each step.
//!
//! Three scalars drive the skip decision: `raw_drift`, the relative L1
//! change of the probe features against the previous step; `velocity`, the
//! relative L1 change of the raw input against the cache's anchor input,
//! which stands in for scene motion; and `swd_drift`, a per-location L1
//! change weighted up where the channel-variance saliency says the latent
//! has structure. Saliency is recomputed from the current probe every step;
//! there is no temporal smoothing anywhere in this module.

use crate::tensor::{LatentTensor, SpatialMap, TensorError};

/// Normalised saliency field derived from one probe tensor.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    map: SpatialMap,
    source_step: usize,
}

impl SaliencyMap {
    pub fn map(&self) -> &SpatialMap {
        &self.map
    }

    /// Step whose probe features produced this map.
    pub fn source_step(&self) -> usize {
        self.source_step
    }
}

/// One step's worth of drift signals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftReading {
    pub step: usize,
    /// Relative L1 change of the probe features, `|zk_t - zk_prev|_1 /
    /// (|zk_prev|_1 + eps)`. Zero on the first step of a run.
    pub raw_drift: f64,
    /// Mean per-location L1 change weighted by `1 + beta_s * saliency`,
    /// in latent-value units.
    pub swd_drift: f64,
    /// Relative L1 input change against the velocity anchor; `None` until
    /// the cache can supply an anchor.
    pub velocity: Option<f64>,
}

/// Relative L1 drift of the current probe features against the previous
/// step's probe features.
pub fn probe_drift(
    curr: &LatentTensor,
    prev: &LatentTensor,
    eps: f64,
) -> Result<f64, TensorError> {
    Ok(curr.l1_distance(prev)? / (prev.l1_norm() + eps))
}

/// Relative L1 change of the raw input against the anchor input (the
/// second-most-recent fully computed step). Serves as the motion proxy.
pub fn motion_velocity(
    curr_input: &LatentTensor,
    anchor_input: &LatentTensor,
    eps: f64,
) -> Result<f64, TensorError> {
    Ok(curr_input.l1_distance(anchor_input)? / (anchor_input.l1_norm() + eps))
}

/// Channel variance of the batch/frame-averaged probe, min-max normalised
/// to `[0, 1]`. A structurally flat probe yields an all-zero map.
pub fn saliency_map(zk: &LatentTensor, step: usize) -> SaliencyMap {
    SaliencyMap { map: zk.channel_variance_map().minmax_normalized(), source_step: step }
}

/// Saliency-weighted drift: mean over locations of the per-location L1
/// change scaled by `1 + beta_s * saliency`.
pub fn swd_drift(
    curr: &LatentTensor,
    prev: &LatentTensor,
    saliency: &SaliencyMap,
    beta_s: f64,
) -> Result<f64, TensorError> {
    let per_loc = curr.per_location_abs_diff(prev)?;
    let sal = saliency.map();
    debug_assert_eq!(per_loc.values().len(), sal.values().len());
    let mut acc = 0.0;
    for (d, s) in per_loc.values().iter().zip(sal.values()) {
        acc += d * (1.0 + beta_s * s);
    }
    Ok(acc / per_loc.values().len() as f64)
}

impl DriftReading {
    /// Bundle the signals for one step. `prev_zk` is `None` on the first
    /// step, `anchor` is `None` until the cache holds an older slot; both
    /// default their signal to zero / absent.
    #[allow(clippy::too_many_arguments)]
    pub fn measure(
        step: usize,
        zk: &LatentTensor,
        prev_zk: Option<&LatentTensor>,
        saliency: &SaliencyMap,
        input: &LatentTensor,
        anchor: Option<&LatentTensor>,
        beta_s: f64,
        eps: f64,
    ) -> Result<DriftReading, TensorError> {
        let (raw, swd) = match prev_zk {
            Some(prev) => (probe_drift(zk, prev, eps)?, swd_drift(zk, prev, saliency, beta_s)?),
            None => (0.0, 0.0),
        };
        let velocity = match anchor {
            Some(a) => Some(motion_velocity(input, a, eps)?),
            None => None,
        };
        Ok(DriftReading { step, raw_drift: raw, swd_drift: swd, velocity })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorShape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-8;

    fn shape() -> TensorShape {
        TensorShape::new(1, 2, 4, 4, 3).unwrap()
    }

    fn random_tensor(shape: TensorShape, seed: u64) -> LatentTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.element_count()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        LatentTensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn probe_drift_zero_for_identical_inputs() {
        let x = random_tensor(shape(), 1);
        assert_eq!(probe_drift(&x, &x, EPS).unwrap(), 0.0);
    }

    #[test]
    fn probe_drift_uniform_offset_on_unit_input() {
        let ones = LatentTensor::from_fn(shape(), |_, _, _, _, _| 1.0);
        let shifted = LatentTensor::from_fn(shape(), |_, _, _, _, _| 1.1);
        let d = probe_drift(&shifted, &ones, EPS).unwrap();
        assert!((d - 0.1).abs() <= 1e-9);
    }

    #[test]
    fn probe_drift_matches_scalar_loop() {
        let x = random_tensor(shape(), 2);
        let y = random_tensor(shape(), 3);
        let num: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum();
        let den: f64 = y.data().iter().map(|v| v.abs()).sum::<f64>() + EPS;
        let d = probe_drift(&x, &y, EPS).unwrap();
        assert!((d - num / den).abs() <= 1e-12 * (num / den));
    }

    #[test]
    fn probe_drift_scale_invariant() {
        let x = random_tensor(shape(), 4);
        let y = random_tensor(shape(), 5);
        let sx = LatentTensor::from_vec(shape(), x.data().iter().map(|v| v * 2.0).collect()).unwrap();
        let sy = LatentTensor::from_vec(shape(), y.data().iter().map(|v| v * 2.0).collect()).unwrap();
        let a = probe_drift(&x, &y, EPS).unwrap();
        let b = probe_drift(&sx, &sy, EPS).unwrap();
        assert!((a - b).abs() <= 1e-9 * a);
    }

    #[test]
    fn velocity_uses_anchor_denominator() {
        let curr = LatentTensor::from_fn(shape(), |_, _, _, _, _| 3.0);
        let anchor = LatentTensor::from_fn(shape(), |_, _, _, _, _| 2.0);
        let n = shape().element_count() as f64;
        let v = motion_velocity(&curr, &anchor, EPS).unwrap();
        assert!((v - n / (2.0 * n + EPS)).abs() <= 1e-12);
    }

    #[test]
    fn saliency_flags_the_structured_location() {
        // One location carries channels {-1, +1, 0}; everywhere else is
        // channel-constant, so normalisation pins it to 1 and the rest to 0.
        let sh = TensorShape::new(1, 1, 3, 3, 3).unwrap();
        let zk = LatentTensor::from_fn(sh, |_, _, h, w, d| {
            if h == 1 && w == 2 {
                [-1.0, 1.0, 0.0][d]
            } else {
                0.5
            }
        });
        let sal = saliency_map(&zk, 7);
        assert_eq!(sal.source_step(), 7);
        for h in 0..3 {
            for w in 0..3 {
                let expect = if h == 1 && w == 2 { 1.0 } else { 0.0 };
                assert!((sal.map().get(h, w) - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn saliency_constant_probe_normalises_to_zeros() {
        let zk = LatentTensor::from_fn(shape(), |_, _, _, _, _| 0.25);
        let sal = saliency_map(&zk, 0);
        assert!(sal.map().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn swd_with_zero_beta_is_mean_location_change() {
        let x = random_tensor(shape(), 6);
        let y = random_tensor(shape(), 7);
        let sal = saliency_map(&x, 0);
        let swd = swd_drift(&x, &y, &sal, 0.0).unwrap();
        let mean = x.l1_distance(&y).unwrap() / shape().locations() as f64;
        assert!((swd - mean).abs() <= 1e-12 * mean);
    }

    #[test]
    fn swd_weights_concentrated_change_by_one_plus_beta() {
        // All change sits at the single max-saliency location, so the
        // weighted drift is exactly (1 + beta) times the unweighted one.
        let sh = TensorShape::new(1, 1, 3, 3, 2).unwrap();
        let prev = LatentTensor::from_fn(sh, |_, _, h, w, d| {
            if h == 0 && w == 0 {
                [-1.0, 1.0][d]
            } else {
                0.2
            }
        });
        let mut data = prev.data().to_vec();
        let idx = sh.index(0, 0, 0, 0, 0);
        data[idx] += 0.5;
        let curr = LatentTensor::from_vec(sh, data).unwrap();
        let sal = saliency_map(&prev, 0);
        assert_eq!(sal.map().get(0, 0), 1.0);
        let beta = 0.12;
        let weighted = swd_drift(&curr, &prev, &sal, beta).unwrap();
        let unweighted = swd_drift(&curr, &prev, &sal, 0.0).unwrap();
        assert!((weighted / unweighted - (1.0 + beta)).abs() <= 1e-12);
    }

    #[test]
    fn measure_handles_missing_history() {
        let x = random_tensor(shape(), 8);
        let sal = saliency_map(&x, 0);
        let r = DriftReading::measure(0, &x, None, &sal, &x, None, 0.12, EPS).unwrap();
        assert_eq!(r.raw_drift, 0.0);
        assert_eq!(r.swd_drift, 0.0);
        assert_eq!(r.velocity, None);
    }
}
