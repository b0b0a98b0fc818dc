//! Two-slot cache of the most recent fully computed steps.
//!
//! Each slot keeps the step's input, probe features, deep output, and the
//! residual `deep - input` computed once at insertion. Recording a new full
//! step rotates newer to older and drops the previous older slot; hits
//! never touch the cache. The older slot's input doubles as the anchor for
//! the velocity signal.

use thiserror::Error;

use crate::tensor::{LatentTensor, TensorError};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("full steps must arrive in increasing order: last recorded {last}, got {got}")]
    NonMonotoneStep { last: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One fully computed step.
#[derive(Debug, Clone)]
pub struct CacheSlot {
    step: usize,
    z0: LatentTensor,
    zk: LatentTensor,
    zn: LatentTensor,
    residual: LatentTensor,
}

impl CacheSlot {
    /// Build a slot, storing `residual = zn - z0` alongside the taps.
    pub fn new(
        step: usize,
        z0: LatentTensor,
        zk: LatentTensor,
        zn: LatentTensor,
    ) -> Result<Self, CacheError> {
        let residual = zn.subtract(&z0)?;
        Ok(CacheSlot { step, z0, zk, zn, residual })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn z0(&self) -> &LatentTensor {
        &self.z0
    }

    pub fn zk(&self) -> &LatentTensor {
        &self.zk
    }

    pub fn zn(&self) -> &LatentTensor {
        &self.zn
    }

    pub fn residual(&self) -> &LatentTensor {
        &self.residual
    }
}

/// The two most recent full steps, newest first.
#[derive(Debug, Clone, Default)]
pub struct ResidualCache {
    newer: Option<CacheSlot>,
    older: Option<CacheSlot>,
}

impl ResidualCache {
    pub fn new() -> Self {
        ResidualCache::default()
    }

    /// Insert a full step, rotating the previous newer slot into the older
    /// position. Steps must be recorded in strictly increasing order.
    pub fn record_full_step(&mut self, slot: CacheSlot) -> Result<(), CacheError> {
        if let Some(newer) = &self.newer {
            if slot.step <= newer.step {
                return Err(CacheError::NonMonotoneStep { last: newer.step, got: slot.step });
            }
        }
        self.older = self.newer.take();
        self.newer = Some(slot);
        Ok(())
    }

    /// True once two full steps have been recorded.
    pub fn cache_ready(&self) -> bool {
        self.newer.is_some() && self.older.is_some()
    }

    pub fn newer(&self) -> Option<&CacheSlot> {
        self.newer.as_ref()
    }

    pub fn older(&self) -> Option<&CacheSlot> {
        self.older.as_ref()
    }

    /// Input of the older slot, the reference point for the velocity
    /// signal. Absent until the cache is ready.
    pub fn velocity_anchor(&self) -> Option<&LatentTensor> {
        self.older.as_ref().map(|s| s.z0())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorShape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape() -> TensorShape {
        TensorShape::new(1, 1, 2, 2, 3).unwrap()
    }

    fn tensor(seed: u64) -> LatentTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape().element_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        LatentTensor::from_vec(shape(), data).unwrap()
    }

    fn slot(step: usize) -> CacheSlot {
        let s = step as u64;
        CacheSlot::new(step, tensor(s * 3), tensor(s * 3 + 1), tensor(s * 3 + 2)).unwrap()
    }

    #[test]
    fn residual_identity_holds_bitwise() {
        let z0 = tensor(1);
        let zn = tensor(2);
        let s = CacheSlot::new(0, z0.clone(), tensor(3), zn.clone()).unwrap();
        let recomputed = zn.subtract(&z0).unwrap();
        assert_eq!(s.residual().data(), recomputed.data());
    }

    #[test]
    fn readiness_needs_exactly_two_full_steps() {
        let mut c = ResidualCache::new();
        assert!(!c.cache_ready());
        assert!(c.velocity_anchor().is_none());
        c.record_full_step(slot(0)).unwrap();
        assert!(!c.cache_ready());
        c.record_full_step(slot(1)).unwrap();
        assert!(c.cache_ready());
    }

    #[test]
    fn rotation_keeps_the_two_most_recent() {
        let mut c = ResidualCache::new();
        for step in [0, 1, 4, 9] {
            c.record_full_step(slot(step)).unwrap();
        }
        assert_eq!(c.newer().unwrap().step(), 9);
        assert_eq!(c.older().unwrap().step(), 4);
    }

    #[test]
    fn non_monotone_insert_is_rejected() {
        let mut c = ResidualCache::new();
        c.record_full_step(slot(5)).unwrap();
        let err = c.record_full_step(slot(5)).unwrap_err();
        assert!(matches!(err, CacheError::NonMonotoneStep { last: 5, got: 5 }));
        assert!(matches!(
            c.record_full_step(slot(2)).unwrap_err(),
            CacheError::NonMonotoneStep { last: 5, got: 2 }
        ));
        // The failed insert left the cache untouched.
        assert_eq!(c.newer().unwrap().step(), 5);
        assert!(c.older().is_none());
    }

    #[test]
    fn velocity_anchor_is_older_slot_input() {
        let mut c = ResidualCache::new();
        let a = slot(0);
        let a_z0 = a.z0().clone();
        c.record_full_step(a).unwrap();
        c.record_full_step(slot(1)).unwrap();
        assert_eq!(c.velocity_anchor().unwrap().data(), a_z0.data());
    }
}
