//! Property tests for the contracts the rest of the stack leans on:
//! threshold monotonicity, scale-aware drift ratios, saliency weighting,
//! projection optimality, normalization range, and cache bookkeeping.

use proptest::prelude::*;
use worldcache::cache::{CacheSlot, ResidualCache};
use worldcache::ofa::osi_gamma;
use worldcache::policy::{self, AtsMode, PolicyConfig};
use worldcache::signals::{self, saliency_map};
use worldcache::tensor::{LatentTensor, SpatialMap, TensorShape};

const EPS: f64 = 1e-8;

fn small_shape() -> TensorShape {
    TensorShape::new(1, 1, 4, 4, 2).unwrap()
}

fn tensor_strategy(shape: TensorShape) -> impl Strategy<Value = LatentTensor> {
    prop::collection::vec(-5.0f64..5.0, shape.element_count())
        .prop_map(move |data| LatentTensor::from_vec(shape, data).unwrap())
}

fn ats_mode_strategy() -> impl Strategy<Value = AtsMode> {
    prop_oneof![Just(AtsMode::Off), Just(AtsMode::Linear), Just(AtsMode::Quadratic)]
}

fn policy_strategy() -> impl Strategy<Value = PolicyConfig> {
    (1e-3f64..0.5, 0.0f64..5.0, 0.0f64..8.0, 1usize..=100, ats_mode_strategy()).prop_map(
        |(tau0, alpha, beta_d, total_steps, ats_mode)| PolicyConfig {
            tau0,
            alpha,
            beta_d,
            total_steps,
            ats_mode,
            ..Default::default()
        },
    )
}

proptest! {
    #[test]
    fn threshold_never_rises_with_velocity(
        cfg in policy_strategy(),
        v_lo in 0.0f64..3.0,
        dv in 0.0f64..3.0,
        t_frac in 0.0f64..=1.0,
    ) {
        let t = (t_frac * cfg.total_steps as f64) as usize;
        let lo = policy::effective_threshold(&cfg, v_lo + dv, t);
        let hi = policy::effective_threshold(&cfg, v_lo, t);
        prop_assert!(lo <= hi, "threshold rose from {hi} to {lo} as velocity grew");
    }

    #[test]
    fn threshold_never_falls_along_the_schedule(
        cfg in policy_strategy(),
        v in 0.0f64..3.0,
        t_frac in 0.0f64..=1.0,
        dt_frac in 0.0f64..=1.0,
    ) {
        let t1 = (t_frac * cfg.total_steps as f64) as usize;
        let t2 = (t1 + (dt_frac * (cfg.total_steps - t1) as f64) as usize).min(cfg.total_steps);
        let early = policy::effective_threshold(&cfg, v, t1);
        let late = policy::effective_threshold(&cfg, v, t2);
        prop_assert!(early <= late, "threshold fell from {early} to {late} between steps {t1} and {t2}");
    }

    #[test]
    fn raising_tau0_never_turns_a_hit_into_a_miss(
        cfg in policy_strategy(),
        bump in 0.0f64..0.5,
        drift in 0.0f64..1.0,
        v in prop::option::of(0.0f64..3.0),
        t_frac in 0.0f64..=1.0,
        cache_ready in any::<bool>(),
    ) {
        let t = (t_frac * cfg.total_steps as f64) as usize;
        let raised = PolicyConfig { tau0: cfg.tau0 + bump, ..cfg };
        let before = policy::decide(&cfg, drift, v, t, cache_ready);
        let after = policy::decide(&raised, drift, v, t, cache_ready);
        prop_assert!(
            !before.kind.is_hit() || after.kind.is_hit(),
            "hit at tau0 {} became {:?} at tau0 {}", cfg.tau0, after.kind, raised.tau0
        );
    }

    #[test]
    fn drift_ratios_ignore_common_scale(
        x in tensor_strategy(small_shape()),
        y in tensor_strategy(small_shape()),
        c in 0.01f64..100.0,
    ) {
        prop_assume!(y.l1_norm() > 1e-6);
        let scale = |t: &LatentTensor| {
            LatentTensor::from_vec(t.shape(), t.data().iter().map(|v| v * c).collect()).unwrap()
        };
        let base = signals::probe_drift(&x, &y, 0.0).unwrap();
        let scaled = signals::probe_drift(&scale(&x), &scale(&y), 0.0).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1.0), "{base} vs {scaled}");
        let base_v = signals::motion_velocity(&x, &y, 0.0).unwrap();
        let scaled_v = signals::motion_velocity(&scale(&x), &scale(&y), 0.0).unwrap();
        prop_assert!((base_v - scaled_v).abs() <= 1e-12 * base_v.max(1.0), "{base_v} vs {scaled_v}");
    }

    #[test]
    fn saliency_weighting_is_monotone_in_beta(
        curr in tensor_strategy(small_shape()),
        prev in tensor_strategy(small_shape()),
        probe in tensor_strategy(small_shape()),
        beta_lo in 0.0f64..2.0,
        db in 0.0f64..2.0,
    ) {
        let sal = saliency_map(&probe, 0);
        let lo = signals::swd_drift(&curr, &prev, &sal, beta_lo).unwrap();
        let hi = signals::swd_drift(&curr, &prev, &sal, beta_lo + db).unwrap();
        prop_assert!(lo <= hi, "weighted drift fell from {lo} to {hi} as beta grew");

        // A flat probe yields the all-zero map, the weighting's floor.
        let flat = saliency_map(&LatentTensor::zeros(small_shape()), 0);
        let floor = signals::swd_drift(&curr, &prev, &flat, beta_lo).unwrap();
        prop_assert!(lo >= floor - 1e-15, "weighted drift {lo} under unweighted floor {floor}");
    }

    #[test]
    fn projection_gain_is_grid_optimal(
        dt in tensor_strategy(small_shape()),
        ds in tensor_strategy(small_shape()),
    ) {
        let star = osi_gamma(&dt, &ds, EPS, 2.0).unwrap();
        let sq_err = |g: f64| -> f64 {
            dt.data().iter().zip(ds.data()).map(|(t, s)| (t - g * s).powi(2)).sum()
        };
        let best = (0..=200).map(|i| sq_err(i as f64 / 100.0)).fold(f64::INFINITY, f64::min);
        prop_assert!(sq_err(star) <= best + 1e-9, "gamma {star}: {} vs grid {best}", sq_err(star));
    }

    #[test]
    fn minmax_normalization_lands_in_the_unit_interval(
        values in prop::collection::vec(-100.0f64..100.0, 20),
    ) {
        let map = SpatialMap::from_vec(4, 5, values.clone()).unwrap();
        let norm = map.minmax_normalized();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            for v in norm.values() {
                prop_assert!((0.0..=1.0).contains(v), "normalized value {v} out of range");
            }
            prop_assert_eq!(norm.values().iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
            prop_assert_eq!(norm.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
        } else {
            prop_assert!(norm.values().iter().all(|v| *v == 0.0), "constant map must flatten to zero");
        }
    }

    #[test]
    fn cache_slots_track_the_two_most_recent_misses(
        decisions in prop::collection::vec(any::<bool>(), 1..40),
    ) {
        let shape = TensorShape::new(1, 1, 2, 2, 1).unwrap();
        let mut cache = ResidualCache::new();
        let mut miss_steps: Vec<usize> = Vec::new();
        for (step, is_miss) in decisions.into_iter().enumerate() {
            if is_miss {
                let fill = |v: f64| LatentTensor::from_fn(shape, |_, _, _, _, _| v);
                let slot = CacheSlot::new(
                    step,
                    fill(step as f64),
                    fill(step as f64 + 0.25),
                    fill(step as f64 + 0.5),
                )
                .unwrap();
                cache.record_full_step(slot).unwrap();
                miss_steps.push(step);
            }
            // A hit performs no cache call at all; nothing to do here.
            prop_assert_eq!(cache.cache_ready(), miss_steps.len() >= 2);
            let newer = cache.newer().map(|s| s.step());
            let older = cache.older().map(|s| s.step());
            prop_assert_eq!(newer, miss_steps.last().copied());
            prop_assert_eq!(older, miss_steps.len().checked_sub(2).map(|i| miss_steps[i]));
            let anchor = cache.velocity_anchor().map(|z| z.data()[0]);
            prop_assert_eq!(anchor, older.map(|s| s as f64));
        }
    }
}
