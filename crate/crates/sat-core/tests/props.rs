//! Property tests over the attack projection and dataset invariants.

use proptest::prelude::*;
use sat_core::attack::project_linf;
use sat_core::data::synth_blobs;
use sat_core::Tensor;

proptest! {
    /// Projection always lands inside the ε-ball and keeps x+δ in [0, 1].
    #[test]
    fn projection_is_always_feasible(
        xs in prop::collection::vec(0.0f64..=1.0, 1..32),
        ds in prop::collection::vec(-2.0f64..=2.0, 1..32),
        eps in 0.0f64..=1.0,
    ) {
        let n = xs.len().min(ds.len());
        let x = Tensor::vector(&xs[..n]);
        let d = Tensor::vector(&ds[..n]);
        let p = project_linf(&d, eps, &x);
        for (dv, xv) in p.data().iter().zip(x.data()) {
            prop_assert!(dv.abs() <= eps + 1e-12, "delta {dv} escapes ball {eps}");
            let adv = xv + dv;
            prop_assert!((0.0..=1.0).contains(&adv), "pixel {adv} escapes range");
        }
    }

    /// Projection is idempotent.
    #[test]
    fn projection_is_idempotent(
        xs in prop::collection::vec(0.0f64..=1.0, 1..16),
        ds in prop::collection::vec(-2.0f64..=2.0, 1..16),
        eps in 0.0f64..=1.0,
    ) {
        let n = xs.len().min(ds.len());
        let x = Tensor::vector(&xs[..n]);
        let d = Tensor::vector(&ds[..n]);
        let once = project_linf(&d, eps, &x);
        let twice = project_linf(&once, eps, &x);
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    /// Generated blobs always satisfy the dataset invariants.
    #[test]
    fn blobs_always_valid(
        classes in 2usize..6,
        per_class in 1usize..40,
        dim in 1usize..24,
        separation in 0.1f64..40.0,
        seed in any::<u64>(),
    ) {
        let data = synth_blobs(classes, per_class, dim, separation, seed).unwrap();
        prop_assert_eq!(data.len(), classes * per_class);
        data.validate(classes).unwrap();
    }
}
