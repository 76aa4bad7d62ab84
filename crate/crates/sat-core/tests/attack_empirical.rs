//! Empirical attack properties on trained desk-scale models.

use sat_core::activations::{ActivationKind, ActivationPair};
use sat_core::attack::{robust_accuracy, AttackConfig};
use sat_core::data::{synth_blobs, synth_blobs_split};
use sat_core::model::{self, LayerSpec, ModelSpec};
use sat_core::train::{adversarial_train, PhaseOverrides, TrainConfig};

fn mlp_spec(dim: usize, classes: usize, pair: ActivationPair) -> ModelSpec {
    ModelSpec {
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                input: dim,
                output: 32,
            },
            LayerSpec::Dense {
                input: 32,
                output: classes,
            },
        ],
        activation: pair,
        input_shape: vec![1, 1, dim],
        class_count: classes,
    }
}

fn quick_train(seed: u64) -> (ModelSpec, sat_core::ModelParams, sat_core::Dataset) {
    let pair = ActivationPair::symmetric(ActivationKind::Relu);
    let spec = mlp_spec(16, 4, pair);
    let (train, val) = synth_blobs_split(4, 150, 50, 16, 2.0, seed).unwrap();
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 64,
        base_lr: 0.05,
        momentum: 0.9,
        weight_decay: 1e-4,
        lr_decay_epochs: vec![4],
        attack: AttackConfig::new(4.0 / 255.0, 4.0 / 255.0, 1),
        overrides: PhaseOverrides::symmetric(ActivationKind::Relu),
        seed,
    };
    let (ckpt, _) = adversarial_train(&cfg, &spec, &train, &val).unwrap();
    (ckpt.spec, ckpt.params, val)
}

/// More attack iterations find higher loss on nearly every batch.
#[test]
fn pgd5_loss_dominates_pgd1_loss() {
    for seed in [1u64, 2, 3] {
        let (spec, params, val) = quick_train(seed);
        let eps = 8.0 / 255.0;
        let cfg1 = AttackConfig {
            epsilon: eps,
            step: eps,
            iterations: 1,
            random_init: true,
            backward_override: None,
        };
        let cfg5 = AttackConfig {
            epsilon: eps,
            step: eps / 4.0,
            iterations: 5,
            random_init: true,
            backward_override: None,
        };
        let batch_size = 20;
        let mut wins = 0usize;
        let mut batches = 0usize;
        let mut start = 0;
        while start < val.len() {
            let end = (start + batch_size).min(val.len());
            let (x, y) = val.slice_batch(start, end);
            let mean_loss = |cfg: &AttackConfig, atk_seed: u64| {
                let adv =
                    sat_core::attack::pgd_with_offset(&params, &spec, &x, &y, cfg, atk_seed, start)
                        .unwrap();
                let (pass, loss) =
                    model::loss_forward(&params, &spec, &adv, &y, spec.activation).unwrap();
                pass.graph.value(loss).item()
            };
            if mean_loss(&cfg5, 7) >= mean_loss(&cfg1, 7) {
                wins += 1;
            }
            batches += 1;
            start = end;
        }
        assert!(
            wins as f64 >= 0.95 * batches as f64,
            "seed {seed}: PGD-5 beat PGD-1 on {wins}/{batches} batches"
        );
    }
}

/// Attacked accuracy never meaningfully exceeds clean accuracy.
#[test]
fn robust_accuracy_bounded_by_clean_at_n10000() {
    let (spec, params, _) = quick_train(11);
    let big = synth_blobs(4, 2500, 16, 2.0, 77).unwrap();
    assert_eq!(big.len(), 10_000);
    let clean = model::clean_accuracy(&params, &spec, &big).unwrap();
    let cfg = AttackConfig::new(4.0 / 255.0, 1.0 / 255.0, 5);
    let robust = robust_accuracy(&params, &spec, &big, &cfg, 13).unwrap();
    assert!(
        robust <= clean + 0.005,
        "robust {robust} exceeds clean {clean} beyond noise"
    );
}

/// Robust accuracy never increases with the perturbation budget.
#[test]
fn robust_accuracy_monotone_in_epsilon() {
    let (spec, params, val) = quick_train(21);
    let mut last = f64::INFINITY;
    for eps_px in [0.0, 2.0, 4.0, 8.0] {
        let eps = eps_px / 255.0;
        let cfg = AttackConfig::new(eps, if eps > 0.0 { eps / 4.0 } else { 0.0 }, 10);
        let acc = robust_accuracy(&params, &spec, &val, &cfg, 5).unwrap();
        assert!(
            acc <= last + 0.005,
            "accuracy rose from {last} to {acc} at eps {eps_px}/255"
        );
        last = acc;
    }
}
