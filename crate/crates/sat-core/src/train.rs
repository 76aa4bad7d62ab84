//! Momentum-SGD adversarial training with per-phase activation overrides.
//!
//! Each step generates an adversarial batch (inner maximization) with the
//! attacker-side backward kind, then computes the parameter update on that
//! batch (outer minimization) with the optimizer-side backward kind. The
//! forward function is shared by both phases and is what the checkpoint
//! ultimately represents.

use crate::activations::{ActivationKind, ActivationPair};
use crate::attack::{self, AttackConfig, AttackError};
use crate::checkpoint::{fnv1a64, Checkpoint, TrainMeta};
use crate::data::{DataError, Dataset};
use crate::model::{self, is_alpha_param, ModelError, ModelParams, ModelSpec};
use crate::rng;
use crate::tensor::Tensor;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Activation kinds per training phase. The Table-1-style probing cells keep
/// `forward` fixed and vary the two backward kinds; full smooth training sets
/// all three to the same smooth kind.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseOverrides {
    pub forward: ActivationKind,
    pub attacker_backward: ActivationKind,
    pub optimizer_backward: ActivationKind,
}

impl PhaseOverrides {
    pub fn symmetric(kind: ActivationKind) -> Self {
        PhaseOverrides {
            forward: kind,
            attacker_backward: kind,
            optimizer_backward: kind,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        for kind in [self.forward, self.attacker_backward, self.optimizer_backward] {
            kind.validate()
                .map_err(|e| TrainError::BadConfig(format!("{e}")))?;
        }
        Ok(())
    }

    fn mentions_smoothrelu(&self) -> bool {
        [self.forward, self.attacker_backward, self.optimizer_backward]
            .iter()
            .any(|k| matches!(k, ActivationKind::SmoothRelu { .. }))
    }
}

/// Full training configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs at which the learning rate drops by 10×; strictly increasing,
    /// all below `epochs`.
    pub lr_decay_epochs: Vec<usize>,
    pub attack: AttackConfig,
    pub overrides: PhaseOverrides,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale default schedule: 20 epochs, decay at {10, 15}, lr 0.05,
    /// momentum 0.9, weight decay 1e-4, batch 128.
    pub fn desk_default(attack: AttackConfig, overrides: PhaseOverrides, seed: u64) -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            base_lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_decay_epochs: alloc::vec![10, 15],
            attack,
            overrides,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 {
            return Err(TrainError::BadConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::BadConfig("batch_size must be at least 1".into()));
        }
        if !(self.base_lr >= 0.0) {
            return Err(TrainError::BadConfig(format!(
                "base_lr {} must be non-negative",
                self.base_lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::BadConfig(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(TrainError::BadConfig(format!(
                "weight_decay {} must be non-negative",
                self.weight_decay
            )));
        }
        for pair in self.lr_decay_epochs.windows(2) {
            if pair[1] <= pair[0] {
                return Err(TrainError::BadConfig(
                    "lr_decay_epochs must be strictly increasing".into(),
                ));
            }
        }
        if let Some(&last) = self.lr_decay_epochs.last() {
            if last >= self.epochs {
                return Err(TrainError::BadConfig(format!(
                    "decay epoch {last} not below epochs {}",
                    self.epochs
                )));
            }
        }
        self.overrides.validate()?;
        self.attack.validate().map_err(TrainError::Attack)?;
        Ok(())
    }

    /// Opaque, stable hash recorded in checkpoint metadata.
    pub fn config_hash(&self) -> u64 {
        fnv1a64(format!("{self:?}").as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainError {
    BadConfig(String),
    /// Loss became non-finite; training aborts rather than continue on junk.
    Diverged { epoch: usize, batch: usize },
    /// Epoch outside `[0, epochs)` passed to the schedule.
    EpochOutOfRange { epoch: usize, epochs: usize },
    /// Dataset sample shape differs from the model's input shape.
    DataShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    Data(DataError),
    Model(ModelError),
    Attack(AttackError),
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<AttackError> for TrainError {
    fn from(e: AttackError) -> Self {
        TrainError::Attack(e)
    }
}

impl From<DataError> for TrainError {
    fn from(e: DataError) -> Self {
        TrainError::Data(e)
    }
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::BadConfig(why) => write!(f, "bad train config: {why}"),
            TrainError::Diverged { epoch, batch } => {
                write!(f, "training diverged at epoch {epoch}, batch {batch}")
            }
            TrainError::EpochOutOfRange { epoch, epochs } => {
                write!(f, "epoch {epoch} outside schedule of {epochs} epochs")
            }
            TrainError::DataShapeMismatch { expected, got } => {
                write!(f, "data samples are {got:?}, model expects {expected:?}")
            }
            TrainError::Data(e) => write!(f, "{e}"),
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::Attack(e) => write!(f, "{e}"),
        }
    }
}

/// Learning rate at an epoch: `base_lr · 10^(−#decay epochs ≤ epoch)`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64, TrainError> {
    if epoch >= cfg.epochs {
        return Err(TrainError::EpochOutOfRange {
            epoch,
            epochs: cfg.epochs,
        });
    }
    let drops = cfg.lr_decay_epochs.iter().filter(|&&d| d <= epoch).count();
    Ok(cfg.base_lr * crate::fmath::powi(10.0, -(drops as i32)))
}

/// Per-parameter velocity buffers.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    velocity: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn zeros_like(params: &ModelParams) -> Self {
        OptimizerState {
            velocity: params
                .iter()
                .map(|(name, t)| (name.clone(), Tensor::zeros(t.shape().to_vec())))
                .collect(),
        }
    }
}

/// One momentum-SGD update: `g' = g + wd·θ; v ← momentum·v + g'; θ ← θ − lr·v`.
///
/// SmoothReLU alpha entries are excluded from weight decay and projected to
/// `α ≥ 1e-2` after the step. Parameters without a gradient entry are treated
/// as having zero gradient.
pub fn sgd_momentum_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for (name, theta) in params.iter_mut() {
        let alpha_param = is_alpha_param(name);
        let wd = if alpha_param { 0.0 } else { weight_decay };
        let v = state
            .velocity
            .get_mut(name)
            .expect("optimizer state covers every parameter");
        let grad = grads.get(name);
        for (i, (tv, vv)) in theta.data_mut().iter_mut().zip(v.data_mut()).enumerate() {
            let g = grad.map(|t| t.data()[i]).unwrap_or(0.0) + wd * *tv;
            *vv = momentum * *vv + g;
            *tv -= lr * *vv;
        }
        if alpha_param {
            for tv in theta.data_mut() {
                *tv = crate::fmath::max(*tv, 1e-2);
            }
        }
    }
}

/// One row of the per-epoch metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub clean_acc: f64,
    pub robust_acc: f64,
}

pub type MetricsLog = Vec<EpochMetrics>;

/// Iterations of the quick per-epoch robustness probe.
const PROBE_ITERATIONS: usize = 10;
/// Size of the fixed validation subset the probe runs on.
const PROBE_SUBSET: usize = 1000;

fn probe_attack(attack: &AttackConfig) -> AttackConfig {
    AttackConfig {
        epsilon: attack.epsilon,
        step: attack.epsilon / 4.0,
        iterations: PROBE_ITERATIONS,
        random_init: true,
        backward_override: None,
    }
}

fn check_data(spec: &ModelSpec, data: &Dataset) -> Result<(), TrainError> {
    if data.sample_shape() != spec.input_shape {
        return Err(TrainError::DataShapeMismatch {
            expected: spec.input_shape.clone(),
            got: data.sample_shape(),
        });
    }
    data.validate(spec.class_count)?;
    Ok(())
}

/// Adversarial training (the full min-max loop).
///
/// Per epoch: shuffle deterministically, attack each batch with the
/// attacker-side pair, step the optimizer on the adversarial batch with the
/// optimizer-side pair, then log train loss plus clean/robust validation
/// accuracy (quick PGD-10 probe on a fixed subset). Returns the final
/// checkpoint, whose spec carries the symmetric inference activation.
pub fn adversarial_train(
    cfg: &TrainConfig,
    spec: &ModelSpec,
    train_data: &Dataset,
    val_data: &Dataset,
) -> Result<(Checkpoint, MetricsLog), TrainError> {
    cfg.validate()?;
    let ov = cfg.overrides;

    // Working spec for the optimizer phase; alpha parameters must exist when
    // any phase mentions SmoothReLU, so initialization sees a pair that
    // includes it in that case.
    let optimizer_pair = ActivationPair::new(ov.forward, ov.optimizer_backward);
    let init_backward = if matches!(ov.optimizer_backward, ActivationKind::SmoothRelu { .. })
        || !ov.mentions_smoothrelu()
    {
        ov.optimizer_backward
    } else if matches!(ov.attacker_backward, ActivationKind::SmoothRelu { .. })
        && !matches!(ov.forward, ActivationKind::SmoothRelu { .. })
    {
        ov.attacker_backward
    } else {
        ov.optimizer_backward
    };
    let mut train_spec = spec.clone();
    train_spec.activation = ActivationPair::new(ov.forward, init_backward);
    train_spec.validate()?;
    check_data(&train_spec, train_data)?;
    check_data(&train_spec, val_data)?;

    // Inference/eval spec: symmetric in the forward kind.
    let mut eval_spec = spec.clone();
    eval_spec.activation = ActivationPair::symmetric(ov.forward);

    let mut params = model::init_params(
        &train_spec,
        rng::derive_seed(cfg.seed, rng::stream::INIT, 0),
    )?;
    train_spec.activation = optimizer_pair;
    let mut state = OptimizerState::zeros_like(&params);
    let mut attack_cfg = cfg.attack.clone();
    attack_cfg.backward_override = Some(ov.attacker_backward);
    let probe_cfg = probe_attack(&cfg.attack);
    let probe_set = val_data.take(PROBE_SUBSET, "val-probe");

    let mut log = MetricsLog::new();
    let n = train_data.len();
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch)?;
        let mut shuffle_rng = rng::rng_from(rng::derive_seed(
            cfg.seed,
            rng::stream::SHUFFLE,
            epoch as u64,
        ));
        let order = rng::permutation(&mut shuffle_rng, n);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = train_data.gather_batch(chunk);
            let attack_seed = rng::derive_seed(
                cfg.seed,
                rng::stream::ATTACK,
                ((epoch as u64) << 32) | bi as u64,
            );
            let x_adv = attack::pgd(&params, &train_spec, &x, &y, &attack_cfg, attack_seed)?;
            let (pass, loss) =
                model::loss_forward(&params, &train_spec, &x_adv, &y, optimizer_pair)?;
            let loss_val = pass.graph.value(loss).item();
            if !loss_val.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: bi });
            }
            loss_sum += loss_val;
            batches += 1;
            let grads = pass.graph.backward(loss).map_err(ModelError::Graph)?;
            let pgrads = pass.param_grads(&grads);
            sgd_momentum_step(
                &mut params,
                &pgrads,
                &mut state,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            );
        }

        let clean_acc = model::clean_accuracy(&params, &eval_spec, val_data)?;
        let robust_acc = attack::robust_accuracy(
            &params,
            &eval_spec,
            &probe_set,
            &probe_cfg,
            rng::derive_seed(cfg.seed, rng::stream::EVAL, epoch as u64),
        )?;
        log.push(EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            clean_acc,
            robust_acc,
        });
    }

    let ckpt = Checkpoint {
        spec: eval_spec,
        params,
        meta: TrainMeta {
            seed: cfg.seed,
            epoch: cfg.epochs as u32,
            config_hash: cfg.config_hash(),
        },
    };
    Ok((ckpt, log))
}

// ── Table-1-style ablation ──────────────────────────────────────────────────

/// One trained cell of the four-way backward-substitution ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    /// "attacker-optimizer" backward kinds, e.g. "psoftplus-relu".
    pub label: String,
    pub clean_acc: f64,
    pub robust_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub seed: u64,
    pub cells: Vec<AblationCell>,
}

/// Train the four (attacker, optimizer) backward-substitution cells with
/// identical seeds and data order, evaluating each final model's clean and
/// robust accuracy with the supplied evaluation attack.
///
/// The base config must keep `forward = relu`; the whole point of the probe
/// is that inference stays ReLU while backward passes change.
pub fn run_ablation(
    base_cfg: &TrainConfig,
    spec: &ModelSpec,
    train_data: &Dataset,
    val_data: &Dataset,
    eval_attack: &AttackConfig,
) -> Result<AblationTable, TrainError> {
    if base_cfg.overrides.forward != ActivationKind::Relu {
        return Err(TrainError::BadConfig(
            "ablation requires forward activation relu".into(),
        ));
    }
    let smooth = ActivationKind::ParametricSoftplus { alpha: 10.0 };
    let relu = ActivationKind::Relu;
    let cells = [
        (relu, relu),
        (smooth, relu),
        (relu, smooth),
        (smooth, smooth),
    ];
    let mut table = AblationTable {
        seed: base_cfg.seed,
        cells: Vec::new(),
    };
    for (attacker, optimizer) in cells {
        let mut cfg = base_cfg.clone();
        cfg.overrides = PhaseOverrides {
            forward: relu,
            attacker_backward: attacker,
            optimizer_backward: optimizer,
        };
        let (ckpt, _log) = adversarial_train(&cfg, spec, train_data, val_data)?;
        let clean_acc = model::clean_accuracy(&ckpt.params, &ckpt.spec, val_data)?;
        let robust_acc = attack::robust_accuracy(
            &ckpt.params,
            &ckpt.spec,
            val_data,
            eval_attack,
            rng::derive_seed(base_cfg.seed, rng::stream::EVAL, 0xAB1A),
        )?;
        table.cells.push(AblationCell {
            label: format!("{}-{}", attacker.name(), optimizer.name()),
            clean_acc,
            robust_acc,
        });
    }
    Ok(table)
}
