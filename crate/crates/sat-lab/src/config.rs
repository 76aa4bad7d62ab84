//! JSON run configuration: schema, validation, and conversion to core types.
//!
//! Parsing is strict (unknown keys rejected) and total: every malformed input
//! yields a structured error carrying the JSON path of the offending key.

use crate::{io_err, LabError};
use sat_core::activations::{ActivationKind, ActivationPair};
use sat_core::attack::AttackConfig;
use sat_core::data::synth_blobs_split;
use sat_core::model::{LayerSpec, ModelSpec};
use sat_core::train::{PhaseOverrides, TrainConfig};
use sat_core::Dataset;
use serde::{Deserialize, Serialize};
use std::path::Path;

// ── Schema ──────────────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelDto,
    pub train: TrainDto,
    pub attack: AttackDto,
    /// Attack used for final robustness evaluation; defaults to the
    /// `eval-pgd200-eps4` preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_attack: Option<AttackDto>,
    pub data: DataDto,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalDto>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landscape: Option<LandscapeDto>,
}

/// Activation reference: either a bare name (`"silu"`) or an object with an
/// alpha (`{"kind": "elu", "alpha": 1.5}`).
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ActivationDto {
    Name(String),
    Full(ActivationFullDto),
}

// Hand-written instead of #[serde(untagged)]: the untagged fallback discards
// the inner error, and field-level messages ("missing field", "unknown
// field") must survive for the JSON-path contract.
impl<'de> Deserialize<'de> for ActivationDto {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> serde::de::Visitor<'de> for V {
            type Value = ActivationDto;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("an activation name or {\"kind\", \"alpha\"} object")
            }

            fn visit_str<E: serde::de::Error>(self, s: &str) -> Result<Self::Value, E> {
                Ok(ActivationDto::Name(s.to_string()))
            }

            fn visit_map<A: serde::de::MapAccess<'de>>(
                self,
                map: A,
            ) -> Result<Self::Value, A::Error> {
                ActivationFullDto::deserialize(serde::de::value::MapAccessDeserializer::new(map))
                    .map(ActivationDto::Full)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationFullDto {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerDto {
    Dense {
        #[serde(rename = "in")]
        input: usize,
        out: usize,
    },
    Conv {
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    Flatten,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDto {
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    /// Explicit layer stack; mutually exclusive with `arch`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerDto>>,
    /// Named default architecture: `"mlp"` or `"cnn"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<String>,
    pub activation: ActivationDto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDto {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub seed: u64,
    /// Per-phase activation overrides; every omitted field falls back to the
    /// model activation (full smooth training).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrides: Option<OverridesDto>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverridesDto {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward: Option<ActivationDto>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attacker_backward: Option<ActivationDto>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer_backward: Option<ActivationDto>,
}

/// Attack: a preset name (`"train-pgd1-eps4"`) or explicit parameters in
/// normalized units.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum AttackDto {
    Preset(String),
    Full(AttackFullDto),
}

impl<'de> Deserialize<'de> for AttackDto {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> serde::de::Visitor<'de> for V {
            type Value = AttackDto;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("an attack preset name or attack parameter object")
            }

            fn visit_str<E: serde::de::Error>(self, s: &str) -> Result<Self::Value, E> {
                Ok(AttackDto::Preset(s.to_string()))
            }

            fn visit_map<A: serde::de::MapAccess<'de>>(
                self,
                map: A,
            ) -> Result<Self::Value, A::Error> {
                AttackFullDto::deserialize(serde::de::value::MapAccessDeserializer::new(map))
                    .map(AttackDto::Full)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackFullDto {
    pub epsilon: f64,
    pub step: f64,
    pub iterations: usize,
    #[serde(default = "default_true")]
    pub random_init: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backward_override: Option<ActivationDto>,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataDto {
    Blobs {
        classes: usize,
        per_class: usize,
        val_per_class: usize,
        dim: usize,
        separation: f64,
        /// Dataset seed; independent of the training seed so several training
        /// seeds can share identical data. Defaults to a fixed constant.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Mnist {
        dir: String,
    },
    Cifar10 {
        dir: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalDto {
    #[serde(default = "default_iteration_ks")]
    pub iteration_ks: Vec<usize>,
    /// Sweep budgets in 0–255 pixel counts.
    #[serde(default = "default_epsilons_px")]
    pub epsilons_px: Vec<f64>,
    /// Iteration count used by the ε sweep.
    #[serde(default = "default_sweep_k")]
    pub sweep_k: usize,
    /// Evaluate sweeps on at most this many samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<usize>,
}

fn default_iteration_ks() -> Vec<usize> {
    vec![1, 5, 10, 50, 200]
}

fn default_epsilons_px() -> Vec<f64> {
    vec![0.0, 2.0, 4.0, 8.0, 16.0]
}

fn default_sweep_k() -> usize {
    50
}

impl Default for EvalDto {
    fn default() -> Self {
        EvalDto {
            iteration_ks: default_iteration_ks(),
            epsilons_px: default_epsilons_px(),
            sweep_k: default_sweep_k(),
            subset: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeDto {
    #[serde(default = "default_grid_n")]
    pub n: usize,
    #[serde(default)]
    pub sample_index: usize,
    /// Grid extent in 0–255 pixel counts; defaults to the training attack ε.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_px: Option<f64>,
}

fn default_grid_n() -> usize {
    41
}

impl Default for LandscapeDto {
    fn default() -> Self {
        LandscapeDto {
            n: default_grid_n(),
            sample_index: 0,
            epsilon_px: None,
        }
    }
}

// ── Conversion to core types ────────────────────────────────────────────────

fn config_err(path: &str, message: impl Into<String>) -> LabError {
    LabError::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl ActivationDto {
    pub fn to_kind(&self, path: &str) -> Result<ActivationKind, LabError> {
        let (name, alpha) = match self {
            ActivationDto::Name(name) => (name.as_str(), None),
            ActivationDto::Full(full) => (full.kind.as_str(), full.alpha),
        };
        let kind = match (name, alpha) {
            ("relu", None) => ActivationKind::Relu,
            ("softplus", None) => ActivationKind::Softplus,
            ("silu", None) => ActivationKind::Silu,
            ("gelu", None) => ActivationKind::Gelu,
            ("relu" | "softplus" | "silu" | "gelu", Some(_)) => {
                return Err(config_err(
                    &format!("{path}.alpha"),
                    format!("{name} takes no alpha"),
                ));
            }
            ("psoftplus", a) => ActivationKind::ParametricSoftplus {
                alpha: a.unwrap_or(10.0),
            },
            ("elu", a) => ActivationKind::Elu {
                alpha: a.unwrap_or(1.0),
            },
            ("celu", a) => ActivationKind::Celu {
                alpha: a.unwrap_or(1.0),
            },
            ("smoothrelu", a) => ActivationKind::SmoothRelu {
                alpha: a.unwrap_or(400.0),
            },
            (other, _) => {
                return Err(config_err(
                    path,
                    format!(
                        "unknown activation {other:?}; expected one of relu, softplus, \
                         psoftplus, silu, gelu, elu, celu, smoothrelu"
                    ),
                ));
            }
        };
        kind.validate()
            .map_err(|e| config_err(&format!("{path}.alpha"), format!("{e}")))?;
        Ok(kind)
    }

    pub fn from_kind(kind: ActivationKind) -> ActivationDto {
        match kind.alpha() {
            Some(alpha) => ActivationDto::Full(ActivationFullDto {
                kind: kind.name().into(),
                alpha: Some(alpha),
            }),
            None => ActivationDto::Name(kind.name().into()),
        }
    }
}

impl LayerDto {
    fn to_core(&self) -> LayerSpec {
        match *self {
            LayerDto::Dense { input, out } => LayerSpec::Dense { input, output: out },
            LayerDto::Conv {
                in_ch,
                out_ch,
                k,
                stride,
                pad,
            } => LayerSpec::Conv {
                in_channels: in_ch,
                out_channels: out_ch,
                kernel: k,
                stride,
                pad,
            },
            LayerDto::Flatten => LayerSpec::Flatten,
        }
    }

    fn from_core(layer: &LayerSpec) -> LayerDto {
        match *layer {
            LayerSpec::Dense { input, output } => LayerDto::Dense { input, out: output },
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            } => LayerDto::Conv {
                in_ch: in_channels,
                out_ch: out_channels,
                k: kernel,
                stride,
                pad,
            },
            LayerSpec::Flatten => LayerDto::Flatten,
        }
    }
}

impl ModelDto {
    pub fn to_spec(&self) -> Result<ModelSpec, LabError> {
        let kind = self.activation.to_kind("model.activation")?;
        let pair = ActivationPair::symmetric(kind);
        let spec = match (&self.layers, self.arch.as_deref()) {
            (Some(layers), None) => ModelSpec {
                layers: layers.iter().map(LayerDto::to_core).collect(),
                activation: pair,
                input_shape: self.input_shape.clone(),
                class_count: self.class_count,
            },
            (None, Some("mlp")) => {
                let mut spec = ModelSpec::default_mlp(pair);
                spec.input_shape = self.input_shape.clone();
                // The default MLP flattens first; adjust the first dense width
                // to the actual flattened input size.
                let flat: usize = self.input_shape.iter().product();
                if let Some(LayerSpec::Dense { input, .. }) = spec.layers.get_mut(1) {
                    *input = flat;
                }
                spec.class_count = self.class_count;
                if let Some(LayerSpec::Dense { output, .. }) = spec.layers.last_mut() {
                    *output = self.class_count;
                }
                spec
            }
            (None, Some("cnn")) => {
                let mut spec = ModelSpec::default_cnn(self.input_shape.clone(), pair);
                spec.class_count = self.class_count;
                if let Some(LayerSpec::Dense { output, .. }) = spec.layers.last_mut() {
                    *output = self.class_count;
                }
                spec
            }
            (None, Some(other)) => {
                return Err(config_err(
                    "model.arch",
                    format!("unknown architecture {other:?}; expected \"mlp\" or \"cnn\""),
                ));
            }
            (Some(_), Some(_)) => {
                return Err(config_err(
                    "model",
                    "specify either layers or arch, not both",
                ));
            }
            (None, None) => {
                return Err(config_err("model", "one of layers or arch is required"));
            }
        };
        spec.validate().map_err(|e| config_err("model", format!("{e}")))?;
        Ok(spec)
    }

    /// Canonical echo of a core spec (used in checkpoint metadata).
    pub fn from_spec(spec: &ModelSpec) -> ModelDto {
        ModelDto {
            input_shape: spec.input_shape.clone(),
            class_count: spec.class_count,
            layers: Some(spec.layers.iter().map(LayerDto::from_core).collect()),
            arch: None,
            activation: ActivationDto::from_kind(spec.activation.forward),
        }
    }
}

impl AttackDto {
    pub fn to_core(&self, path: &str) -> Result<AttackConfig, LabError> {
        let cfg = match self {
            AttackDto::Preset(name) => AttackConfig::preset(name).ok_or_else(|| {
                config_err(
                    path,
                    format!(
                        "unknown attack preset {name:?}; expected train-pgd1-eps4, \
                         eval-pgd200-eps4, or cifar-pgd1-eps8"
                    ),
                )
            })?,
            AttackDto::Full(full) => AttackConfig {
                epsilon: full.epsilon,
                step: full.step,
                iterations: full.iterations,
                random_init: full.random_init,
                backward_override: match &full.backward_override {
                    Some(dto) => Some(dto.to_kind(&format!("{path}.backward_override"))?),
                    None => None,
                },
            },
        };
        cfg.validate().map_err(|e| config_err(path, format!("{e}")))?;
        Ok(cfg)
    }
}

/// A fully validated configuration with its core counterparts.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub raw: RunConfig,
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub eval_attack: AttackConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<Loaded, LabError> {
        let spec = self.model.to_spec()?;
        let model_kind = spec.activation.forward;

        let pick = |field: &Option<ActivationDto>, path: &str| -> Result<ActivationKind, LabError> {
            match field {
                Some(dto) => dto.to_kind(path),
                None => Ok(model_kind),
            }
        };
        let overrides = match &self.train.overrides {
            Some(ov) => PhaseOverrides {
                forward: pick(&ov.forward, "train.overrides.forward")?,
                attacker_backward: pick(
                    &ov.attacker_backward,
                    "train.overrides.attacker_backward",
                )?,
                optimizer_backward: pick(
                    &ov.optimizer_backward,
                    "train.overrides.optimizer_backward",
                )?,
            },
            None => PhaseOverrides::symmetric(model_kind),
        };

        let attack = self.attack.to_core("attack")?;
        let train = TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            base_lr: self.train.base_lr,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
            lr_decay_epochs: self.train.lr_decay_epochs.clone(),
            attack,
            overrides,
            seed: self.train.seed,
        };
        train
            .validate()
            .map_err(|e| config_err("train", format!("{e}")))?;

        let eval_attack = match &self.eval_attack {
            Some(dto) => dto.to_core("eval_attack")?,
            None => AttackConfig::preset("eval-pgd200-eps4").expect("built-in preset"),
        };

        if let DataDto::Blobs { separation, .. } = &self.data {
            if !(*separation > 0.0) {
                return Err(config_err(
                    "data.separation",
                    format!("separation must be positive, got {separation}"),
                ));
            }
        }

        Ok(Loaded {
            raw: self.clone(),
            spec,
            train,
            eval_attack,
        })
    }
}

/// Fixed default seed for synthetic datasets, independent of training seeds.
pub const DEFAULT_DATA_SEED: u64 = 0xDA7A;

impl DataDto {
    /// Materialize the `(train, val)` dataset pair.
    pub fn load(&self) -> Result<(Dataset, Dataset), LabError> {
        match self {
            DataDto::Blobs {
                classes,
                per_class,
                val_per_class,
                dim,
                separation,
                seed,
            } => {
                let seed = seed.unwrap_or(DEFAULT_DATA_SEED);
                Ok(synth_blobs_split(
                    *classes,
                    *per_class,
                    *val_per_class,
                    *dim,
                    *separation,
                    seed,
                )?)
            }
            DataDto::Mnist { dir } => {
                let dir = Path::new(dir);
                let train = crate::idx::load_idx(
                    &dir.join("train-images-idx3-ubyte"),
                    &dir.join("train-labels-idx1-ubyte"),
                )?;
                let val = crate::idx::load_idx(
                    &dir.join("t10k-images-idx3-ubyte"),
                    &dir.join("t10k-labels-idx1-ubyte"),
                )?;
                Ok((train, val))
            }
            DataDto::Cifar10 { dir } => crate::idx::load_cifar10_dir(Path::new(dir)),
        }
    }
}

// ── Parsing ─────────────────────────────────────────────────────────────────

/// Parse and validate a config from JSON text.
pub fn parse_config(json: &str) -> Result<Loaded, LabError> {
    let mut de = serde_json::Deserializer::from_str(json);
    let raw: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().to_string();
        // "missing field `epsilon`" at path "attack" really means
        // "attack.epsilon"; fold the field name into the path.
        let message_head = message
            .split(" at line")
            .next()
            .unwrap_or(&message)
            .to_string();
        let path = match message_head.strip_prefix("missing field `") {
            Some(rest) => {
                let field = rest.trim_end_matches('`');
                if path == "." {
                    field.to_string()
                } else {
                    format!("{path}.{field}")
                }
            }
            None => path,
        };
        LabError::Config {
            path,
            message: message_head,
        }
    })?;
    raw.validate()
}

/// Load and validate a config file.
pub fn load_config(path: &Path) -> Result<Loaded, LabError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text)
}

// ── Shipped presets ─────────────────────────────────────────────────────────

macro_rules! presets {
    ($($name:literal),+ $(,)?) => {
        /// Names of the configs shipped in the repo's `configs/` directory.
        pub fn preset_names() -> &'static [&'static str] {
            &[$($name),+]
        }

        /// Embedded JSON for a shipped preset.
        pub fn preset_json(name: &str) -> Option<&'static str> {
            match name {
                $($name => Some(include_str!(concat!("../../../configs/", $name, ".json"))),)+
                _ => None,
            }
        }
    };
}

presets!(
    "table1-cell-relu-relu",
    "table1-cell-psoftplus-relu",
    "table1-cell-relu-psoftplus",
    "table1-cell-psoftplus-psoftplus",
    "sat-relu-mnist",
    "sat-softplus-mnist",
    "sat-psoftplus-mnist",
    "sat-silu-mnist",
    "sat-gelu-mnist",
    "sat-elu-mnist",
    "sat-celu-mnist",
    "sat-smoothrelu-mnist",
    "sat-relu-blobs",
    "sat-silu-blobs",
    "cifar-pgd1-eps8",
);
