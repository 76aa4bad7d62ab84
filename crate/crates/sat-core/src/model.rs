//! Small MLP/CNN architectures assembled from graph ops and activation pairs.

use crate::activations::{ActivationKind, ActivationPair};
use crate::graph::{GradientMap, Graph, GraphError, NodeId};
use crate::rng;
use crate::tensor::Tensor;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// One layer of a [`ModelSpec`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Flatten,
}

/// Network architecture: ordered layers, the activation pair applied after
/// every parameterized layer except the last layer of the network (never
/// after `Flatten`), the per-sample input shape, and the class count.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub activation: ActivationPair,
    pub input_shape: Vec<usize>,
    pub class_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelError {
    /// Spec-level validation failure, with a human-readable reason.
    InvalidSpec(String),
    /// Input tensor does not match `[batch] + input_shape`.
    InputShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    /// A named parameter is absent from the parameter map.
    MissingParam(String),
    /// A stored parameter has the wrong shape.
    ParamShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    Graph(GraphError),
}

impl From<GraphError> for ModelError {
    fn from(e: GraphError) -> Self {
        ModelError::Graph(e)
    }
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::InvalidSpec(why) => write!(f, "invalid model spec: {why}"),
            ModelError::InputShapeMismatch { expected, got } => {
                write!(f, "input shape {got:?} does not match expected {expected:?}")
            }
            ModelError::MissingParam(name) => write!(f, "missing parameter {name}"),
            ModelError::ParamShapeMismatch {
                name,
                expected,
                got,
            } => write!(f, "parameter {name}: shape {got:?}, expected {expected:?}"),
            ModelError::Graph(e) => write!(f, "{e}"),
        }
    }
}

impl ModelSpec {
    /// The default MLP: 784 → 128 → 128 → 10 over flattened 1×28×28 inputs.
    pub fn default_mlp(activation: ActivationPair) -> Self {
        ModelSpec {
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    input: 784,
                    output: 128,
                },
                LayerSpec::Dense {
                    input: 128,
                    output: 128,
                },
                LayerSpec::Dense {
                    input: 128,
                    output: 10,
                },
            ],
            activation,
            input_shape: vec![1, 28, 28],
            class_count: 10,
        }
    }

    /// The default CNN: Conv(→16, 3, stride 2, pad 1) → act → Conv(→32, 3,
    /// stride 2, pad 1) → act → Flatten → Dense(→10), sized for the given
    /// `[channels, height, width]` input shape.
    pub fn default_cnn(input_shape: Vec<usize>, activation: ActivationPair) -> Self {
        let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
        let out_dim = |d: usize| (d + 2 - 3) / 2 + 1;
        let (h1, w1) = (out_dim(h), out_dim(w));
        let (h2, w2) = (out_dim(h1), out_dim(w1));
        ModelSpec {
            layers: vec![
                LayerSpec::Conv {
                    in_channels: c,
                    out_channels: 16,
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                },
                LayerSpec::Conv {
                    in_channels: 16,
                    out_channels: 32,
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    input: 32 * h2 * w2,
                    output: 10,
                },
            ],
            activation,
            input_shape,
            class_count: 10,
        }
    }

    /// Indices of layers followed by an activation site: every `Dense`/`Conv`
    /// layer except the last layer of the network.
    pub fn activation_sites(&self) -> Vec<usize> {
        let last = self.layers.len().saturating_sub(1);
        self.layers
            .iter()
            .enumerate()
            .filter(|(i, layer)| *i < last && !matches!(layer, LayerSpec::Flatten))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.class_count < 2 {
            return Err(ModelError::InvalidSpec(format!(
                "class_count must be at least 2, got {}",
                self.class_count
            )));
        }
        if self.layers.is_empty() {
            return Err(ModelError::InvalidSpec("no layers".into()));
        }
        self.activation
            .validate()
            .map_err(|e| ModelError::InvalidSpec(format!("{e}")))?;
        let mut shape = self.input_shape.clone();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(ModelError::InvalidSpec(format!(
                "bad input shape {shape:?}"
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Dense { input, output } => {
                    if *input == 0 || *output == 0 {
                        return Err(ModelError::InvalidSpec(format!(
                            "layer {i}: zero-sized dense layer"
                        )));
                    }
                    if shape.len() != 1 || shape[0] != *input {
                        return Err(ModelError::InvalidSpec(format!(
                            "layer {i}: dense expects flat input of {input}, got {shape:?}"
                        )));
                    }
                    shape = vec![*output];
                }
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    pad,
                } => {
                    if *in_channels == 0 || *out_channels == 0 || *kernel == 0 || *stride == 0 {
                        return Err(ModelError::InvalidSpec(format!(
                            "layer {i}: zero-sized conv parameter"
                        )));
                    }
                    if shape.len() != 3 || shape[0] != *in_channels {
                        return Err(ModelError::InvalidSpec(format!(
                            "layer {i}: conv expects [{in_channels}, h, w], got {shape:?}"
                        )));
                    }
                    let (h, w) = (shape[1], shape[2]);
                    if h + 2 * pad < *kernel || w + 2 * pad < *kernel {
                        return Err(ModelError::InvalidSpec(format!(
                            "layer {i}: kernel {kernel} larger than padded input {h}x{w}"
                        )));
                    }
                    let oh = (h + 2 * pad - kernel) / stride + 1;
                    let ow = (w + 2 * pad - kernel) / stride + 1;
                    shape = vec![*out_channels, oh, ow];
                }
                LayerSpec::Flatten => {
                    shape = vec![shape.iter().product()];
                }
            }
        }
        if shape != vec![self.class_count] {
            return Err(ModelError::InvalidSpec(format!(
                "network produces {shape:?}, expected [{}] logits",
                self.class_count
            )));
        }
        Ok(())
    }
}

// ── Parameters ──────────────────────────────────────────────────────────────

/// Named parameter tensors. `BTreeMap` so iteration (and therefore optimizer
/// and checkpoint order) is deterministic.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelParams {
    entries: BTreeMap<String, Tensor>,
}

pub fn weight_name(layer: usize) -> String {
    format!("layer{layer:02}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("layer{layer:02}.bias")
}

pub fn alpha_name(layer: usize) -> String {
    format!("layer{layer:02}.alpha")
}

/// True for the learnable SmoothReLU alpha entries, which are excluded from
/// weight decay and projected to stay positive.
pub fn is_alpha_param(name: &str) -> bool {
    name.ends_with(".alpha")
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, value: Tensor) {
        self.entries.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }
}

/// He-normal initialization: weights ~ N(0, sqrt(2/fan_in)), biases zero,
/// SmoothReLU alphas at their configured starting value. Deterministic in the
/// seed.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ModelParams, ModelError> {
    spec.validate()?;
    let mut rng = rng::rng_from(seed);
    let mut params = ModelParams::new();
    let sites = spec.activation_sites();
    for (i, layer) in spec.layers.iter().enumerate() {
        match layer {
            LayerSpec::Dense { input, output } => {
                let std = crate::fmath::sqrt(2.0 / *input as f64);
                let data: Vec<f64> = (0..input * output)
                    .map(|_| std * rng::standard_normal(&mut rng))
                    .collect();
                params.insert(
                    weight_name(i),
                    Tensor::new(vec![*output, *input], data).unwrap(),
                );
                params.insert(bias_name(i), Tensor::zeros(vec![*output]));
            }
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let fan_in = in_channels * kernel * kernel;
                let std = crate::fmath::sqrt(2.0 / fan_in as f64);
                let data: Vec<f64> = (0..out_channels * fan_in)
                    .map(|_| std * rng::standard_normal(&mut rng))
                    .collect();
                params.insert(
                    weight_name(i),
                    Tensor::new(vec![*out_channels, *in_channels, *kernel, *kernel], data)
                        .unwrap(),
                );
                params.insert(bias_name(i), Tensor::zeros(vec![*out_channels]));
            }
            LayerSpec::Flatten => {}
        }
        if sites.contains(&i) && spec.activation.uses_learnable_alpha() {
            let alpha = match (spec.activation.forward, spec.activation.backward) {
                (ActivationKind::SmoothRelu { alpha }, _) => alpha,
                (_, ActivationKind::SmoothRelu { alpha }) => alpha,
                _ => unreachable!(),
            };
            params.insert(alpha_name(i), Tensor::scalar(alpha));
        }
    }
    Ok(params)
}

// ── Forward pass ────────────────────────────────────────────────────────────

/// A recorded forward pass: the graph plus handles to the input, the logits,
/// and every parameter leaf.
pub struct ForwardPass {
    pub graph: Graph,
    pub input: NodeId,
    pub logits: NodeId,
    pub param_nodes: BTreeMap<String, NodeId>,
}

impl ForwardPass {
    /// Gradients of an already-run backward sweep, keyed like the params.
    pub fn param_grads(&self, grads: &GradientMap) -> BTreeMap<String, Tensor> {
        self.param_nodes
            .iter()
            .map(|(name, &id)| (name.clone(), grads.get(id).clone()))
            .collect()
    }
}

fn fetch<'p>(
    params: &'p ModelParams,
    name: &str,
    expected: &[usize],
) -> Result<&'p Tensor, ModelError> {
    let t = params
        .get(name)
        .ok_or_else(|| ModelError::MissingParam(name.into()))?;
    if t.shape() != expected {
        return Err(ModelError::ParamShapeMismatch {
            name: name.into(),
            expected: expected.to_vec(),
            got: t.shape().to_vec(),
        });
    }
    Ok(t)
}

/// Run the network on a batch `x` of shape `[batch] + input_shape`, recording
/// the graph. The supplied `pair` overrides `spec.activation`, which is how
/// attacker- and optimizer-side backward substitutions are expressed; pass
/// `spec.activation` for the plain configuration.
pub fn forward(
    params: &ModelParams,
    spec: &ModelSpec,
    x: &Tensor,
    pair: ActivationPair,
) -> Result<ForwardPass, ModelError> {
    spec.validate()?;
    pair.validate()
        .map_err(|e| ModelError::InvalidSpec(format!("{e}")))?;
    let xs = x.shape();
    if xs.len() != spec.input_shape.len() + 1 || xs[1..] != spec.input_shape[..] {
        let mut expected = vec![xs.first().copied().unwrap_or(0)];
        expected.extend_from_slice(&spec.input_shape);
        return Err(ModelError::InputShapeMismatch {
            expected,
            got: xs.to_vec(),
        });
    }
    let batch = xs[0];
    let sites = spec.activation_sites();

    let mut graph = Graph::new();
    let mut param_nodes = BTreeMap::new();
    let input = graph.leaf(x.clone());
    let mut current = input;

    for (i, layer) in spec.layers.iter().enumerate() {
        match layer {
            LayerSpec::Dense { input: din, output } => {
                let w = fetch(params, &weight_name(i), &[*output, *din])?;
                let b = fetch(params, &bias_name(i), &[*output])?;
                let w_node = graph.leaf(w.clone());
                let b_node = graph.leaf(b.clone());
                param_nodes.insert(weight_name(i), w_node);
                param_nodes.insert(bias_name(i), b_node);
                let wt = graph.transpose(w_node)?;
                let z = graph.matmul(current, wt)?;
                current = graph.add_row_bias(z, b_node)?;
            }
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                let w = fetch(
                    params,
                    &weight_name(i),
                    &[*out_channels, *in_channels, *kernel, *kernel],
                )?;
                let b = fetch(params, &bias_name(i), &[*out_channels])?;
                let w_node = graph.leaf(w.clone());
                let b_node = graph.leaf(b.clone());
                param_nodes.insert(weight_name(i), w_node);
                param_nodes.insert(bias_name(i), b_node);
                let z = graph.conv2d(current, w_node, *stride, *pad)?;
                current = graph.add_channel_bias(z, b_node)?;
            }
            LayerSpec::Flatten => {
                let n: usize = graph.value(current).shape()[1..].iter().product();
                current = graph.reshape(current, vec![batch, n])?;
            }
        }
        if sites.contains(&i) {
            let alpha_node = if pair.uses_learnable_alpha() {
                let name = alpha_name(i);
                let a = fetch(params, &name, &[1])?;
                let node = graph.leaf(a.clone());
                param_nodes.insert(name, node);
                Some(node)
            } else {
                None
            };
            current = graph.activation(current, pair, alpha_node)?;
        }
    }

    Ok(ForwardPass {
        graph,
        input,
        logits: current,
        param_nodes,
    })
}

/// Forward plus cross-entropy loss; returns the pass and the loss node.
pub fn loss_forward(
    params: &ModelParams,
    spec: &ModelSpec,
    x: &Tensor,
    labels: &[usize],
    pair: ActivationPair,
) -> Result<(ForwardPass, NodeId), ModelError> {
    let mut pass = forward(params, spec, x, pair)?;
    let loss = pass.graph.cross_entropy(pass.logits, labels)?;
    Ok((pass, loss))
}

/// Fraction of samples whose argmax logit equals the label, evaluated in
/// fixed-size chunks.
pub fn clean_accuracy(
    params: &ModelParams,
    spec: &ModelSpec,
    data: &crate::data::Dataset,
) -> Result<f64, ModelError> {
    let n = data.len();
    let mut correct = 0usize;
    let chunk = 256;
    let mut start = 0;
    while start < n {
        let end = core::cmp::min(start + chunk, n);
        let (images, labels) = data.slice_batch(start, end);
        let pass = forward(params, spec, &images, spec.activation)?;
        let logits = pass.graph.value(pass.logits);
        for (row, &label) in labels.iter().enumerate() {
            if logits.argmax_row(row) == label {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / n as f64)
}
