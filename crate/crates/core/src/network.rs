//! Fully connected MLP surrogate.
//!
//! Hidden layers share one activation; the output layer is affine with a
//! single unit. Inputs and output pass through a fixed affine [`Scaling`]
//! (standardization fitted on the training data), so every evaluation
//! entry point works in raw market units while training happens in
//! standardized coordinates.
//!
//! Layer `l` in the structural editing API always means hidden layer `l`
//! (0-based); node `i` is a row of that layer's weight matrix.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::Interval;
use crate::special;
use crate::tape::{Scalar, Tape, TapeError, Var};

pub const MODEL_FORMAT: &str = "sobolev-prune-mlp";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("model needs at least one hidden layer")]
    NoHiddenLayer,
    #[error("layer {layer} weight matrix has {cols} columns but the previous layer has {prev} units")]
    LayerShape {
        layer: usize,
        cols: usize,
        prev: usize,
    },
    #[error("output layer must have exactly one unit, found {0}")]
    OutputWidth(usize),
    #[error("non-finite parameter in layer {0}")]
    NonFinite(usize),
    #[error("layer {layer} is not a hidden layer (model has {hidden} hidden layers)")]
    NotHidden { layer: usize, hidden: usize },
    #[error("node {node} out of range for hidden layer {layer} of width {width}")]
    NodeOutOfRange {
        layer: usize,
        node: usize,
        width: usize,
    },
    #[error("hidden layer {0} has a single node left")]
    SingletonLayer(usize),
    #[error("cannot remove the only hidden layer")]
    OnlyHiddenLayer,
    #[error("node enclosures were computed for a different model state")]
    StaleEnclosures,
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Silu,
    /// No nonlinearity; mostly useful for tests and layer-collapse checks.
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => special::relu(x),
            Activation::Silu => special::silu(x),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Relu => special::step(x),
            Activation::Silu => special::silu_deriv(x),
            Activation::Identity => 1.0,
        }
    }

    #[inline]
    pub fn second_deriv(self, x: f64) -> f64 {
        match self {
            Activation::Relu | Activation::Identity => 0.0,
            Activation::Silu => special::silu_second_deriv(x),
        }
    }

    fn record<S: Scalar>(self, tape: &mut Tape<S>, k: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(k),
            Activation::Silu => tape.silu(k),
            Activation::Identity => k,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "silu" => Ok(Activation::Silu),
            "identity" => Ok(Activation::Identity),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

/// One affine layer: `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Self {
        Dense { weights, bias }
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }
}

/// Affine standardization `x_n = (x − x_mean)/x_std`, `y = y_mean + y_std·y_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Scaling {
    pub fn identity(input_dim: usize) -> Self {
        Scaling {
            x_mean: vec![0.0; input_dim],
            x_std: vec![1.0; input_dim],
            y_mean: 0.0,
            y_std: 1.0,
        }
    }

    /// Column means and standard deviations of `xs` (rows are samples) and of `ys`.
    /// Zero deviations are replaced by one.
    pub fn fit(xs: &[Vec<f64>], ys: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let dim = xs.first().map_or(0, Vec::len);
        let mut x_mean = vec![0.0; dim];
        for row in xs {
            for (m, v) in x_mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        x_mean.iter_mut().for_each(|m| *m /= n);
        let mut x_std = vec![0.0; dim];
        for row in xs {
            for ((s, v), m) in x_std.iter_mut().zip(row).zip(&x_mean) {
                *s += (v - m) * (v - m);
            }
        }
        let fix = |s: f64| if s > 0.0 && s.is_finite() { s } else { 1.0 };
        let x_std = x_std.into_iter().map(|s| fix((s / n).sqrt())).collect();
        let y_mean = ys.iter().sum::<f64>() / ys.len().max(1) as f64;
        let y_var = ys.iter().map(|y| (y - y_mean) * (y - y_mean)).sum::<f64>() / ys.len().max(1) as f64;
        Scaling {
            x_mean,
            x_std,
            y_mean,
            y_std: fix(y_var.sqrt()),
        }
    }

    pub fn normalize_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_mean.iter().zip(&self.x_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn normalize_y(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    /// Maps raw derivatives `dy/dx` to `dy_n/dx_n`.
    pub fn normalize_dydx(&self, dydx: &[f64]) -> Vec<f64> {
        dydx.iter()
            .zip(&self.x_std)
            .map(|(d, s)| d * s / self.y_std)
            .collect()
    }

    pub fn denormalize_y(&self, y_n: f64) -> f64 {
        self.y_std * y_n + self.y_mean
    }
}

/// Layer-structured MLP with a scalar affine output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Dense>,
    activation: Activation,
    scaling: Scaling,
    needs_retraining: bool,
}

/// Interval information for every hidden node from one interval forward and reverse pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEnclosures {
    /// Pre-activation enclosures `[k]`, per hidden layer and node.
    pub pre: Vec<Vec<Interval>>,
    /// Post-activation enclosures `[n]`.
    pub post: Vec<Vec<Interval>>,
    /// Interval adjoints `[n̄]` of the output with respect to each node.
    pub adjoint: Vec<Vec<Interval>>,
    /// Adjoints with respect to the (raw) inputs.
    pub input_adjoint: Vec<Interval>,
    fingerprint: u64,
}

impl NodeEnclosures {
    /// Whether these enclosures were computed on `model` in its current state.
    pub fn matches(&self, model: &MlpModel) -> bool {
        self.fingerprint == model.fingerprint()
    }
}

/// Variables of a network recorded on a tape.
#[derive(Debug, Clone)]
pub struct RecordedNetwork {
    pub output: Var,
    /// Pre-activation node per hidden layer.
    pub pre: Vec<Vec<Var>>,
    /// Post-activation node per hidden layer.
    pub post: Vec<Vec<Var>>,
}

impl MlpModel {
    /// Randomly initialized network with uniform He-style weights
    /// (bound `√(6/fan_in)`) and zero biases.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self, NetworkError> {
        if hidden.is_empty() {
            return Err(NetworkError::NoHiddenLayer);
        }
        if input_dim == 0 {
            return Err(NetworkError::Dimension {
                expected: 1,
                got: 0,
            });
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &width in hidden.iter().chain(std::iter::once(&1)) {
            if width == 0 {
                return Err(NetworkError::Dimension {
                    expected: 1,
                    got: 0,
                });
            }
            let bound = (6.0 / fan_in as f64).sqrt();
            let weights = Array2::from_shape_fn((width, fan_in), |_| rng.random_range(-bound..bound));
            layers.push(Dense::new(weights, Array1::zeros(width)));
            fan_in = width;
        }
        Self::from_layers(layers, activation, Scaling::identity(input_dim))
    }

    /// Assembles a model from explicit layers (last one is the output layer).
    pub fn from_layers(
        layers: Vec<Dense>,
        activation: Activation,
        scaling: Scaling,
    ) -> Result<Self, NetworkError> {
        if layers.len() < 2 {
            return Err(NetworkError::NoHiddenLayer);
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(NetworkError::Dimension {
                    expected: layer.outputs(),
                    got: layer.bias.len(),
                });
            }
            if l > 0 && layer.inputs() != layers[l - 1].outputs() {
                return Err(NetworkError::LayerShape {
                    layer: l,
                    cols: layer.inputs(),
                    prev: layers[l - 1].outputs(),
                });
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(NetworkError::NonFinite(l));
            }
        }
        let out = layers.last().expect("checked length").outputs();
        if out != 1 {
            return Err(NetworkError::OutputWidth(out));
        }
        let input_dim = layers[0].inputs();
        if scaling.x_mean.len() != input_dim || scaling.x_std.len() != input_dim {
            return Err(NetworkError::Dimension {
                expected: input_dim,
                got: scaling.x_mean.len(),
            });
        }
        Ok(MlpModel {
            layers,
            activation,
            scaling,
            needs_retraining: false,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable access for optimizers. Shapes must not be changed.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn scaling(&self) -> &Scaling {
        &self.scaling
    }

    pub fn set_scaling(&mut self, scaling: Scaling) -> Result<(), NetworkError> {
        if scaling.x_mean.len() != self.input_dim() || scaling.x_std.len() != self.input_dim() {
            return Err(NetworkError::Dimension {
                expected: self.input_dim(),
                got: scaling.x_mean.len(),
            });
        }
        self.scaling = scaling;
        Ok(())
    }

    /// Set after a structural edit that only approximates the previous function.
    pub fn needs_retraining(&self) -> bool {
        self.needs_retraining
    }

    pub fn mark_trained(&mut self) {
        self.needs_retraining = false;
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn num_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.num_hidden()].iter().map(Dense::outputs).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters flattened layer by layer: weights row-major, then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.parameter_count());
        for layer in &self.layers {
            p.extend(layer.weights.iter());
            p.extend(layer.bias.iter());
        }
        p
    }

    /// Inverse of [`MlpModel::parameters`].
    pub fn set_parameters(&mut self, params: &[f64]) -> Result<(), NetworkError> {
        if params.len() != self.parameter_count() {
            return Err(NetworkError::Dimension {
                expected: self.parameter_count(),
                got: params.len(),
            });
        }
        let mut rest = params;
        for layer in &mut self.layers {
            let (w, tail) = rest.split_at(layer.weights.len());
            let (b, tail) = tail.split_at(layer.bias.len());
            layer.weights.iter_mut().zip(w).for_each(|(d, s)| *d = *s);
            layer.bias.iter_mut().zip(b).for_each(|(d, s)| *d = *s);
            rest = tail;
        }
        Ok(())
    }

    /// Hash of the architecture, activation, scaling and every parameter bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.activation.hash(&mut h);
        for layer in &self.layers {
            layer.weights.dim().hash(&mut h);
            for v in layer.weights.iter().chain(layer.bias.iter()) {
                v.to_bits().hash(&mut h);
            }
        }
        for v in self.scaling.x_mean.iter().chain(&self.scaling.x_std) {
            v.to_bits().hash(&mut h);
        }
        self.scaling.y_mean.to_bits().hash(&mut h);
        self.scaling.y_std.to_bits().hash(&mut h);
        h.finish()
    }

    fn check_input(&self, len: usize) -> Result<(), NetworkError> {
        if len != self.input_dim() {
            return Err(NetworkError::Dimension {
                expected: self.input_dim(),
                got: len,
            });
        }
        Ok(())
    }

    /// Standardized-coordinate network evaluation; fills `pre` with the
    /// pre-activations of every layer (output layer last).
    pub(crate) fn forward_normalized(&self, x_n: &[f64], pre: &mut Vec<Vec<f64>>) -> f64 {
        pre.clear();
        let mut act: Vec<f64> = x_n.to_vec();
        let hidden = self.num_hidden();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut k = Vec::with_capacity(layer.outputs());
            for (row, b) in layer.weights.rows().into_iter().zip(layer.bias.iter()) {
                // ((a0·w0 + a1·w1) + ...) + b, the same order the tape records
                let mut s = act[0] * row[0];
                for (a, w) in act.iter().zip(row.iter()).skip(1) {
                    s += a * w;
                }
                k.push(s + b);
            }
            act = if l < hidden {
                k.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                k.clone()
            };
            pre.push(k);
        }
        act[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, NetworkError> {
        self.check_input(x.len())?;
        let x_n = self.scaling.normalize_x(x);
        let mut pre = Vec::new();
        Ok(self.scaling.denormalize_y(self.forward_normalized(&x_n, &mut pre)))
    }

    /// Gradient of the output with respect to the raw inputs.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>, NetworkError> {
        Ok(self.value_and_gradient(x)?.1)
    }

    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>), NetworkError> {
        self.check_input(x.len())?;
        let x_n = self.scaling.normalize_x(x);
        let mut pre = Vec::new();
        let y_n = self.forward_normalized(&x_n, &mut pre);
        let hidden = self.num_hidden();
        // same operation order as the tape sweep, so interval adjoints at
        // degenerate boxes reproduce these values bit for bit
        let mut bar = vec![self.scaling.y_std];
        for l in (0..=hidden).rev() {
            let layer = &self.layers[l];
            if l < hidden {
                for (b, &k) in bar.iter_mut().zip(&pre[l]) {
                    *b *= self.activation.deriv(k);
                }
            }
            let mut prev = vec![0.0; layer.inputs()];
            for (row, b) in layer.weights.rows().into_iter().zip(&bar).rev() {
                for (p, w) in prev.iter_mut().zip(row.iter()) {
                    *p += b * w;
                }
            }
            bar = prev;
        }
        let grad = bar.iter().zip(&self.scaling.x_std).map(|(g, s)| g / s).collect();
        Ok((self.scaling.denormalize_y(y_n), grad))
    }

    /// Records the model (parameters as constants) on `tape` over the given input variables.
    pub fn record<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        inputs: &[Var],
    ) -> Result<RecordedNetwork, NetworkError> {
        self.record_impl(tape, inputs, |t, _, v| t.constant(S::from_f64(v)))
    }

    /// Records the model with its parameters supplied as tape variables, in
    /// the order of [`MlpModel::parameters`].
    pub fn record_with_parameters<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        inputs: &[Var],
        params: &[Var],
    ) -> Result<RecordedNetwork, NetworkError> {
        if params.len() != self.parameter_count() {
            return Err(NetworkError::Dimension {
                expected: self.parameter_count(),
                got: params.len(),
            });
        }
        self.record_impl(tape, inputs, |_, i, _| params[i])
    }

    fn record_impl<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        inputs: &[Var],
        mut param: impl FnMut(&mut Tape<S>, usize, f64) -> Var,
    ) -> Result<RecordedNetwork, NetworkError> {
        self.check_input(inputs.len())?;
        let mut act = Vec::with_capacity(inputs.len());
        for (i, &x) in inputs.iter().enumerate() {
            let mean = tape.constant(S::from_f64(self.scaling.x_mean[i]));
            let std = tape.constant(S::from_f64(self.scaling.x_std[i]));
            let centered = tape.sub(x, mean);
            act.push(tape.div(centered, std)?);
        }
        let hidden = self.num_hidden();
        let mut pre_all = Vec::with_capacity(hidden);
        let mut post_all = Vec::with_capacity(hidden);
        let mut output = None;
        let mut offset = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut pre = Vec::with_capacity(layer.outputs());
            let (rows, cols) = layer.weights.dim();
            for (j, row) in layer.weights.rows().into_iter().enumerate() {
                let terms: Vec<Var> = act
                    .iter()
                    .zip(row.iter())
                    .enumerate()
                    .map(|(i, (&a, &w))| {
                        let w = param(tape, offset + j * cols + i, w);
                        tape.mul(a, w)
                    })
                    .collect();
                let s = tape.sum(&terms).expect("layers have at least one input");
                let b = param(tape, offset + rows * cols + j, layer.bias[j]);
                pre.push(tape.add(s, b));
            }
            offset += rows * cols + rows;
            if l < hidden {
                let post: Vec<Var> = pre.iter().map(|&k| self.activation.record(tape, k)).collect();
                act = post.clone();
                pre_all.push(pre);
                post_all.push(post);
            } else {
                let std = tape.constant(S::from_f64(self.scaling.y_std));
                let mean = tape.constant(S::from_f64(self.scaling.y_mean));
                let scaled = tape.mul(pre[0], std);
                output = Some(tape.add(scaled, mean));
            }
        }
        Ok(RecordedNetwork {
            output: output.expect("model has an output layer"),
            pre: pre_all,
            post: post_all,
        })
    }

    /// Interval forward pass over `input_box` followed by an interval reverse
    /// pass seeded with `[1, 1]`.
    pub fn forward_interval(
        &self,
        input_box: &[Interval],
    ) -> Result<(Interval, NodeEnclosures), NetworkError> {
        self.check_input(input_box.len())?;
        let mut tape = Tape::<Interval>::new();
        let inputs: Vec<Var> = input_box.iter().map(|&b| tape.input(b)).collect();
        let rec = self.record(&mut tape, &inputs)?;
        tape.set_output(rec.output);
        let adj = tape.reverse(Interval::ONE)?;
        let values = |vars: &Vec<Var>| vars.iter().map(|&v| tape.value(v)).collect::<Vec<_>>();
        let enclosures = NodeEnclosures {
            pre: rec.pre.iter().map(values).collect(),
            post: rec.post.iter().map(values).collect(),
            adjoint: rec.post.iter().map(|vars| adj.of(vars)).collect(),
            input_adjoint: adj.of(&inputs),
            fingerprint: self.fingerprint(),
        };
        Ok((tape.value(rec.output), enclosures))
    }

    /// Hull of every hidden node's post-activation value over `points`.
    pub fn activation_hulls(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<Interval>>, NetworkError> {
        if points.is_empty() {
            return Err(NetworkError::Dimension { expected: self.input_dim(), got: 0 });
        }
        let hidden = self.num_hidden();
        let mut lo: Vec<Vec<f64>> = self.hidden_widths().iter().map(|&w| vec![f64::INFINITY; w]).collect();
        let mut hi: Vec<Vec<f64>> = self.hidden_widths().iter().map(|&w| vec![f64::NEG_INFINITY; w]).collect();
        let mut pre = Vec::new();
        for x in points {
            self.check_input(x.len())?;
            self.forward_normalized(&self.scaling.normalize_x(x), &mut pre);
            for l in 0..hidden {
                for (i, &k) in pre[l].iter().enumerate() {
                    let v = self.activation.apply(k);
                    lo[l][i] = lo[l][i].min(v);
                    hi[l][i] = hi[l][i].max(v);
                }
            }
        }
        lo.iter()
            .zip(&hi)
            .enumerate()
            .map(|(layer, (l, h))| {
                l.iter()
                    .zip(h)
                    .map(|(&a, &b)| Interval::new(a, b).map_err(|_| NetworkError::NonFinite(layer)))
                    .collect()
            })
            .collect()
    }

    fn check_hidden(&self, layer: usize) -> Result<(), NetworkError> {
        if layer >= self.num_hidden() {
            return Err(NetworkError::NotHidden {
                layer,
                hidden: self.num_hidden(),
            });
        }
        Ok(())
    }

    /// Removes hidden node `node` of hidden layer `layer`, adding the midpoint
    /// of each outgoing contribution `w·[n]` to the receiving node's bias.
    pub fn prune_node(
        &self,
        layer: usize,
        node: usize,
        enclosures: &NodeEnclosures,
    ) -> Result<MlpModel, NetworkError> {
        self.check_hidden(layer)?;
        let width = self.layers[layer].outputs();
        if node >= width {
            return Err(NetworkError::NodeOutOfRange { layer, node, width });
        }
        if width < 2 {
            return Err(NetworkError::SingletonLayer(layer));
        }
        if !enclosures.matches(self) {
            return Err(NetworkError::StaleEnclosures);
        }
        let enclosure = enclosures.post[layer][node];
        let mut out = self.clone();
        let keep: Vec<usize> = (0..width).filter(|&i| i != node).collect();
        {
            let current = &mut out.layers[layer];
            current.weights = current.weights.select(ndarray::Axis(0), &keep);
            current.bias = current.bias.select(ndarray::Axis(0), &keep);
        }
        let next = &mut out.layers[layer + 1];
        for j in 0..next.outputs() {
            let contribution = enclosure * next.weights[[j, node]];
            next.bias[j] += contribution.midpoint();
        }
        next.weights = next.weights.select(ndarray::Axis(1), &keep);
        Ok(out)
    }

    /// Deletes hidden layer `layer`, bridging its neighbours with the linear
    /// composition `W_next·W_l`, `W_next·b_l + b_next` (the removed activation
    /// is treated as identity). The result is flagged for retraining.
    pub fn remove_layer(&self, layer: usize) -> Result<MlpModel, NetworkError> {
        self.check_hidden(layer)?;
        if self.num_hidden() < 2 {
            return Err(NetworkError::OnlyHiddenLayer);
        }
        let current = &self.layers[layer];
        let next = &self.layers[layer + 1];
        let weights = next.weights.dot(&current.weights);
        let bias = next.weights.dot(&current.bias) + &next.bias;
        let mut layers = self.layers.clone();
        layers[layer + 1] = Dense::new(weights, bias);
        layers.remove(layer);
        let mut out = MlpModel::from_layers(layers, self.activation, self.scaling.clone())?;
        out.needs_retraining = true;
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_bytes_with_metadata(&BTreeMap::new())
    }

    /// Serializes with free-form string metadata (provenance, hashes) that
    /// does not affect the model itself.
    pub fn to_bytes_with_metadata(&self, metadata: &BTreeMap<String, String>) -> Vec<u8> {
        let mut file = ModelFile::from(self);
        file.metadata = metadata.clone();
        serde_json::to_vec_pretty(&file).expect("model file serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetworkError> {
        Ok(Self::from_bytes_with_metadata(bytes)?.0)
    }

    pub fn from_bytes_with_metadata(
        bytes: &[u8],
    ) -> Result<(Self, BTreeMap<String, String>), NetworkError> {
        let mut file: ModelFile =
            serde_json::from_slice(bytes).map_err(|e| NetworkError::Format(e.to_string()))?;
        let metadata = std::mem::take(&mut file.metadata);
        Ok((file.into_model()?, metadata))
    }
}

/// Two-input ReLU network with two hidden layers of two nodes, weights
/// recovered from the primal values of the published worked example. On the
/// box `[1, 10]²` its output encloses `[1.369, 3.703]`.
pub fn worked_example() -> MlpModel {
    use ndarray::array;
    let layers = vec![
        Dense::new(
            array![[0.12544, 0.0277], [0.11213, -0.0023]],
            array![0.1619, 0.2785],
        ),
        Dense::new(
            array![[0.1574, 0.2666], [0.4938, 0.8483]],
            array![0.0937, 0.2989],
        ),
        Dense::new(array![[0.4287, 1.3663]], array![0.2184]),
    ];
    MlpModel::from_layers(layers, Activation::Relu, Scaling::identity(2))
        .expect("fixture shapes are consistent")
}

/// On-disk model record.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    format_version: u32,
    activation: Activation,
    needs_retraining: bool,
    scaling: Scaling,
    layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    /// Row-major `rows × cols`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<&MlpModel> for ModelFile {
    fn from(m: &MlpModel) -> Self {
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            format_version: MODEL_FORMAT_VERSION,
            activation: m.activation,
            needs_retraining: m.needs_retraining,
            scaling: m.scaling.clone(),
            layers: m
                .layers
                .iter()
                .map(|l| LayerRecord {
                    rows: l.outputs(),
                    cols: l.inputs(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
            metadata: BTreeMap::new(),
        }
    }
}

impl ModelFile {
    fn into_model(self) -> Result<MlpModel, NetworkError> {
        if self.format != MODEL_FORMAT {
            return Err(NetworkError::Format(format!("unknown format '{}'", self.format)));
        }
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(NetworkError::Format(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        let layers = self
            .layers
            .into_iter()
            .map(|r| {
                let w = Array2::from_shape_vec((r.rows, r.cols), r.weights)
                    .map_err(|e| NetworkError::Format(e.to_string()))?;
                Ok(Dense::new(w, Array1::from(r.bias)))
            })
            .collect::<Result<Vec<_>, NetworkError>>()?;
        let mut model = MlpModel::from_layers(layers, self.activation, self.scaling)?;
        model.needs_retraining = self.needs_retraining;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64, dims: &[usize], act: Activation) -> MlpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = MlpModel::new(2, dims, act, &mut rng).unwrap();
        for layer in m.layers_mut() {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        m
    }

    #[test]
    fn parameter_round_trip_and_parametric_recording() {
        let m = random_model(4, &[3, 2], Activation::Silu);
        let p = m.parameters();
        assert_eq!(p.len(), m.parameter_count());
        let mut z = m.clone();
        z.set_parameters(&vec![0.0; p.len()]).unwrap();
        assert_eq!(z.forward(&[0.3, -0.2]).unwrap(), 0.0);
        z.set_parameters(&p).unwrap();
        assert_eq!(z, m);
        assert!(z.set_parameters(&p[1..]).is_err());

        let x = [0.4, 1.1];
        let mut t = Tape::<f64>::new();
        let xi: Vec<Var> = x.iter().map(|&v| t.input(v)).collect();
        let pv: Vec<Var> = p.iter().map(|&v| t.input(v)).collect();
        let rec = m.record_with_parameters(&mut t, &xi, &pv).unwrap();
        assert_eq!(t.value(rec.output), m.forward(&x).unwrap());
        t.set_output(rec.output);
        let g = t.reverse(1.0).unwrap().of(&pv);
        // d out / d (output bias) = y_std = 1
        assert_eq!(*g.last().unwrap(), 1.0);
        let h = 1e-6;
        for i in [0, 5, 9] {
            let mut a = m.clone();
            let mut q = p.clone();
            q[i] += h;
            a.set_parameters(&q).unwrap();
            let up = a.forward(&x).unwrap();
            q[i] -= 2.0 * h;
            a.set_parameters(&q).unwrap();
            let fd = (up - a.forward(&x).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn worked_example_enclosure() {
        let m = worked_example();
        let b = Interval::new(1.0, 10.0).unwrap();
        let (out, enc) = m.forward_interval(&[b, b]).unwrap();
        assert!((out.lo() - 1.369).abs() < 1e-3 && (out.hi() - 3.703).abs() < 1e-3);
        assert_eq!(enc.adjoint[1][0], Interval::point(0.4287));
        assert_eq!(enc.adjoint[1][1], Interval::point(1.3663));
    }

    #[test]
    fn constant_and_linear_models() {
        let m = MlpModel::from_layers(
            vec![
                Dense::new(array![[0.0, 0.0]], array![0.0]),
                Dense::new(array![[0.0]], array![1.5]),
            ],
            Activation::Silu,
            Scaling::identity(2),
        )
        .unwrap();
        assert_eq!(m.forward(&[3.0, -2.0]).unwrap(), 1.5);
        assert_eq!(m.forward(&[100.0, 7.0]).unwrap(), 1.5);

        let lin = MlpModel::from_layers(
            vec![
                Dense::new(array![[2.0]], array![0.0]),
                Dense::new(array![[1.0]], array![0.0]),
            ],
            Activation::Identity,
            Scaling::identity(1),
        )
        .unwrap();
        assert_eq!(lin.forward(&[3.0]).unwrap(), 6.0);
        assert_eq!(lin.input_gradient(&[3.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            MlpModel::new(2, &[], Activation::Silu, &mut rng),
            Err(NetworkError::NoHiddenLayer)
        );
        let m = random_model(1, &[3], Activation::Silu);
        assert!(matches!(m.forward(&[1.0]), Err(NetworkError::Dimension { .. })));
        let bad = MlpModel::from_layers(
            vec![
                Dense::new(array![[1.0, 2.0]], array![0.0]),
                Dense::new(array![[1.0, 1.0]], array![0.0]),
            ],
            Activation::Relu,
            Scaling::identity(2),
        );
        assert!(matches!(bad, Err(NetworkError::LayerShape { .. })));
        let nan = MlpModel::from_layers(
            vec![
                Dense::new(array![[f64::NAN]], array![0.0]),
                Dense::new(array![[1.0]], array![0.0]),
            ],
            Activation::Relu,
            Scaling::identity(1),
        );
        assert_eq!(nan, Err(NetworkError::NonFinite(0)));
    }

    #[test]
    fn parameter_count_of_the_oversized_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in [1usize, 5] {
            let model = MlpModel::new(m, &[128; 6], Activation::Silu, &mut rng).unwrap();
            let expect = m * 128 + 128 + 5 * (128 * 128 + 128) + 128 + 1;
            assert_eq!(model.parameter_count(), expect);
        }
    }

    #[test]
    fn tape_forward_is_bitwise_identical() {
        for (seed, act) in [(1, Activation::Silu), (2, Activation::Relu)] {
            let mut m = random_model(seed, &[5, 4], act);
            m.set_scaling(Scaling {
                x_mean: vec![100.0, 3.0],
                x_std: vec![5.0, 0.5],
                y_mean: 4.0,
                y_std: 2.5,
            })
            .unwrap();
            let x = [101.3, 2.2];
            let mut tape = Tape::<f64>::new();
            let vars: Vec<Var> = x.iter().map(|&v| tape.input(v)).collect();
            let rec = m.record(&mut tape, &vars).unwrap();
            assert_eq!(tape.value(rec.output).to_bits(), m.forward(&x).unwrap().to_bits());
            tape.set_output(rec.output);
            let adj = tape.reverse(1.0).unwrap();
            let g = m.input_gradient(&x).unwrap();
            for (a, b) in adj.of(&vars).iter().zip(&g) {
                assert!((a - b).abs() <= 1e-13 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn degenerate_box_matches_point_evaluation() {
        let m = random_model(5, &[6, 3], Activation::Silu);
        let x = [5.0, 5.0];
        let (out, enc) = m
            .forward_interval(&[Interval::point(5.0), Interval::point(5.0)])
            .unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(out.lo(), y);
        assert_eq!(out.hi(), y);
        assert!(enc.post[0].iter().all(|n| n.width() == 0.0));
    }

    #[test]
    fn prune_zero_outgoing_node_is_exact() {
        let mut m = random_model(9, &[4, 3], Activation::Silu);
        m.layers_mut()[1].weights.column_mut(2).fill(0.0);
        let box_ = [Interval::new(-1.0, 1.0).unwrap(), Interval::new(0.0, 2.0).unwrap()];
        let (_, enc) = m.forward_interval(&box_).unwrap();
        let pruned = m.prune_node(0, 2, &enc).unwrap();
        assert_eq!(pruned.hidden_widths(), vec![3, 3]);
        for x in [[-0.3, 0.1], [0.9, 1.7], [0.0, 0.0]] {
            assert_eq!(pruned.forward(&x).unwrap(), m.forward(&x).unwrap());
        }
    }

    #[test]
    fn prune_constant_node_is_lossless() {
        // node 1 of the hidden layer has zero incoming weights: constant silu(0.7)
        let m = MlpModel::from_layers(
            vec![
                Dense::new(array![[1.0], [0.0]], array![0.0, 0.7]),
                Dense::new(array![[0.5, -2.0]], array![0.1]),
            ],
            Activation::Silu,
            Scaling::identity(1),
        )
        .unwrap();
        let (_, enc) = m.forward_interval(&[Interval::new(-2.0, 3.0).unwrap()]).unwrap();
        assert!(enc.post[0][1].is_point());
        let pruned = m.prune_node(0, 1, &enc).unwrap();
        for x in [-2.0, -0.5, 0.0, 1.0, 3.0] {
            let d = (pruned.forward(&[x]).unwrap() - m.forward(&[x]).unwrap()).abs();
            assert!(d < 1e-15, "{d}");
        }
    }

    #[test]
    fn prune_errors() {
        let m = random_model(4, &[3, 1], Activation::Silu);
        let box_ = [Interval::new(0.0, 1.0).unwrap(); 2];
        let (_, enc) = m.forward_interval(&box_).unwrap();
        assert!(matches!(m.prune_node(2, 0, &enc), Err(NetworkError::NotHidden { .. })));
        assert_eq!(m.prune_node(1, 0, &enc), Err(NetworkError::SingletonLayer(1)));
        assert!(matches!(m.prune_node(0, 7, &enc), Err(NetworkError::NodeOutOfRange { .. })));
        let mut other = m.clone();
        other.layers_mut()[0].bias[0] += 1.0;
        assert_eq!(other.prune_node(0, 0, &enc), Err(NetworkError::StaleEnclosures));
    }

    #[test]
    fn removing_identity_layers_is_exact() {
        let m = MlpModel::from_layers(
            vec![
                Dense::new(array![[1.0, -2.0], [0.5, 3.0]], array![0.25, -1.0]),
                Dense::new(array![[2.0, 1.0], [-1.0, 4.0], [0.0, 1.0]], array![0.5, 0.0, 2.0]),
                Dense::new(array![[1.0, -1.0, 0.5]], array![3.0]),
            ],
            Activation::Identity,
            Scaling::identity(2),
        )
        .unwrap();
        let reduced = m.remove_layer(1).unwrap();
        assert_eq!(reduced.hidden_widths(), vec![2]);
        assert!(reduced.needs_retraining());
        for x in [[0.0, 0.0], [1.0, -2.0], [3.5, 0.25]] {
            let d = (reduced.forward(&x).unwrap() - m.forward(&x).unwrap()).abs();
            assert!(d < 1e-12);
        }
        let single = reduced.clone();
        assert_eq!(single.remove_layer(0), Err(NetworkError::OnlyHiddenLayer));
    }

    #[test]
    fn removing_positive_relu_bottleneck_is_exact() {
        // width-1 ReLU layer whose pre-activation stays positive on the box
        let m = MlpModel::from_layers(
            vec![
                Dense::new(array![[0.3, 0.2], [-0.4, 0.1]], array![0.1, 0.2]),
                Dense::new(array![[1.0, 0.5]], array![1.0]),
                Dense::new(array![[2.0], [-1.0]], array![0.0, 0.3]),
                Dense::new(array![[1.0, 1.0]], array![0.0]),
            ],
            Activation::Relu,
            Scaling::identity(2),
        )
        .unwrap();
        let box_ = [Interval::new(0.0, 1.0).unwrap(); 2];
        let (_, enc) = m.forward_interval(&box_).unwrap();
        assert!(enc.pre[1][0].lo() > 0.0);
        let reduced = m.remove_layer(1).unwrap();
        for i in 0..=20 {
            for j in 0..=20 {
                let x = [i as f64 / 20.0, j as f64 / 20.0];
                let d = (reduced.forward(&x).unwrap() - m.forward(&x).unwrap()).abs();
                assert!(d < 1e-12);
            }
        }
    }

    #[test]
    fn model_file_round_trip_is_bitwise() {
        let mut m = random_model(11, &[7, 5, 3], Activation::Silu);
        m.set_scaling(Scaling {
            x_mean: vec![0.1, 1.0 / 3.0],
            x_std: vec![2.0_f64.sqrt(), 7.0],
            y_mean: -0.7,
            y_std: std::f64::consts::PI,
        })
        .unwrap();
        let back = MlpModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.fingerprint(), m.fingerprint());
        let meta: BTreeMap<String, String> = [("config_hash".to_string(), "abc".to_string())].into();
        let (back, got) = MlpModel::from_bytes_with_metadata(&m.to_bytes_with_metadata(&meta)).unwrap();
        assert_eq!(back, m);
        assert_eq!(got, meta);
        assert!(matches!(MlpModel::from_bytes(b"{not json"), Err(NetworkError::Format(_))));
        let text = String::from_utf8(m.to_bytes()).unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
        assert!(matches!(MlpModel::from_bytes(text.as_bytes()), Err(NetworkError::Format(_))));
    }
}
