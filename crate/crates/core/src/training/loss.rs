//! Batched value and Sobolev objectives in standardized coordinates.
//!
//! The Sobolev term differentiates through the network's input gradient
//! (double backpropagation). It is written out layer by layer on whole
//! batches rather than replayed on a tape; the tape version serves as the
//! test oracle.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use super::TrainingError;
use crate::market::Dataset;
use crate::network::{MlpModel, Scaling};

/// Samples per parallel work item. Fixed so that results do not depend on the
/// thread count.
const CHUNK: usize = 64;

/// Training targets mapped through a model's [`Scaling`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedData {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub dydx: Option<Array2<f64>>,
}

impl NormalizedData {
    pub fn new(dataset: &Dataset, scaling: &Scaling) -> Self {
        let mut d = Self::value_only(dataset, scaling);
        let n = dataset.len();
        let dim = dataset.dim();
        let mut dydx = Array2::zeros((n, dim));
        for (mut row, s) in dydx.rows_mut().into_iter().zip(dataset.samples()) {
            for (r, v) in row.iter_mut().zip(scaling.normalize_dydx(&s.dydx)) {
                *r = v;
            }
        }
        d.dydx = Some(dydx);
        d
    }

    /// Drops the derivative targets.
    pub fn value_only(dataset: &Dataset, scaling: &Scaling) -> Self {
        let n = dataset.len();
        let dim = dataset.dim();
        let mut x = Array2::zeros((n, dim));
        for (mut row, s) in x.rows_mut().into_iter().zip(dataset.samples()) {
            for (r, v) in row.iter_mut().zip(scaling.normalize_x(&s.x)) {
                *r = v;
            }
        }
        let y = dataset.samples().iter().map(|s| scaling.normalize_y(s.y)).collect();
        NormalizedData { x, y, dydx: None }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Per-term weights: reciprocal target variances, so that λ = 1 balances
/// the value and derivative terms independently of units.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub value: f64,
    pub deriv: Vec<f64>,
}

impl LossWeights {
    pub fn unit(dim: usize) -> Self {
        LossWeights {
            value: 1.0,
            deriv: vec![1.0; dim],
        }
    }

    pub fn fit(data: &NormalizedData) -> Self {
        let inv = |v: f64| if v > 0.0 && v.is_finite() { 1.0 / v } else { 1.0 };
        let dim = data.x.ncols();
        let deriv = match &data.dydx {
            Some(d) => d.axis_iter(Axis(1)).map(|c| inv(c.var(0.0))).collect(),
            None => vec![1.0; dim],
        };
        LossWeights {
            value: inv(data.y.var(0.0)),
            deriv,
        }
    }
}

/// Batch-averaged loss split into its terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub value: f64,
    /// Weighted derivative term before multiplication by λ.
    pub deriv: f64,
}

struct ChunkResult {
    value_sum: f64,
    deriv_sum: f64,
    grad: Vec<f64>,
}

/// Value-only objective `(1/B)·Σ w_v (N(x) − y)²` and its parameter gradient.
pub fn mse_loss(
    model: &MlpModel,
    data: &NormalizedData,
    batch: &[usize],
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>), TrainingError> {
    objective(model, data, batch, weights, None)
}

/// Sobolev objective `(1/B)·Σ [w_v (N(x) − y)² + λ Σⱼ w_j (∂ⱼN(x) − ∂ⱼy)²]`
/// and its parameter gradient. With `λ = 0` the derivative branch is skipped
/// entirely, so the result is identical to [`mse_loss`].
pub fn sobolev_loss(
    model: &MlpModel,
    data: &NormalizedData,
    batch: &[usize],
    weights: &LossWeights,
    lambda: f64,
) -> Result<(LossBreakdown, Vec<f64>), TrainingError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(TrainingError::InvalidConfig(format!("lambda {lambda} must be >= 0")));
    }
    if lambda > 0.0 && data.dydx.is_none() {
        return Err(TrainingError::MissingDerivatives);
    }
    objective(model, data, batch, weights, (lambda > 0.0).then_some(lambda))
}

fn objective(
    model: &MlpModel,
    data: &NormalizedData,
    batch: &[usize],
    weights: &LossWeights,
    lambda: Option<f64>,
) -> Result<(LossBreakdown, Vec<f64>), TrainingError> {
    if batch.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    if data.x.ncols() != model.input_dim() || weights.deriv.len() != model.input_dim() {
        return Err(TrainingError::Length {
            expected: model.input_dim(),
            got: data.x.ncols(),
        });
    }
    let inv_b = 1.0 / batch.len() as f64;
    let chunks: Vec<ChunkResult> = batch
        .par_chunks(CHUNK)
        .map(|idx| chunk(model, data, idx, weights, lambda, inv_b))
        .collect();
    let mut grad = vec![0.0; model.parameter_count()];
    let (mut value_sum, mut deriv_sum) = (0.0, 0.0);
    for c in chunks {
        value_sum += c.value_sum;
        deriv_sum += c.deriv_sum;
        grad.iter_mut().zip(&c.grad).for_each(|(g, d)| *g += d);
    }
    let value = value_sum * inv_b;
    let deriv = deriv_sum * inv_b;
    let total = match lambda {
        Some(l) => value + l * deriv,
        None => value,
    };
    Ok((LossBreakdown { total, value, deriv }, grad))
}

fn chunk(
    model: &MlpModel,
    data: &NormalizedData,
    idx: &[usize],
    weights: &LossWeights,
    lambda: Option<f64>,
    inv_b: f64,
) -> ChunkResult {
    let act = model.activation();
    let layers = model.layers();
    let h = model.num_hidden();
    let x = data.x.select(Axis(0), idx);

    // forward: inputs[k] feeds layer k, zs[k] is its pre-activation
    let mut inputs = Vec::with_capacity(h + 1);
    let mut zs: Vec<Array2<f64>> = Vec::with_capacity(h + 1);
    let mut d1: Vec<Array2<f64>> = Vec::with_capacity(h);
    inputs.push(x);
    for (k, layer) in layers.iter().enumerate() {
        let mut z = inputs[k].dot(&layer.weights.t());
        z += &layer.bias;
        if k < h {
            inputs.push(z.mapv(|v| act.apply(v)));
            d1.push(z.mapv(|v| act.deriv(v)));
        }
        zs.push(z);
    }

    let mut zbar: Vec<Array2<f64>> = zs.iter().map(|z| Array2::zeros(z.raw_dim())).collect();
    let mut wbar: Vec<Array2<f64>> = layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect();

    let y = data.y.select(Axis(0), idx);
    let resid = &zs[h].column(0) - &y;
    let value_sum = weights.value * resid.dot(&resid);
    zbar[h]
        .column_mut(0)
        .assign(&(&resid * (2.0 * weights.value * inv_b)));

    let mut deriv_sum = 0.0;
    if let Some(lambda) = lambda {
        let targets = data.dydx.as_ref().expect("checked by caller").select(Axis(0), idx);
        // gs[k] = ∂N/∂zs[k], hs[k] = ∂N/∂inputs[k]
        let n = idx.len();
        let mut gs: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); h + 1];
        let mut hs: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); h + 1];
        gs[h] = Array2::ones((n, 1));
        for k in (0..=h).rev() {
            hs[k] = gs[k].dot(&layers[k].weights);
            if k > 0 {
                gs[k - 1] = &d1[k - 1] * &hs[k];
            }
        }
        let rd = &hs[0] - &targets;
        let wd = Array1::from(weights.deriv.clone());
        let weighted = &rd * &wd;
        deriv_sum = (&weighted * &rd).sum();
        let mut hbar = weighted * (2.0 * lambda * inv_b);
        for k in 0..=h {
            wbar[k] += &gs[k].t().dot(&hbar);
            if k < h {
                let gbar = hbar.dot(&layers[k].weights.t());
                let d2 = zs[k].mapv(|v| act.second_deriv(v));
                zbar[k] += &(&d2 * &hs[k + 1] * &gbar);
                hbar = &d1[k] * &gbar;
            }
        }
    }

    let mut grad = Vec::with_capacity(model.parameter_count());
    let mut bbar: Vec<Array1<f64>> = Vec::with_capacity(h + 1);
    for k in (0..=h).rev() {
        wbar[k] += &zbar[k].t().dot(&inputs[k]);
        bbar.push(zbar[k].sum_axis(Axis(0)));
        if k > 0 {
            let back = zbar[k].dot(&layers[k].weights);
            let add = &d1[k - 1] * &back;
            zbar[k - 1] += &add;
        }
    }
    bbar.reverse();
    for (w, b) in wbar.iter().zip(&bbar) {
        grad.extend(w.iter());
        grad.extend(b.iter());
    }
    ChunkResult {
        value_sum,
        deriv_sum,
        grad,
    }
}
