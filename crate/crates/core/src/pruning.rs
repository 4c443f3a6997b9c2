//! Interval adjoint significance analysis and the structured pruning loop.
//!
//! The significance of hidden node `(l, i)` over an input box is
//! `width([n]) · max|[n̄]|`: the spread of the node's value over the box times
//! the largest sensitivity of the output to it. Nodes that barely vary or
//! barely matter are replaced by a constant folded into the next bias.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::Interval;
use crate::market::Dataset;
use crate::network::{MlpModel, NetworkError, NodeEnclosures};
use crate::training::{TrainConfig, TrainingError};

#[derive(Debug, Error)]
pub enum PruningError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error("invalid prune configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Significance of one hidden node together with the enclosures it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeSignificance {
    pub significance: f64,
    pub enclosure: Interval,
    pub adjoint: Interval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceReport {
    /// Indexed by hidden layer, then node.
    pub layers: Vec<Vec<NodeSignificance>>,
    pub output: Interval,
    pub enclosures: NodeEnclosures,
}

impl SignificanceReport {
    /// Least significant node of `layer`; ties go to the lowest index.
    pub fn least(&self, layer: usize) -> Option<usize> {
        let nodes = self.layers.get(layer)?;
        let mut best: Option<(usize, f64)> = None;
        for (i, n) in nodes.iter().enumerate() {
            if best.is_none_or(|(_, s)| n.significance < s) {
                best = Some((i, n.significance));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Least significant node over the layers accepted by `eligible`; ties go
    /// to the shallowest layer, then the lowest index.
    pub fn global_least(&self, eligible: impl Fn(usize) -> bool) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for l in (0..self.layers.len()).filter(|&l| eligible(l)) {
            if let Some(i) = self.least(l) {
                let s = self.layers[l][i].significance;
                if best.is_none_or(|(_, _, b)| s < b) {
                    best = Some((l, i, s));
                }
            }
        }
        best.map(|(l, i, _)| (l, i))
    }
}

/// One interval forward and reverse pass over `input_box`.
pub fn significance(model: &MlpModel, input_box: &[Interval]) -> Result<SignificanceReport, PruningError> {
    let (output, enc) = model.forward_interval(input_box)?;
    let layers = enc
        .post
        .iter()
        .zip(&enc.adjoint)
        .map(|(post, adj)| {
            post.iter()
                .zip(adj)
                .map(|(&n, &a)| NodeSignificance {
                    significance: n.width() * a.max_abs(),
                    enclosure: n,
                    adjoint: a,
                })
                .collect()
        })
        .collect();
    Ok(SignificanceReport {
        layers,
        output,
        enclosures: enc,
    })
}

/// Removes `node` of `layer`, folding its value into the next bias as chosen by `mode`.
pub fn prune_with(
    model: &MlpModel,
    report: &SignificanceReport,
    layer: usize,
    node: usize,
    mode: Compensation,
    points: &[Vec<f64>],
) -> Result<MlpModel, PruningError> {
    let pruned = match mode {
        Compensation::Interval => model.prune_node(layer, node, &report.enclosures)?,
        Compensation::Sampled => {
            let mut enc = report.enclosures.clone();
            enc.post = model.activation_hulls(points)?;
            model.prune_node(layer, node, &enc)?
        }
        Compensation::None => {
            let mut enc = report.enclosures.clone();
            for layer in enc.post.iter_mut() {
                layer.fill(Interval::ZERO);
            }
            model.prune_node(layer, node, &enc)?
        }
    };
    Ok(pruned)
}

/// Removes the least significant node of `layer` with bias compensation.
pub fn prune_least(
    model: &MlpModel,
    report: &SignificanceReport,
    layer: usize,
) -> Result<(MlpModel, usize), PruningError> {
    let width = model.hidden_widths().get(layer).copied().ok_or(NetworkError::NotHidden {
        layer,
        hidden: model.num_hidden(),
    })?;
    if width < 2 {
        return Err(NetworkError::SingletonLayer(layer).into());
    }
    let node = report.least(layer).ok_or(NetworkError::StaleEnclosures)?;
    Ok((model.prune_node(layer, node, &report.enclosures)?, node))
}

/// Hull of the dataset inputs, per coordinate.
pub fn input_box(dataset: &Dataset) -> Result<Vec<Interval>, PruningError> {
    (0..dataset.dim())
        .map(|j| {
            let col: Vec<f64> = dataset.samples().iter().map(|s| s.x[j]).collect();
            Interval::hull(&col).map_err(|e| PruningError::InvalidConfig(e.to_string()))
        })
        .collect()
}

/// Which node value is folded into the next layer's bias when a node goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Compensation {
    /// Midpoint of the interval enclosure from the significance pass.
    #[default]
    Interval,
    /// Midpoint of the node's observed range over `PruneConfig::sample_points`.
    /// In deep nets the interval enclosures of late layers are dominated by
    /// the wrapping effect and their midpoints can be far from any value
    /// the node actually takes.
    Sampled,
    /// Drop the node without touching the bias.
    None,
}

impl std::str::FromStr for Compensation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "interval" => Ok(Compensation::Interval),
            "sampled" => Ok(Compensation::Sampled),
            "none" => Ok(Compensation::None),
            other => Err(format!("unknown compensation '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Box over which significances are computed (the training input range).
    pub input_box: Vec<Interval>,
    /// Retraining after each cycle.
    pub retrain: TrainConfig,
    pub retrain_samples: usize,
    /// Largest tolerated drop of validation value-R² below the baseline.
    pub epsilon: f64,
    pub min_width: usize,
    /// Nodes removed per cycle before retraining; halved whenever a cycle is
    /// rejected and doubled back (up to this value) after an accepted one.
    pub nodes_per_cycle: usize,
    #[serde(default)]
    pub compensation: Compensation,
    /// Points for `Compensation::Sampled`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sample_points: Vec<Vec<f64>>,
}

impl PruneConfig {
    pub fn validate(&self) -> Result<(), PruningError> {
        if !(self.epsilon >= 0.0) {
            return Err(PruningError::InvalidConfig(format!("epsilon {} must be >= 0", self.epsilon)));
        }
        if self.min_width == 0 || self.nodes_per_cycle == 0 {
            return Err(PruningError::InvalidConfig(
                "min_width and nodes_per_cycle must be at least 1".into(),
            ));
        }
        if self.input_box.is_empty() {
            return Err(PruningError::InvalidConfig("empty input box".into()));
        }
        if self.compensation == Compensation::Sampled && self.sample_points.is_empty() {
            return Err(PruningError::InvalidConfig("sampled compensation needs sample points".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneAction {
    Prune,
    Revert,
    Freeze,
    RemoveLayer,
    RevertLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub cycle: usize,
    pub action: PruneAction,
    pub layer: usize,
    pub node: Option<usize>,
    pub significance: Option<f64>,
    pub r2_before_retrain: f64,
    pub r2_after_retrain: f64,
    pub params_remaining: usize,
}

pub fn write_history_csv<W: Write>(history: &[PruneEvent], out: W) -> Result<(), PruningError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| PruningError::Io(e.to_string());
    for e in history {
        w.serialize(e).map_err(io)?;
    }
    w.flush().map_err(|e| PruningError::Io(e.to_string()))?;
    Ok(())
}

/// Repeatedly removes the globally least significant nodes, retrains, and
/// keeps the result only if validation R² stays within `epsilon` of the
/// baseline. A rejected cycle halves the batch of nodes; a rejected single
/// node freezes its layer. Stops when every layer is frozen or at minimum width.
pub fn iterative_prune<T, V>(
    model: &MlpModel,
    cfg: &PruneConfig,
    mut trainer: T,
    mut validator: V,
) -> Result<(MlpModel, Vec<PruneEvent>), PruningError>
where
    T: FnMut(&MlpModel, usize) -> Result<MlpModel, PruningError>,
    V: FnMut(&MlpModel) -> Result<f64, PruningError>,
{
    cfg.validate()?;
    let baseline = validator(model)?;
    let threshold = baseline - cfg.epsilon;
    log::info!("pruning from widths {:?}, baseline R² {baseline:.6}", model.hidden_widths());
    let mut model = model.clone();
    let mut frozen = vec![false; model.num_hidden()];
    let mut batch = cfg.nodes_per_cycle;
    let mut history = Vec::new();
    for cycle in 0.. {
        let mut candidate = model.clone();
        let mut removed = Vec::new();
        for _ in 0..batch {
            let widths = candidate.hidden_widths();
            let eligible = |l: usize| !frozen[l] && widths[l] > cfg.min_width;
            let report = significance(&candidate, &cfg.input_box)?;
            let Some((layer, node)) = report.global_least(eligible) else {
                break;
            };
            let s = report.layers[layer][node].significance;
            candidate = prune_with(&candidate, &report, layer, node, cfg.compensation, &cfg.sample_points)?;
            removed.push((layer, node, s));
        }
        if removed.is_empty() {
            break;
        }
        let r2_before = validator(&candidate)?;
        let retrained = trainer(&candidate, cycle)?;
        let r2_after = validator(&retrained)?;
        let accepted = r2_after >= threshold;
        let action = if accepted { PruneAction::Prune } else { PruneAction::Revert };
        let params = if accepted { retrained.parameter_count() } else { model.parameter_count() };
        for &(layer, node, s) in &removed {
            history.push(PruneEvent {
                cycle,
                action,
                layer,
                node: Some(node),
                significance: Some(s),
                r2_before_retrain: r2_before,
                r2_after_retrain: r2_after,
                params_remaining: params,
            });
        }
        log::info!(
            "cycle {cycle}: {} {} node(s), R² {r2_before:.6} -> {r2_after:.6}, widths {:?}",
            if accepted { "pruned" } else { "rejected" },
            removed.len(),
            if accepted { retrained.hidden_widths() } else { model.hidden_widths() }
        );
        if accepted {
            model = retrained;
            batch = (batch * 2).min(cfg.nodes_per_cycle);
        } else if batch > 1 {
            batch /= 2;
        } else {
            let layer = removed[0].0;
            frozen[layer] = true;
            history.push(PruneEvent {
                cycle,
                action: PruneAction::Freeze,
                layer,
                node: None,
                significance: None,
                r2_before_retrain: r2_before,
                r2_after_retrain: r2_after,
                params_remaining: model.parameter_count(),
            });
        }
    }
    Ok((model, history))
}

/// Hidden layers that follow the first single-node layer, deepest first.
pub fn removable_layers(model: &MlpModel) -> Vec<usize> {
    let widths = model.hidden_widths();
    match widths.iter().position(|&w| w == 1) {
        Some(b) => (b + 1..widths.len()).rev().collect(),
        None => Vec::new(),
    }
}

/// Tries to collapse the layers behind a single-node bottleneck into linear
/// maps, retraining after each removal and reverting removals that push
/// validation R² more than `epsilon` below `baseline`.
pub fn try_remove_layers<T, V>(
    model: &MlpModel,
    cfg: &PruneConfig,
    baseline: f64,
    mut trainer: T,
    mut validator: V,
) -> Result<(MlpModel, Vec<PruneEvent>), PruningError>
where
    T: FnMut(&MlpModel, usize) -> Result<MlpModel, PruningError>,
    V: FnMut(&MlpModel) -> Result<f64, PruningError>,
{
    cfg.validate()?;
    let threshold = baseline - cfg.epsilon;
    let mut model = model.clone();
    let mut history = Vec::new();
    for (cycle, layer) in removable_layers(&model).into_iter().enumerate() {
        if model.num_hidden() < 2 {
            break;
        }
        let candidate = model.remove_layer(layer)?;
        let r2_before = validator(&candidate)?;
        let retrained = trainer(&candidate, cycle)?;
        let r2_after = validator(&retrained)?;
        let accepted = r2_after >= threshold;
        log::info!(
            "layer {layer}: {} R² {r2_before:.6} -> {r2_after:.6}",
            if accepted { "removed" } else { "kept" }
        );
        history.push(PruneEvent {
            cycle,
            action: if accepted { PruneAction::RemoveLayer } else { PruneAction::RevertLayer },
            layer,
            node: None,
            significance: None,
            r2_before_retrain: r2_before,
            r2_after_retrain: r2_after,
            params_remaining: if accepted { retrained.parameter_count() } else { model.parameter_count() },
        });
        if accepted {
            model = retrained;
        }
    }
    Ok((model, history))
}
