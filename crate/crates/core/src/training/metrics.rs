use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::market::BasketConfig;
use crate::network::MlpModel;

/// Coefficient of determination `1 − SS_res/SS_tot`.
pub fn r2_score(predictions: &[f64], targets: &[f64]) -> Result<f64, TrainingError> {
    if predictions.len() != targets.len() {
        return Err(TrainingError::Length {
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    if targets.len() < 2 {
        return Err(TrainingError::ConstantTargets);
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    if !(ss_tot > 0.0) {
        return Err(TrainingError::ConstantTargets);
    }
    let ss_res: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (t - p) * (t - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Anything that prices a basket and differentiates with respect to the forwards.
pub trait Surrogate {
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>), TrainingError>;
}

impl Surrogate for MlpModel {
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>), TrainingError> {
        Ok(MlpModel::value_and_gradient(self, x)?)
    }
}

/// The closed-form price itself, wrapped as a surrogate.
#[derive(Debug, Clone)]
pub struct AnalyticOracle<'a>(pub &'a BasketConfig);

impl Surrogate for AnalyticOracle<'_> {
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>), TrainingError> {
        Ok((self.0.analytic_price(x)?, self.0.analytic_delta(x)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub spot: f64,
    pub value_true: f64,
    pub value_pred: f64,
    pub delta_true: f64,
    pub delta_pred: f64,
    pub gamma_true: f64,
    pub gamma_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub values_r2: f64,
    pub deltas_r2: f64,
    pub gammas_r2: f64,
    pub grid: usize,
    #[serde(skip)]
    pub points: Vec<EvalPoint>,
}

/// Compares a surrogate with the analytic price, Delta and Gamma on `grid`
/// uniformly spaced basket levels spanning the spot box. Every asset starts
/// at the basket level, so Delta and Gamma are taken along the all-ones
/// direction (for one asset these are the ordinary Greeks). Predicted Gamma
/// is a central difference of predicted Delta with step `1e-3·width`.
pub fn evaluate<S: Surrogate + ?Sized>(
    model: &S,
    cfg: &BasketConfig,
    grid: usize,
) -> Result<EvaluationReport, TrainingError> {
    if grid < 2 {
        return Err(TrainingError::GridTooSmall(grid));
    }
    cfg.validate()?;
    let (lo, width) = (cfg.spot_box.lo(), cfg.spot_box.width());
    let h = 1e-3 * width;
    let m = cfg.assets();
    let delta_at = |b: f64| -> Result<f64, TrainingError> {
        Ok(model.value_and_gradient(&vec![b; m])?.1.iter().sum())
    };
    let mut points = Vec::with_capacity(grid);
    for i in 0..grid {
        let spot = lo + width * i as f64 / (grid - 1) as f64;
        let x = vec![spot; m];
        let (value_pred, g) = model.value_and_gradient(&x)?;
        let gamma_pred = (delta_at(spot + h)? - delta_at(spot - h)?) / (2.0 * h);
        points.push(EvalPoint {
            spot,
            value_true: cfg.analytic_price(&x)?,
            value_pred,
            delta_true: cfg.analytic_delta(&x)?.iter().sum(),
            delta_pred: g.iter().sum(),
            gamma_true: cfg.analytic_basket_gamma(&x)?,
            gamma_pred,
        });
    }
    let col = |f: fn(&EvalPoint) -> f64| points.iter().map(f).collect::<Vec<f64>>();
    Ok(EvaluationReport {
        values_r2: r2_score(&col(|p| p.value_pred), &col(|p| p.value_true))?,
        deltas_r2: r2_score(&col(|p| p.delta_pred), &col(|p| p.delta_true))?,
        gammas_r2: r2_score(&col(|p| p.gamma_pred), &col(|p| p.gamma_true))?,
        grid,
        points,
    })
}

/// Writes the per-point evaluation grid as CSV.
pub fn write_points_csv<W: std::io::Write>(points: &[EvalPoint], out: W) -> Result<(), TrainingError> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p).map_err(|e| TrainingError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| TrainingError::Io(e.to_string()))?;
    Ok(())
}
