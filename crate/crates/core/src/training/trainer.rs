use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{mse_loss, sobolev_loss, LossBreakdown, LossWeights, NormalizedData};
use super::{AdamState, OneCycleConfig, TrainingError};
use crate::market::{Dataset, TrainingSample};
use crate::network::MlpModel;

/// Plain least-squares training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Only the shape is used; the step count is derived from the dataset.
    pub schedule: OneCycleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 256,
            schedule: OneCycleConfig::default(),
        }
    }
}

/// Where the derivative labels of a Sobolev dataset come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeSource {
    /// Pathwise derivatives sampled from the market model.
    ReferenceModel,
    /// Input gradients of a frozen teacher network.
    TeacherNetwork,
}

impl std::str::FromStr for DerivativeSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reference" | "reference-model" => Ok(DerivativeSource::ReferenceModel),
            "nn" | "teacher" | "teacher-network" => Ok(DerivativeSource::TeacherNetwork),
            other => Err(format!("unknown derivative source '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevConfig {
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub source: DerivativeSource,
}

impl Default for SobolevConfig {
    fn default() -> Self {
        SobolevConfig {
            lambda: 1.0,
            batch_size: 256,
            epochs: 100,
            source: DerivativeSource::ReferenceModel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub train_loss: f64,
    pub value_loss: f64,
    pub deriv_loss: f64,
}

/// Fits `model` to the dataset values only.
pub fn train_mse(
    model: &MlpModel,
    dataset: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(MlpModel, Vec<EpochLog>), TrainingError> {
    fit(model, dataset, cfg.epochs, cfg.batch_size, &cfg.schedule, None, seed)
}

/// Fits values and input gradients jointly with weight `cfg.lambda` on the
/// derivative term.
pub fn train_sobolev(
    model: &MlpModel,
    dataset: &Dataset,
    cfg: &SobolevConfig,
    schedule: &OneCycleConfig,
    seed: u64,
) -> Result<(MlpModel, Vec<EpochLog>), TrainingError> {
    if !(cfg.lambda >= 0.0) {
        return Err(TrainingError::InvalidConfig(format!("lambda {} must be >= 0", cfg.lambda)));
    }
    fit(model, dataset, cfg.epochs, cfg.batch_size, schedule, Some(cfg.lambda), seed)
}

/// Labels `xs` with a frozen teacher's values and input gradients.
pub fn teacher_dataset(teacher: &MlpModel, xs: &[Vec<f64>]) -> Result<Dataset, TrainingError> {
    let samples = xs
        .iter()
        .map(|x| {
            let (y, dydx) = teacher.value_and_gradient(x)?;
            Ok(TrainingSample {
                x: x.clone(),
                y,
                dydx,
            })
        })
        .collect::<Result<Vec<_>, TrainingError>>()?;
    Ok(Dataset::new(samples)?)
}

fn fit(
    model: &MlpModel,
    dataset: &Dataset,
    epochs: usize,
    batch_size: usize,
    schedule: &OneCycleConfig,
    lambda: Option<f64>,
    seed: u64,
) -> Result<(MlpModel, Vec<EpochLog>), TrainingError> {
    if dataset.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(TrainingError::InvalidConfig("batch size must be at least 1".into()));
    }
    if dataset.dim() != model.input_dim() {
        return Err(TrainingError::Length {
            expected: model.input_dim(),
            got: dataset.dim(),
        });
    }
    let data = match lambda {
        Some(_) => NormalizedData::new(dataset, model.scaling()),
        None => NormalizedData::value_only(dataset, model.scaling()),
    };
    // the weights depend only on the targets, so λ = 0 and plain MSE agree
    let weights = LossWeights {
        value: LossWeights::fit(&data).value,
        deriv: match lambda {
            Some(_) => LossWeights::fit(&data).deriv,
            None => vec![1.0; dataset.dim()],
        },
    };
    let batches = dataset.len().div_ceil(batch_size);
    let schedule = schedule.with_total_steps(epochs * batches);
    schedule.validate()?;

    let mut model = model.clone();
    let mut params = model.parameters();
    let mut adam = AdamState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(epochs);
    let mut step = 0;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut acc = LossBreakdown::default();
        let mut lr = 0.0;
        for batch in order.chunks(batch_size) {
            let (loss, grad) = match lambda {
                None => mse_loss(&model, &data, batch, &weights)?,
                Some(l) => sobolev_loss(&model, &data, batch, &weights, l)?,
            };
            if !loss.total.is_finite() {
                return Err(TrainingError::Diverged { epoch });
            }
            let frac = batch.len() as f64 / dataset.len() as f64;
            acc.total += loss.total * frac;
            acc.value += loss.value * frac;
            acc.deriv += loss.deriv * frac;
            lr = schedule.lr_at(step)?;
            adam.step(&mut params, &grad, lr)?;
            model.set_parameters(&params)?;
            step += 1;
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(TrainingError::Diverged { epoch });
        }
        log::debug!(
            "epoch {epoch} lr {lr:.3e} loss {:.6e} value {:.6e} deriv {:.6e}",
            acc.total,
            acc.value,
            acc.deriv
        );
        log.push(EpochLog {
            epoch,
            lr,
            train_loss: acc.total,
            value_loss: acc.value,
            deriv_loss: acc.deriv,
        });
    }
    if let Some(last) = log.last() {
        log::info!("trained {epochs} epochs, final loss {:.6e}", last.train_loss);
    }
    model.mark_trained();
    Ok((model, log))
}

/// Writes a training log as CSV.
pub fn write_log_csv<W: std::io::Write>(log: &[EpochLog], out: W) -> Result<(), TrainingError> {
    let mut w = csv::Writer::from_writer(out);
    for row in log {
        w.serialize(row).map_err(|e| TrainingError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| TrainingError::Io(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Dense, Scaling};
    use ndarray::array;
    use rand::Rng;

    fn line_data(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let x = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                TrainingSample {
                    x: vec![x],
                    y: 2.0 * x,
                    dydx: vec![2.0],
                }
            })
            .collect();
        Dataset::new(samples).unwrap()
    }

    #[test]
    fn realizable_linear_target() {
        // identity hidden layer: the network is affine
        let m = MlpModel::from_layers(
            vec![
                Dense::new(array![[0.3]], array![0.1]),
                Dense::new(array![[0.5]], array![0.0]),
            ],
            Activation::Identity,
            Scaling::identity(1),
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 16,
            schedule: OneCycleConfig::default(),
        };
        let (fitted, log) = train_mse(&m, &line_data(64), &cfg, 3).unwrap();
        assert_eq!(log.len(), 200);
        let mse: f64 = (0..64)
            .map(|i| {
                let x = -1.0 + 2.0 * i as f64 / 63.0;
                (fitted.forward(&[x]).unwrap() - 2.0 * x).powi(2)
            })
            .sum::<f64>()
            / 64.0;
        assert!(mse < 1e-6, "mse {mse}");
    }

    #[test]
    fn quadratic_sobolev_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<TrainingSample> = (0..512)
            .map(|_| {
                let x: f64 = rng.random_range(-1.0..1.0);
                TrainingSample {
                    x: vec![x],
                    y: x * x,
                    dydx: vec![2.0 * x],
                }
            })
            .collect();
        let ds = Dataset::new(samples).unwrap();
        let mut m = MlpModel::new(1, &[16, 16], Activation::Silu, &mut rng).unwrap();
        m.set_scaling(Scaling::fit(&ds.xs(), &ds.ys())).unwrap();
        let cfg = SobolevConfig {
            lambda: 1.0,
            batch_size: 32,
            epochs: 150,
            source: DerivativeSource::ReferenceModel,
        };
        let sched = OneCycleConfig {
            peak: 0.01,
            start: 4e-4,
            ..OneCycleConfig::default()
        };
        let (fitted, _) = train_sobolev(&m, &ds, &cfg, &sched, 1).unwrap();
        let (mut ve, mut de) = (0.0, 0.0);
        for i in 0..101 {
            let x = -0.95 + 1.9 * i as f64 / 100.0;
            let (v, g) = fitted.value_and_gradient(&[x]).unwrap();
            ve += (v - x * x).powi(2) / 101.0;
            de += (g[0] - 2.0 * x).powi(2) / 101.0;
        }
        assert!(ve < 1e-4 && de < 1e-4, "value {ve} deriv {de}");
    }

    #[test]
    fn same_seed_same_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = MlpModel::new(1, &[8], Activation::Silu, &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 10,
            schedule: OneCycleConfig::default(),
        };
        let a = train_mse(&m, &line_data(50), &cfg, 5).unwrap();
        let b = train_mse(&m, &line_data(50), &cfg, 5).unwrap();
        assert_eq!(a.0.parameters(), b.0.parameters());
        let c = train_mse(&m, &line_data(50), &cfg, 6).unwrap();
        assert_ne!(a.0.parameters(), c.0.parameters());
    }

    #[test]
    fn zero_lambda_reproduces_mse_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = MlpModel::new(1, &[6, 6], Activation::Silu, &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 7,
            schedule: OneCycleConfig::default(),
        };
        let scfg = SobolevConfig {
            lambda: 0.0,
            batch_size: 7,
            epochs: 4,
            source: DerivativeSource::ReferenceModel,
        };
        let (a, la) = train_mse(&m, &line_data(40), &cfg, 1).unwrap();
        let (b, lb) = train_sobolev(&m, &line_data(40), &scfg, &cfg.schedule, 1).unwrap();
        assert_eq!(a, b);
        for (x, y) in la.iter().zip(&lb) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        }
    }

    #[test]
    fn divergence_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = MlpModel::new(1, &[4], Activation::Silu, &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 8,
            schedule: OneCycleConfig {
                peak: 1e300,
                ..OneCycleConfig::default()
            },
        };
        let r = train_mse(&m, &line_data(32), &cfg, 0);
        assert!(
            matches!(r, Err(TrainingError::Diverged { .. }) | Err(TrainingError::NonFiniteGradient(_))),
            "{r:?}"
        );
    }

    #[test]
    fn teacher_labels_come_from_the_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = MlpModel::new(2, &[5], Activation::Silu, &mut rng).unwrap();
        let xs = vec![vec![0.1, 0.2], vec![-1.0, 3.0]];
        let ds = teacher_dataset(&t, &xs).unwrap();
        for (s, x) in ds.samples().iter().zip(&xs) {
            let (y, g) = t.value_and_gradient(x).unwrap();
            assert_eq!(s.y, y);
            assert_eq!(s.dydx, g);
        }
    }
}
