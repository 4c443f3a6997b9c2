use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::interval::Interval;
use crate::market::BasketConfig;
use crate::network::Activation;
use crate::pruning::Compensation;
use crate::training::{DerivativeSource, OneCycleConfig, SobolevConfig, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

/// Basket description; scalar `vol`/`correlation` apply to every asset
/// unless the explicit per-asset lists are given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub assets: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vols: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_matrix: Option<Vec<Vec<f64>>>,
    pub vol: f64,
    pub correlation: f64,
    pub maturity: f64,
    pub strike: f64,
    pub spot_lo: f64,
    pub spot_hi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train_samples: usize,
    /// Small set used for the short retraining inside pruning cycles.
    pub retrain_samples: usize,
    /// Fresh reference-model draws for Sobolev fine-tuning.
    pub reference_samples: usize,
    /// Evaluation and validation grid size.
    pub grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSection {
    pub epsilon: f64,
    pub retrain_epochs: usize,
    pub nodes_per_cycle: usize,
    pub min_width: usize,
    pub remove_layers: bool,
    #[serde(default)]
    pub compensation: Compensation,
    /// Peak learning rate of the short retraining runs; the main schedule's
    /// peak when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrain_peak: Option<f64>,
    /// Mini-batch size of the retraining runs; `train.batch_size` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrain_batch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SobolevSection {
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub peak: f64,
    pub start: f64,
    #[serde(rename = "final")]
    pub final_lr: f64,
    pub rise_fraction: f64,
}

/// Everything that determines a run. Serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub market: MarketSection,
    pub network: NetworkSection,
    pub data: DataSection,
    pub schedule: ScheduleSection,
    pub train: TrainSection,
    pub prune: PruneSection,
    pub sobolev: SobolevSection,
}

impl Default for ExperimentConfig {
    /// Five-asset basket with a 6×128 SiLU network.
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            seed: 1,
            out_dir: PathBuf::from("runs/default"),
            market: MarketSection {
                assets: 5,
                weights: None,
                vols: None,
                correlation_matrix: None,
                vol: 20.0,
                correlation: 0.5,
                maturity: 1.0,
                strike: 100.0,
                spot_lo: 90.0,
                spot_hi: 110.0,
                smoothing: None,
            },
            network: NetworkSection {
                hidden: vec![128; 6],
                activation: Activation::Silu,
            },
            data: DataSection {
                train_samples: 8192,
                retrain_samples: 2048,
                reference_samples: 8192,
                grid: 512,
            },
            schedule: ScheduleSection {
                peak: 0.1,
                start: 4e-3,
                final_lr: 1e-5,
                rise_fraction: 0.3,
            },
            train: TrainSection {
                epochs: 100,
                batch_size: 256,
            },
            prune: PruneSection {
                epsilon: 1e-3,
                retrain_epochs: 10,
                nodes_per_cycle: 1,
                min_width: 1,
                remove_layers: true,
                compensation: Compensation::Interval,
                retrain_peak: None,
                retrain_batch_size: None,
            },
            sobolev: SobolevSection {
                lambda: 1.0,
                epochs: 100,
                batch_size: 256,
            },
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML file, then applies `key.path=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, PipelineError> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::try_from(ExperimentConfig::default())
                .map_err(|e| PipelineError::Config(e.to_string()))?,
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.version != CONFIG_VERSION {
            return Err(PipelineError::Config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if i64::try_from(self.seed).is_err() {
            return Err(PipelineError::Config(format!("seed {} does not fit a TOML integer", self.seed)));
        }
        self.basket()?;
        self.schedule().validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.retrain_config()
            .schedule
            .validate()
            .map_err(|e| PipelineError::Config(format!("retrain schedule: {e}")))?;
        let d = &self.data;
        if d.train_samples == 0 || d.retrain_samples == 0 || d.reference_samples == 0 {
            return Err(PipelineError::Config("sample counts must be positive".into()));
        }
        if d.grid < 2 {
            return Err(PipelineError::Config("grid needs at least 2 points".into()));
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(PipelineError::Config("hidden widths must be positive".into()));
        }
        if self.train.batch_size == 0
            || self.sobolev.batch_size == 0
            || self.prune.retrain_batch_size == Some(0)
        {
            return Err(PipelineError::Config("batch sizes must be positive".into()));
        }
        if !(self.sobolev.lambda >= 0.0) {
            return Err(PipelineError::Config("lambda must be >= 0".into()));
        }
        let p = &self.prune;
        if !(p.epsilon >= 0.0) || p.nodes_per_cycle == 0 || p.min_width == 0 {
            return Err(PipelineError::Config("invalid prune section".into()));
        }
        Ok(())
    }

    pub fn basket(&self) -> Result<BasketConfig, PipelineError> {
        let m = &self.market;
        let n = m.assets;
        let spot_box = Interval::new(m.spot_lo, m.spot_hi)
            .map_err(|e| PipelineError::Config(format!("spot box: {e}")))?;
        let uniform_corr = || {
            (0..n)
                .map(|j| (0..n).map(|k| if j == k { 1.0 } else { m.correlation }).collect())
                .collect()
        };
        let b = BasketConfig {
            weights: m.weights.clone().unwrap_or_else(|| vec![1.0 / n.max(1) as f64; n]),
            vols: m.vols.clone().unwrap_or_else(|| vec![m.vol; n]),
            correlation: m.correlation_matrix.clone().unwrap_or_else(uniform_corr),
            maturity: m.maturity,
            strike: m.strike,
            spot_box,
            smoothing: m.smoothing,
        };
        b.validate().map_err(|e| PipelineError::Config(format!("market: {e}")))?;
        Ok(b)
    }

    pub fn schedule(&self) -> OneCycleConfig {
        let s = &self.schedule;
        OneCycleConfig {
            peak: s.peak,
            start: s.start,
            final_lr: s.final_lr,
            rise_fraction: s.rise_fraction,
            total_steps: 1,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            schedule: self.schedule(),
        }
    }

    pub fn retrain_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.prune.retrain_epochs,
            batch_size: self.prune.retrain_batch_size.unwrap_or(self.train.batch_size),
            schedule: match self.prune.retrain_peak {
                Some(peak) => OneCycleConfig {
                    peak,
                    start: self.schedule.start * peak / self.schedule.peak,
                    ..self.schedule()
                },
                None => self.schedule(),
            },
        }
    }

    pub fn sobolev_config(&self, source: DerivativeSource) -> SobolevConfig {
        SobolevConfig {
            lambda: self.sobolev.lambda,
            batch_size: self.sobolev.batch_size,
            epochs: self.sobolev.epochs,
            source,
        }
    }

    /// SHA-256 over the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Independent seed for a named source of randomness.
    pub fn derived_seed(&self, label: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(label.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), PipelineError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| PipelineError::Config(format!("override '{assignment}' is not key=value")))?;
    let value = parse_value(raw.trim());
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| {
        PipelineError::Config(format!("override '{assignment}' has an empty key"))
    })?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| PipelineError::Config(format!("'{p}' in '{key}' is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
