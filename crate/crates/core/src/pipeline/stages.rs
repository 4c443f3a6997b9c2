use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{cmd_report, RunReport, Summary};
use super::{ExperimentConfig, PipelineError};
use crate::market::{sample, BasketConfig, Dataset};
use crate::network::{MlpModel, Scaling};
use crate::pruning::{self, PruneConfig, PruneEvent, PruningError};
use crate::training::{
    evaluate, r2_score, teacher_dataset, train_mse, train_sobolev, write_log_csv,
    write_points_csv, AnalyticOracle, DerivativeSource, EpochLog, Surrogate,
};

/// Stage names in table order.
pub const STAGES: [&str; 5] = ["baseline", "pruned", "layers-removed", "sobolev-nn", "sobolev-ref"];

const TRAIN_DATA: &str = "train.csv";
const RETRAIN_DATA: &str = "retrain.csv";
const MANIFEST: &str = "generate.manifest.json";

/// Written next to the generated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    /// File name to SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

/// Model selector for evaluation and fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub enum StageModel {
    File(PathBuf),
    /// The closed-form pricer, for checking the evaluation itself.
    Analytic,
}

impl std::str::FromStr for StageModel {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(if s == "analytic" {
            StageModel::Analytic
        } else {
            StageModel::File(PathBuf::from(s))
        })
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            PipelineError::MissingArtifact(path.to_path_buf())
        } else {
            io_err(path, e)
        }
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    write(path, &bytes)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn check_hash(path: &Path, expected: &str, found: Option<&str>) -> Result<(), PipelineError> {
    match found {
        Some(f) if f == expected => Ok(()),
        other => Err(PipelineError::HashMismatch {
            path: path.to_path_buf(),
            expected: expected.to_string(),
            found: other.unwrap_or("none").to_string(),
        }),
    }
}

fn load_manifest(cfg: &ExperimentConfig) -> Result<Manifest, PipelineError> {
    let path = cfg.out_dir.join(MANIFEST);
    let m: Manifest = serde_json::from_slice(&read(&path)?).map_err(|e| PipelineError::Corrupt {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    check_hash(&path, &cfg.hash(), Some(&m.config_hash))?;
    Ok(m)
}

/// Loads a generated dataset after checking it against the manifest.
fn load_dataset(cfg: &ExperimentConfig, name: &str) -> Result<Dataset, PipelineError> {
    let manifest = load_manifest(cfg)?;
    let path = cfg.out_dir.join(name);
    let bytes = read(&path)?;
    let corrupt = |msg: String| PipelineError::Corrupt {
        path: path.clone(),
        msg,
    };
    match manifest.files.get(name) {
        Some(h) if *h == sha256_hex(&bytes) => {}
        Some(_) => return Err(corrupt("content does not match the manifest".into())),
        None => return Err(corrupt("not listed in the manifest".into())),
    }
    Dataset::read_csv(&bytes[..]).map_err(|e| corrupt(e.to_string()))
}

fn model_path(cfg: &ExperimentConfig, stage: &str) -> PathBuf {
    cfg.out_dir.join(format!("{stage}.model.json"))
}

fn load_model(cfg: &ExperimentConfig, path: &Path) -> Result<MlpModel, PipelineError> {
    let (model, meta) =
        MlpModel::from_bytes_with_metadata(&read(path)?).map_err(|e| PipelineError::Corrupt {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    check_hash(path, &cfg.hash(), meta.get("config_hash").map(String::as_str))?;
    Ok(model)
}

fn save_model(cfg: &ExperimentConfig, stage: &str, model: &MlpModel) -> Result<(), PipelineError> {
    let meta: BTreeMap<String, String> = [
        ("config_hash".to_string(), cfg.hash()),
        ("stage".to_string(), stage.to_string()),
    ]
    .into();
    write(&model_path(cfg, stage), &model.to_bytes_with_metadata(&meta))
}

fn save_log(cfg: &ExperimentConfig, stage: &str, log: &[EpochLog]) -> Result<(), PipelineError> {
    let path = cfg.out_dir.join(format!("{stage}.train_log.csv"));
    let mut buf = Vec::new();
    write_log_csv(log, &mut buf)?;
    write(&path, &buf)
}

/// Evaluates `model` on the analytic grid and writes `<stage>.report.json`
/// and `<stage>.eval.csv`.
pub fn evaluate_model<S: Surrogate + ?Sized>(
    cfg: &ExperimentConfig,
    stage: &str,
    model: &S,
    shape: Option<&MlpModel>,
    started: Instant,
) -> Result<RunReport, PipelineError> {
    let basket = cfg.basket()?;
    let eval = evaluate(model, &basket, cfg.data.grid)?;
    let per_point = format!("{stage}.eval.csv");
    let mut buf = Vec::new();
    write_points_csv(&eval.points, &mut buf)?;
    write(&cfg.out_dir.join(&per_point), &buf)?;
    let report = RunReport {
        stage: stage.to_string(),
        values_r2: eval.values_r2,
        deltas_r2: eval.deltas_r2,
        gammas_r2: eval.gammas_r2,
        parameter_count: shape.map_or(0, MlpModel::parameter_count),
        hidden_widths: shape.map_or_else(Vec::new, MlpModel::hidden_widths),
        grid: eval.grid,
        per_point,
        config_hash: cfg.hash(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    write_json(&cfg.out_dir.join(format!("{stage}.report.json")), &report)?;
    log::info!(
        "{stage}: values {:.6} deltas {:.6} gammas {:.6} ({} params)",
        report.values_r2,
        report.deltas_r2,
        report.gammas_r2,
        report.parameter_count
    );
    Ok(report)
}

/// Samples the training and retraining sets and records their hashes.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Manifest, PipelineError> {
    ensure_dir(&cfg.out_dir)?;
    let basket = cfg.basket()?;
    write(&cfg.out_dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let mut files = BTreeMap::new();
    for (name, n, label) in [
        (TRAIN_DATA, cfg.data.train_samples, "train-data"),
        (RETRAIN_DATA, cfg.data.retrain_samples, "retrain-data"),
    ] {
        let ds = Dataset::new(sample(&basket, n, cfg.derived_seed(label))?)?;
        let mut buf = Vec::new();
        ds.write_csv(&mut buf)?;
        write(&cfg.out_dir.join(name), &buf)?;
        files.insert(name.to_string(), sha256_hex(&buf));
    }
    let manifest = Manifest {
        stage: "generate".into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        files,
    };
    write_json(&cfg.out_dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Trains the oversized baseline on the generated data.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunReport, PipelineError> {
    let started = Instant::now();
    let data = load_dataset(cfg, TRAIN_DATA)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.derived_seed("init"));
    let mut model = MlpModel::new(
        data.dim(),
        &cfg.network.hidden,
        cfg.network.activation,
        &mut rng,
    )?;
    model.set_scaling(Scaling::fit(&data.xs(), &data.ys()))?;
    let (model, log) = train_mse(&model, &data, &cfg.train_config(), cfg.derived_seed("train"))?;
    save_model(cfg, "baseline", &model)?;
    save_log(cfg, "baseline", &log)?;
    evaluate_model(cfg, "baseline", &model, Some(&model), started)
}

/// Value-R² on the evaluation grid; the gate used while pruning.
fn value_validator(
    basket: &BasketConfig,
    grid: usize,
) -> impl FnMut(&MlpModel) -> Result<f64, PruningError> {
    let m = basket.assets();
    let (lo, width) = (basket.spot_box.lo(), basket.spot_box.width());
    let points: Vec<Vec<f64>> = (0..grid)
        .map(|i| vec![lo + width * i as f64 / (grid - 1) as f64; m])
        .collect();
    let truth: Vec<f64> = points
        .iter()
        .map(|x| basket.analytic_price(x).expect("validated basket"))
        .collect();
    move |model: &MlpModel| {
        let pred = points
            .iter()
            .map(|x| model.forward(x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(r2_score(&pred, &truth)?)
    }
}

fn write_history(cfg: &ExperimentConfig, history: &[PruneEvent]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    pruning::write_history_csv(history, &mut buf)?;
    write(&cfg.out_dir.join("prune_history.csv"), &buf)
}

/// Retraining inputs used to measure node ranges for sampled compensation.
const COMPENSATION_POINTS: usize = 256;

/// Significance-driven node pruning, then layer removal behind a
/// single-node bottleneck.
pub fn cmd_prune(cfg: &ExperimentConfig) -> Result<Vec<RunReport>, PipelineError> {
    let started = Instant::now();
    let basket = cfg.basket()?;
    let baseline = load_model(cfg, &model_path(cfg, "baseline"))?;
    let train = load_dataset(cfg, TRAIN_DATA)?;
    let retrain = load_dataset(cfg, RETRAIN_DATA)?;
    let pcfg = PruneConfig {
        input_box: pruning::input_box(&train)?,
        retrain: cfg.retrain_config(),
        retrain_samples: retrain.len(),
        epsilon: cfg.prune.epsilon,
        min_width: cfg.prune.min_width,
        nodes_per_cycle: cfg.prune.nodes_per_cycle,
        compensation: cfg.prune.compensation,
        sample_points: retrain.xs().into_iter().take(COMPENSATION_POINTS).collect(),
    };
    let node_seed = cfg.derived_seed("prune-retrain");
    let node_trainer = |m: &MlpModel, cycle: usize| -> Result<MlpModel, PruningError> {
        Ok(train_mse(m, &retrain, &pcfg.retrain, node_seed.wrapping_add(cycle as u64))?.0)
    };
    let (pruned, mut history) =
        pruning::iterative_prune(&baseline, &pcfg, node_trainer, value_validator(&basket, cfg.data.grid))?;
    save_model(cfg, "pruned", &pruned)?;
    write_history(cfg, &history)?;
    let mut reports = vec![evaluate_model(cfg, "pruned", &pruned, Some(&pruned), started)?];

    let started = Instant::now();
    let reduced = if cfg.prune.remove_layers {
        let baseline_r2 = value_validator(&basket, cfg.data.grid)(&baseline)?;
        let layer_seed = cfg.derived_seed("layer-retrain");
        let layer_trainer = |m: &MlpModel, cycle: usize| -> Result<MlpModel, PruningError> {
            Ok(train_mse(m, &retrain, &pcfg.retrain, layer_seed.wrapping_add(cycle as u64))?.0)
        };
        let (reduced, events) = pruning::try_remove_layers(
            &pruned,
            &pcfg,
            baseline_r2,
            layer_trainer,
            value_validator(&basket, cfg.data.grid),
        )?;
        history.extend(events);
        write_history(cfg, &history)?;
        reduced
    } else {
        pruned
    };
    save_model(cfg, "layers-removed", &reduced)?;
    reports.push(evaluate_model(cfg, "layers-removed", &reduced, Some(&reduced), started)?);
    Ok(reports)
}

/// Sobolev fine-tuning of the reduced network. Teacher mode labels the
/// training inputs with the baseline network and never samples the market
/// model; reference mode draws fresh pathwise samples.
pub fn cmd_finetune(
    cfg: &ExperimentConfig,
    source: DerivativeSource,
    stage_model: Option<&Path>,
) -> Result<RunReport, PipelineError> {
    let started = Instant::now();
    let input = match stage_model {
        Some(p) => p.to_path_buf(),
        None => model_path(cfg, "layers-removed"),
    };
    let student = load_model(cfg, &input)?;
    let (stage, data) = match source {
        DerivativeSource::TeacherNetwork => {
            let teacher = load_model(cfg, &model_path(cfg, "baseline"))?;
            let xs = load_dataset(cfg, TRAIN_DATA)?.xs();
            ("sobolev-nn", teacher_dataset(&teacher, &xs)?)
        }
        DerivativeSource::ReferenceModel => {
            let basket = cfg.basket()?;
            let ds = Dataset::new(sample(
                &basket,
                cfg.data.reference_samples,
                cfg.derived_seed("reference-data"),
            )?)?;
            let mut buf = Vec::new();
            ds.write_csv(&mut buf)?;
            write(&cfg.out_dir.join("sobolev-ref.data.csv"), &buf)?;
            ("sobolev-ref", ds)
        }
    };
    let (model, log) = train_sobolev(
        &student,
        &data,
        &cfg.sobolev_config(source),
        &cfg.schedule(),
        cfg.derived_seed(stage),
    )?;
    save_model(cfg, stage, &model)?;
    save_log(cfg, stage, &log)?;
    evaluate_model(cfg, stage, &model, Some(&model), started)
}

/// Evaluates a model file (or the analytic pricer) under `name`.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    model: &StageModel,
    name: Option<&str>,
) -> Result<RunReport, PipelineError> {
    let started = Instant::now();
    ensure_dir(&cfg.out_dir)?;
    match model {
        StageModel::Analytic => {
            let basket = cfg.basket()?;
            evaluate_model(cfg, name.unwrap_or("analytic"), &AnalyticOracle(&basket), None, started)
        }
        StageModel::File(path) => {
            let m = load_model(cfg, path)?;
            let stem = path
                .file_name()
                .and_then(|f| f.to_str())
                .map(|f| f.trim_end_matches(".json").trim_end_matches(".model"))
                .unwrap_or("model");
            evaluate_model(cfg, name.unwrap_or(stem), &m, Some(&m), started)
        }
    }
}

/// Every stage in order, then the summary.
pub fn cmd_all(cfg: &ExperimentConfig) -> Result<Summary, PipelineError> {
    cmd_generate(cfg)?;
    cmd_train(cfg)?;
    cmd_prune(cfg)?;
    cmd_finetune(cfg, DerivativeSource::TeacherNetwork, None)?;
    cmd_finetune(cfg, DerivativeSource::ReferenceModel, None)?;
    cmd_report(&cfg.out_dir)
}
