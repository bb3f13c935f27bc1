//! A full training run: plan, loop over epochs, log and checkpoint.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde::Serialize;

use crate::backend::CostModel;
use crate::error::{Error, Result};
use crate::scheduler::SwitchCost;
use crate::translator::{translate, ModelSpec, TrainingConfig};

use super::data::Dataset;
use super::params::ParamStore;
use super::plan::{ExecutionPlan, PlanOptions, Techniques};
use super::reference::FloatNet;
use super::train::{StepMetrics, Trainer};

#[derive(Clone, Debug)]
pub struct TrainRunConfig {
    pub model: ModelSpec,
    pub config: TrainingConfig,
    pub cost: CostModel,
    pub batch: usize,
    pub epochs: u64,
    pub budget_bytes: Option<u64>,
    pub seed: u64,
    pub techniques: Techniques,
    pub switch: SwitchCost,
    /// Directory for `metrics.csv`, checkpoints and `summary.json`.
    pub out: Option<PathBuf>,
}

impl TrainRunConfig {
    pub fn new(model: ModelSpec, config: TrainingConfig) -> Self {
        Self {
            model,
            config,
            cost: CostModel::seeded(),
            batch: 32,
            epochs: 1,
            budget_bytes: None,
            seed: 0,
            techniques: Techniques::all(),
            switch: SwitchCost::default(),
            out: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub model: String,
    pub algorithm: String,
    pub batches: u64,
    pub final_loss: f32,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub mean_sim_ms: f64,
    pub recomputes: usize,
    pub builds: u64,
    pub releases: u64,
}

/// CSV header of the per-batch log.
pub const METRICS_HEADER: &str = "batch,epoch,loss,train_acc,sim_ms,recomputes,builds,releases";

pub struct RunOutput {
    pub summary: TrainSummary,
    pub metrics: Vec<StepMetrics>,
    pub trainer: Trainer,
}

/// Trains on `train` and reports accuracy on `test` if given.
pub fn run_training(
    cfg: &TrainRunConfig,
    train: &Dataset,
    test: Option<&Dataset>,
) -> Result<RunOutput> {
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch must be at least 1".into()));
    }
    let graph = translate(&cfg.model, &cfg.config)?;
    if train.sample_shape != graph.input_shape || train.classes != graph.classes {
        return Err(Error::Run(format!(
            "dataset ({:?}, {} classes) does not match model ({:?}, {} classes)",
            train.sample_shape, train.classes, graph.input_shape, graph.classes
        )));
    }
    if train.len() < cfg.batch {
        return Err(Error::Run(format!(
            "{} samples cannot fill one batch of {}",
            train.len(),
            cfg.batch
        )));
    }
    let mut opts = PlanOptions::new(cfg.batch);
    opts.switch = cfg.switch;
    opts.techniques = cfg.techniques.clone();
    let plan = ExecutionPlan::prepare(&graph, &cfg.cost, opts)?;
    let params = ParamStore::init(&graph, cfg.seed)?;
    let mut trainer = Trainer::new(graph, plan, params, cfg.budget_bytes)?;
    let mut log = match &cfg.out {
        Some(dir) => {
            fs::create_dir_all(dir.join("checkpoints"))?;
            Some(csv::Writer::from_path(dir.join("metrics.csv"))?)
        }
        None => None,
    };
    let mut metrics = Vec::new();
    for epoch in 0..cfg.epochs {
        for idx in train.epoch_batches(cfg.batch, cfg.seed, epoch) {
            let (x, labels) = train.gather(&idx)?;
            let m = trainer.step(&x, &labels, epoch)?;
            if !m.loss.is_finite() {
                return Err(Error::Run(format!("loss diverged at batch {}", m.batch)));
            }
            if let Some(w) = log.as_mut() {
                w.serialize(&m)?;
            }
            metrics.push(m);
        }
        log::info!(
            "epoch {epoch}: loss {:.4}",
            metrics.last().map_or(f32::NAN, |m| m.loss)
        );
        if let Some(dir) = &cfg.out {
            let path = dir
                .join("checkpoints")
                .join(format!("epoch_{epoch:03}.ckpt"));
            let mut f = BufWriter::new(File::create(path)?);
            trainer.checkpoint().write(&mut f)?;
            f.flush()?;
        }
    }
    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    let chunk = cfg.batch.max(64);
    let summary = TrainSummary {
        model: trainer.graph.name.clone(),
        algorithm: trainer.graph.algorithm.clone(),
        batches: trainer.batches_done,
        final_loss: metrics.last().map_or(f32::NAN, |m| m.loss),
        train_accuracy: trainer.evaluate(train, chunk)?,
        test_accuracy: test.map(|t| trainer.evaluate(t, chunk)).transpose()?,
        mean_sim_ms: metrics.iter().map(|m| m.sim_ms).sum::<f64>() / metrics.len().max(1) as f64,
        recomputes: metrics.iter().map(|m| m.recomputes).sum(),
        builds: trainer.builds(),
        releases: trainer.releases(),
    };
    if let Some(dir) = &cfg.out {
        let json =
            serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.join("summary.json"), json + "\n")?;
    }
    Ok(RunOutput {
        summary,
        metrics,
        trainer,
    })
}

/// Trains the FP32 reference with the same initial values and batch order.
/// Returns `(train accuracy, test accuracy)`.
pub fn run_reference(
    cfg: &TrainRunConfig,
    lr: f32,
    train: &Dataset,
    test: Option<&Dataset>,
) -> Result<(f64, Option<f64>)> {
    let graph = translate(&cfg.model, &cfg.config)?;
    let mut net = FloatNet::new(&cfg.model, &graph, cfg.seed)?;
    for epoch in 0..cfg.epochs {
        for idx in train.epoch_batches(cfg.batch, cfg.seed, epoch) {
            let (x, labels) = train.gather(&idx)?;
            net.step(&x, &labels, lr)?;
        }
    }
    let chunk = cfg.batch.max(64);
    Ok((
        net.accuracy(train, chunk)?,
        test.map(|t| net.accuracy(t, chunk)).transpose()?,
    ))
}

/// A model TOML path, or one of the built-in names `toy_cnn` and `vgg_like`.
pub fn resolve_model(arg: &str) -> Result<ModelSpec> {
    match arg {
        "toy_cnn" => Ok(crate::translator::toy_cnn()),
        "vgg_like" => Ok(crate::translator::vgg_like()),
        path => ModelSpec::parse(&fs::read_to_string(path)?),
    }
}

/// A training-config TOML path, or `niti` / `fp32_update`.
pub fn resolve_config(arg: &str) -> Result<TrainingConfig> {
    match arg {
        "niti" => Ok(crate::translator::niti()),
        "fp32_update" => Ok(crate::translator::fp32_update()),
        path => crate::translator::parse_config(&fs::read_to_string(path)?),
    }
}

/// A cost-model CSV path, or the seeded table when absent.
pub fn resolve_cost(arg: Option<&std::path::Path>) -> Result<CostModel> {
    match arg {
        Some(p) => CostModel::read_csv(File::open(p)?),
        None => Ok(CostModel::seeded()),
    }
}

/// Synthetic data shaped for `model`: blob clusters for flat inputs, noisy
/// class templates for single-channel square images.
pub fn synthetic_for(model: &ModelSpec, n: usize, seed: u64) -> Result<Dataset> {
    match model.input[..] {
        [features] => super::data::gen_blobs(n, features, model.classes, seed),
        [1, h, w] if h == w => super::data::gen_images(n, h, model.classes, 1.2, seed),
        _ => Err(Error::Run(format!(
            "no synthetic generator for input {:?}; supply IDX files",
            model.input
        ))),
    }
}
