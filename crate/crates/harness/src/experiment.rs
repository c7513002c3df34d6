//! One grid cell end to end: data condition, training, test evaluation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use capsnet_core::models::{save_checkpoint, Model, ModelConfig};
use capsnet_core::nn::AdamConfig;
use capsnet_core::rng::streams;
use capsnet_core::SeededRng;
use capsnet_data::augment::{augment, budget_for_fraction};
use capsnet_data::idx::{load_idx_named, standard_paths};
use capsnet_data::sampling::{induce_imbalance, stratified_subsample, train_val_split};
use capsnet_data::{LabeledImageSet, Split};
use serde::{Deserialize, Serialize};

use crate::config::{Condition, DatasetId, ExperimentConfig, IMBALANCE_KEEP};
use crate::error::{HarnessError, Result};
use crate::metrics::{evaluate, Evaluation};
use crate::train::{train_model, EpochRecord, History, TrainSettings};

/// Augmentation budget of the natural-image sets, relative to the
/// training-set size.
pub const VISION_AUGMENT_FRACTION: f64 = 0.05;

/// Full training and test splits of one dataset.
#[derive(Clone, Debug)]
pub struct DatasetPair {
    pub id: DatasetId,
    pub train: LabeledImageSet,
    pub test: LabeledImageSet,
}

impl DatasetPair {
    /// Reads `<root>/<dataset>/{train,t10k}-{images-idx3,labels-idx1}-ubyte`.
    pub fn load(root: impl AsRef<Path>, id: DatasetId) -> Result<Self> {
        let dir = root.as_ref().join(id.name());
        let read = |split| -> Result<LabeledImageSet> {
            let (images, labels) = standard_paths(&dir, split);
            for p in [&images, &labels] {
                if !p.exists() {
                    return Err(HarnessError::Config(format!(
                        "{} not found; run `capsnet prepare` or scripts/fetch-vision-data.sh first",
                        p.display()
                    )));
                }
            }
            Ok(load_idx_named(images, labels, id.class_names(), split)?)
        };
        Ok(Self {
            id,
            train: read(Split::Train)?,
            test: read(Split::Test)?,
        })
    }
}

/// Training data of a run after the condition is applied.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: LabeledImageSet,
    pub val: LabeledImageSet,
    pub warnings: Vec<String>,
}

/// Applies the data scale and condition of `cfg` to the full training set,
/// splits off validation data and, for the augmented arm, augments the
/// training part. Every random choice comes from a sub-stream of the seed.
pub fn prepare_data(cfg: &ExperimentConfig, full_train: &LabeledImageSet) -> Result<PreparedData> {
    let root = SeededRng::new(cfg.seed);
    let subsample = |set: &LabeledImageSet, f: f64| -> Result<LabeledImageSet> {
        if f >= 1.0 {
            Ok(set.clone())
        } else {
            Ok(stratified_subsample(set, f, &mut root.fork(streams::SUBSAMPLE))?)
        }
    };
    let base = match cfg.condition {
        Condition::Fraction(f) => subsample(full_train, cfg.data_scale * f)?,
        Condition::Imbalance(s) => {
            let scaled = subsample(full_train, cfg.data_scale)?;
            let classes = cfg.dataset.imbalance_classes(s);
            induce_imbalance(&scaled, classes, IMBALANCE_KEEP, &mut root.fork(streams::IMBALANCE))?
        }
        Condition::Augment(_) => subsample(full_train, cfg.data_scale * cfg.dataset.unaugmented_fraction())?,
    };
    let (mut train, val) = train_val_split(&base, cfg.val_fraction, &mut root.fork(streams::SPLIT))?;
    if cfg.condition == Condition::Augment(true) {
        let unaugmented = cfg.dataset.unaugmented_fraction();
        let budget = if unaugmented < 1.0 {
            // Restore the count the full-size training set would have.
            (train.len() as f64 / unaugmented).round() as usize - train.len()
        } else {
            budget_for_fraction(train.len(), VISION_AUGMENT_FRACTION)
        };
        let spec = cfg.dataset.augment_spec();
        train = augment(&train, &spec, budget, &mut root.fork(streams::AUGMENT))?;
    }
    let mut warnings = base.warnings.clone();
    warnings.dedup();
    Ok(PreparedData { train, val, warnings })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub config: ExperimentConfig,
    pub history: History,
    pub test: Evaluation,
    pub params: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub wall_seconds: f64,
    pub warnings: Vec<String>,
}

impl RunResult {
    pub fn macro_f1(&self) -> f64 {
        self.test.macro_f1
    }

    pub fn epoch_log(&self) -> &[EpochRecord] {
        &self.history.epochs
    }
}

/// Where a run writes its best checkpoint, if anywhere.
#[derive(Clone, Debug, Default)]
pub struct RunOutputs {
    pub checkpoint: Option<PathBuf>,
}

pub fn train_settings(cfg: &ExperimentConfig, n_full: usize) -> TrainSettings {
    TrainSettings {
        batch_size: cfg.batch_size,
        iteration_budget: cfg.iteration_budget(n_full),
        patience: cfg.patience,
        min_delta: cfg.min_delta,
        adam: AdamConfig::with_learning_rate(cfg.learning_rate),
        caps: cfg.caps_loss(),
    }
}

pub fn model_config(cfg: &ExperimentConfig) -> ModelConfig {
    ModelConfig {
        architecture: cfg.architecture,
        num_classes: cfg.dataset.num_classes(),
        width: cfg.width,
        routing_iterations: cfg.routing_iterations,
    }
}

/// Trains and evaluates one configuration.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    data: &DatasetPair,
    outputs: &RunOutputs,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunResult> {
    cfg.validate()?;
    if cfg.dataset != data.id {
        return Err(HarnessError::contract(
            "run_experiment",
            format!("config is for {} but data is {}", cfg.dataset, data.id),
        ));
    }
    let start = Instant::now();
    let prepared = prepare_data(cfg, &data.train)?;
    let mconf = model_config(cfg);
    let model = Model::<f32>::build(mconf, &mut SeededRng::new(cfg.seed).fork(streams::INIT))?;
    let settings = train_settings(cfg, data.train.len());
    let (best, history) = train_model(model, &prepared.train, &prepared.val, &settings, cfg.seed, on_epoch)?;
    let test = evaluate(&best, &data.test, cfg.batch_size)?;
    if let Some(path) = &outputs.checkpoint {
        let hyper = serde_json::to_value(cfg).expect("config serialises");
        save_checkpoint(path, &best, &hyper)?;
    }
    Ok(RunResult {
        run_id: cfg.run_id(),
        config: cfg.clone(),
        params: best.count_params(),
        train_size: prepared.train.len(),
        val_size: prepared.val.len(),
        history,
        test,
        wall_seconds: start.elapsed().as_secs_f64(),
        warnings: prepared.warnings,
    })
}
