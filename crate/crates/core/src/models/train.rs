use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{argmax_rows, batch_tensor, ArchitectureSpec, Classifier, Network};
use crate::datagen::{Dataset, LabeledSample, ScenarioKind};
use crate::error::{Error, Result};
use crate::io_util::write_json;
use crate::tensor::{load_checkpoint, save_checkpoint, AdamState, CheckpointManifest, Primitive, Tape, Tensor};

/// Rows per forward pass when only inference is needed.
const EVAL_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainingConfig {
    /// 500 Adam epochs in batches of 64. The learning rate is 0.0005 for
    /// full-size images; small images use 0.004, or 0.0004 for RIGID.
    pub fn paper(scenario: ScenarioKind, side: usize, seed: u64) -> Self {
        let learning_rate = match (side, scenario) {
            (8, ScenarioKind::Rigid) => 0.0004,
            (8, _) => 0.004,
            _ => 0.0005,
        };
        TrainingConfig {
            epochs: 500,
            learning_rate,
            batch_size: 64,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "training needs positive epochs, batch size and learning rate, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub arch: ArchitectureSpec,
    pub config: TrainingConfig,
    pub dataset: String,
    /// Mean training loss of each epoch.
    pub train_loss: Vec<f64>,
    /// Validation loss after each epoch.
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub network: Network,
    pub report: TrainingReport,
}

impl Classifier for TrainedModel {
    fn input_len(&self) -> usize {
        self.network.input_len()
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.network.logits(x)
    }
}

fn check_side(arch: &ArchitectureSpec, dataset: &Dataset) -> Result<()> {
    if arch.side != dataset.side() {
        return Err(Error::InvalidArgument(format!(
            "{} built for {}px images cannot train on {}px dataset {}",
            arch.kind,
            arch.side,
            dataset.side(),
            dataset.name()
        )));
    }
    Ok(())
}

/// Mean cross-entropy of `model` over `samples`.
pub fn mean_loss(model: &dyn Classifier, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty sample list".into()));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let x = batch_tensor(chunk.iter().map(|s| s.image.data()), model.input_len())?;
        let labels = chunk.iter().map(|s| s.label as usize).collect();
        let logits = model.logits(&x)?;
        let loss = crate::tensor::forward_primitive(&Primitive::CrossEntropy(labels), &[&logits])?;
        total += loss.data()[0] * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Argmax class of every sample.
pub fn predict(model: &dyn Classifier, samples: &[LabeledSample]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let x = batch_tensor(chunk.iter().map(|s| s.image.data()), model.input_len())?;
        out.extend(argmax_rows(&model.logits(&x)?));
    }
    Ok(out)
}

/// Fraction of samples whose argmax logit is the label.
pub fn evaluate_accuracy(model: &dyn Classifier, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate accuracy on an empty sample list".into()));
    }
    let predictions = predict(model, samples)?;
    let correct = predictions
        .iter()
        .zip(samples)
        .filter(|(p, s)| **p == s.label as usize)
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Mini-batch Adam on the training split. After every epoch the full
/// validation split is scored and the parameters with the lowest validation
/// loss so far are kept; those are the parameters returned.
pub fn train(arch: &ArchitectureSpec, dataset: &Dataset, config: &TrainingConfig) -> Result<TrainedModel> {
    config.validate()?;
    check_side(arch, dataset)?;
    if dataset.train.is_empty() || dataset.val.is_empty() || dataset.test.is_empty() {
        return Err(Error::InvalidArgument(format!("dataset {} has an empty split", dataset.name())));
    }
    let mut network = Network::new(arch.clone(), config.seed)?;
    let mut adam = AdamState::new(config.learning_rate, network.params());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let d = arch.input_len();
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut val_loss = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = batch_tensor(batch.iter().map(|&i| dataset.train[i].image.data()), d)?;
            let labels: Vec<usize> = batch.iter().map(|&i| dataset.train[i].label as usize).collect();
            let mut tape = Tape::new();
            let (_, leaves, logits) = network.record_fresh(&mut tape, x)?;
            let loss = tape.cross_entropy(logits, labels)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_total += value * batch.len() as f64;
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = leaves.iter().map(|&l| grads.take(l)).collect();
            adam.update(network.params_mut(), &grads)?;
        }
        train_loss.push(epoch_total / order.len() as f64);
        let v = mean_loss(&network, &dataset.val)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        val_loss.push(v);
        if best.as_ref().is_none_or(|b| v < b.1) {
            best = Some((epoch, v, network.params().to_vec()));
        }
    }

    let (best_epoch, best_val_loss, params) = best.expect("at least one epoch ran");
    let network = Network::from_params(arch.clone(), params)?;
    let report = TrainingReport {
        arch: arch.clone(),
        config: config.clone(),
        dataset: dataset.name(),
        train_loss,
        val_loss,
        best_epoch,
        best_val_loss,
        val_accuracy: evaluate_accuracy(&network, &dataset.val)?,
        test_accuracy: evaluate_accuracy(&network, &dataset.test)?,
    };
    Ok(TrainedModel { network, report })
}

/// Checkpoint directory plus a standalone `training_report.json`.
pub fn save_model(model: &TrainedModel, dir: &Path) -> Result<()> {
    let report = serde_json::to_value(&model.report).expect("report serializes");
    let manifest = CheckpointManifest {
        architecture: model.report.arch.kind.id().to_string(),
        layer_shapes: model.network.params().iter().map(|p| p.shape().to_vec()).collect(),
        seed: model.report.config.seed,
        training_report: report,
    };
    save_checkpoint(dir, &manifest, model.network.params())?;
    write_json(&dir.join("training_report.json"), &model.report)
}

pub fn load_model(dir: &Path) -> Result<TrainedModel> {
    let (manifest, params) = load_checkpoint(dir)?;
    let report: TrainingReport = serde_json::from_value(manifest.training_report)
        .map_err(|e| Error::json(dir.join("manifest.json"), e))?;
    let network = Network::from_params(report.arch.clone(), params)?;
    Ok(TrainedModel { network, report })
}

/// Indices of samples that every model classifies correctly.
pub fn correctly_predicted_intersection(
    models: &[&dyn Classifier],
    samples: &[LabeledSample],
) -> Result<Vec<usize>> {
    let mut keep = vec![true; samples.len()];
    for model in models {
        if samples.is_empty() {
            break;
        }
        for (k, (p, s)) in keep.iter_mut().zip(predict(*model, samples)?.iter().zip(samples)) {
            *k &= *p == s.label as usize;
        }
    }
    Ok(keep.iter().enumerate().filter(|(_, k)| **k).map(|(i, _)| i).collect())
}
