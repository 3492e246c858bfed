use super::config::FcnConfig;
use super::model::{score_comparator, Network};
use crate::dataset::{epoch_order, stack, Sample};
use crate::error::{Error, Result};
use crate::metrics::{accumulate, ConfusionCounts, Summary};
use crate::nn::{
    l2_penalty, labels_to_vector, scores_to_matrix, weighted_xent, AdamConfig, AdamState, ParamBlock,
};
use crate::tensor::Tensor4;

/// A trainable network in single precision together with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct FcnModel {
    pub net: Network<f32>,
    pub adam: AdamState<f32>,
}

/// Result of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Data term plus L2 penalty, before the update.
    pub loss: f64,
    /// Comparator decisions on the batch under batch statistics, before the update.
    pub counts: ConfusionCounts,
}

/// Loss and pooled confusion counts over a set of samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub counts: ConfusionCounts,
    pub summary: Summary,
}

impl Evaluation {
    /// `epoch,split,loss,precision,recall,accuracy,f1` without a newline.
    pub fn csv_row(&self, epoch: usize, split: &str) -> String {
        let s = &self.summary;
        format!(
            "{epoch},{split},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.loss, s.precision, s.recall, s.accuracy, s.f1
        )
    }
}

pub const CSV_HEADER: &str = "epoch,split,loss,precision,recall,accuracy,f1";

impl FcnModel {
    pub fn new(config: FcnConfig, seed: u64) -> Result<FcnModel> {
        Self::with_adam(config, seed, AdamConfig::default())
    }

    pub fn with_adam(config: FcnConfig, seed: u64, adam: AdamConfig) -> Result<FcnModel> {
        let net = Network::build(config, seed)?;
        let adam = AdamState::new(adam, &net.block_sizes());
        Ok(FcnModel { net, adam })
    }

    pub fn config(&self) -> &FcnConfig {
        self.net.config()
    }

    /// Forward in training mode, weighted loss, backward, Adam update, then
    /// the running-statistics update. Nothing changes if the loss or any
    /// gradient is non-finite.
    pub fn train_step(&mut self, data: &Tensor4<f32>, labels: &Tensor4<f32>, lr: f64) -> Result<StepReport> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::validation(format!("learning rate must be positive, got {lr}")));
        }
        let obj = self.net.objective(data, labels)?;
        if !obj.loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at step {} (data term {}, penalty {})",
                self.adam.step + 1,
                obj.data_loss,
                obj.penalty
            )));
        }
        let counts = accumulate(&score_comparator(&obj.scores)?, &labels.map(|v| v as u8))?;

        self.adam.config.learning_rate = lr;
        let names = self.net.block_names();
        let mut blocks: Vec<ParamBlock<'_, f32>> = self
            .net
            .blocks_mut()
            .into_iter()
            .zip(&obj.grads.blocks)
            .zip(&names)
            .map(|((values, grads), name)| ParamBlock { name, values, grads })
            .collect();
        self.adam.step(&mut blocks)?;
        drop(blocks);
        self.net.update_running(&obj.stats);
        Ok(StepReport {
            loss: obj.loss,
            counts,
        })
    }

    /// Layout predicted from each data plane, `N x 8 x H x W`.
    pub fn predict(&self, data: &Tensor4<f32>) -> Result<Tensor4<u8>> {
        score_comparator(&self.net.forward(data)?)
    }

    /// Evaluation-mode loss and metrics pooled over all samples, visited in
    /// order in chunks of `batch_size`.
    pub fn evaluate(&self, samples: &[Sample], batch_size: usize) -> Result<Evaluation> {
        if samples.is_empty() {
            return Err(Error::validation("cannot evaluate an empty dataset"));
        }
        if batch_size == 0 {
            return Err(Error::validation("evaluation batch size must be positive"));
        }
        let cfg = self.net.config();
        let mut counts = ConfusionCounts::default();
        let mut weighted = 0.0;
        let mut rows = 0usize;
        for (k, chunk) in samples.chunks(batch_size).enumerate() {
            let start = k * batch_size;
            let batch = stack(chunk, (start..start + chunk.len()).collect())?;
            let scores = self.net.forward(&batch.data)?;
            let matrix = scores_to_matrix(&scores, cfg.classes)?;
            let targets = labels_to_vector(&batch.labels)?;
            let (loss, _) = weighted_xent(&matrix, &targets, &cfg.loss)?;
            weighted += loss * matrix.rows as f64;
            rows += matrix.rows;
            counts += accumulate(&score_comparator(&scores)?, &batch.labels.map(|v| v as u8))?;
        }
        let weights: Vec<&[f32]> = self.net.stages().iter().map(|s| s.conv.weights.as_slice()).collect();
        let (penalty, _) = l2_penalty(&weights, cfg.loss.l2);
        Ok(Evaluation {
            loss: weighted / rows as f64 + penalty,
            counts,
            summary: counts.summarize(),
        })
    }
}

/// Schedule of a multi-epoch training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seeds the per-epoch shuffles.
    pub shuffle_seed: u64,
}

/// Metrics recorded at the end of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean of the per-step training losses.
    pub mean_step_loss: f64,
    pub train: Evaluation,
    pub validation: Option<Evaluation>,
}

impl EpochRecord {
    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = vec![self.train.csv_row(self.epoch, "train")];
        if let Some(v) = &self.validation {
            rows.push(v.csv_row(self.epoch, "val"));
        }
        rows
    }
}

/// Shuffle seed of one epoch, derived from the run seed.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains for `settings.epochs` epochs, evaluating after each one and
/// handing the record and model to `on_epoch`.
pub fn train(
    model: &mut FcnModel,
    train_set: &[Sample],
    validation: Option<&[Sample]>,
    settings: &TrainSettings,
    mut on_epoch: impl FnMut(&EpochRecord, &FcnModel) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    if settings.batch_size == 0 || settings.batch_size > train_set.len() {
        return Err(Error::validation(format!(
            "batch size must be in 1..={}, got {}",
            train_set.len(),
            settings.batch_size
        )));
    }
    let mut records = Vec::with_capacity(settings.epochs);
    for e in 0..settings.epochs {
        let order = epoch_order(train_set.len(), epoch_seed(settings.shuffle_seed, e));
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for idx in order.chunks(settings.batch_size) {
            let picked: Vec<Sample> = idx.iter().map(|&i| train_set[i].clone()).collect();
            let batch = stack(&picked, idx.to_vec())?;
            loss_sum += model.train_step(&batch.data, &batch.labels, settings.learning_rate)?.loss;
            steps += 1;
        }
        let eval_batch = settings.batch_size.max(10);
        let record = EpochRecord {
            epoch: e + 1,
            mean_step_loss: loss_sum / steps as f64,
            train: model.evaluate(train_set, eval_batch)?,
            validation: validation.map(|v| model.evaluate(v, eval_batch)).transpose()?,
        };
        on_epoch(&record, model)?;
        records.push(record);
    }
    Ok(records)
}
