use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamConfig, AdamState, EarlyStopping, GradBuffer, TrainConfig, TrainError};
use crate::autodiff::Tape;
use crate::data::{split_students, window_and_pad, window_sequences, Batch, Dataset, Sequence, StudentSplit, Window};
use crate::layers::Mode;
use crate::model::{Model, VariantKind};
use crate::parallel::{map_ordered, Execution};
use crate::rng::stream_rng;

const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Result of one training run. Test metrics come from the parameters of
/// `best_epoch` and are computed once.
///
/// `wall_time_secs` is not serialised so that reruns produce identical
/// report files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: VariantKind,
    pub seed: u64,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub n_params: usize,
    pub students: SplitSizes,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub stopped_epoch: usize,
    pub early_stopped: bool,
    pub test_auc: f64,
    pub test_acc: f64,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}

pub struct TrainOutcome {
    pub report: RunReport,
    /// Parameters restored to the best validation epoch.
    pub model: Model,
    pub split: StudentSplit,
}

/// Flattened predictions at every position that has a target.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub probs: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Evaluation {
    pub fn auc(&self) -> Result<f64, super::MetricError> {
        super::auc(&self.probs, &self.labels)
    }

    pub fn accuracy(&self) -> Result<f64, super::MetricError> {
        super::accuracy(&self.probs, &self.labels, 0.5)
    }
}

pub fn evaluate(model: &Model, batches: &[Batch], execution: Execution) -> Result<Evaluation, TrainError> {
    let per_batch = map_ordered(batches, execution, |_, b| model.predict(b));
    let mut out = Evaluation {
        probs: Vec::new(),
        labels: Vec::new(),
    };
    for (b, probs) in batches.iter().zip(per_batch) {
        let probs = probs?;
        for i in 0..b.len() {
            if b.valid_mask[i] {
                out.probs.push(probs[i]);
                out.labels.push(b.targets[i] as u8);
            }
        }
    }
    Ok(out)
}

/// Mean masked BCE of `batch` and its gradient.
///
/// The batch is cut into shards of `shard_size` rows, each with its own tape
/// and dropout stream `(seed, "dropout", epoch, batch, shard)`. Shard losses
/// are normalised by the batch's total target count and summed in shard
/// order, so the result does not depend on how shards are scheduled.
pub fn batch_gradients(
    model: &Model,
    batch: &Batch,
    dropout: f64,
    shard_size: usize,
    stream: (u64, usize, usize),
    execution: Execution,
) -> Result<(f64, GradBuffer), TrainError> {
    batch.validate(model.dims.max_seq_len).map_err(crate::model::ModelError::from)?;
    let total = batch.n_targets();
    if total == 0 {
        return Err(TrainError::NoTrainingData);
    }
    let (seed, epoch, batch_idx) = stream;
    let ranges: Vec<std::ops::Range<usize>> = (0..batch.batch_size)
        .step_by(shard_size.max(1))
        .map(|s| s..(s + shard_size.max(1)).min(batch.batch_size))
        .collect();
    let shard_results = map_ordered(&ranges, execution, |k, range| -> Result<_, TrainError> {
        let shard = batch.rows(range.clone());
        if shard.n_targets() == 0 {
            return Ok((0.0, None));
        }
        let mut rng = stream_rng(seed, "dropout", &[epoch as u64, batch_idx as u64, k as u64]);
        let mut mode = Mode::Train { dropout, rng: &mut rng };
        let mut tape = Tape::new();
        let out = model.forward_vars(&mut tape, &shard, &mut mode)?;
        let loss = tape.bce_masked(out.probs, &shard.targets, &shard.valid_mask, total as f64)?;
        let grads = tape.backward(loss)?;
        let mut buf = GradBuffer::zeros(model.store());
        buf.add_gradients(&grads);
        Ok((tape.value(loss)[0], Some(buf)))
    });
    let mut loss = 0.0;
    let mut grads = GradBuffer::zeros(model.store());
    for r in shard_results {
        let (l, g) = r?;
        loss += l;
        if let Some(g) = g {
            grads.add(&g);
        }
    }
    Ok((loss, grads))
}

/// Repeated Adam steps on one fixed batch; returns the loss before each step.
pub fn fit_batch(
    model: &mut Model,
    batch: &Batch,
    steps: usize,
    adam: &AdamConfig,
    dropout: f64,
    seed: u64,
) -> Result<Vec<f64>, TrainError> {
    let mut state = AdamState::new(model.store());
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (loss, grads) = batch_gradients(model, batch, dropout, batch.batch_size, (seed, 0, step), Execution::Sequential)?;
        if !loss.is_finite() {
            return Err(TrainError::Divergence {
                epoch: 0,
                batch: step,
                loss,
                grad_norm: grads.norm(),
            });
        }
        losses.push(loss);
        adam_step(model.store_mut(), &grads, &mut state, adam)?;
    }
    Ok(losses)
}

/// Optional subsample, then the student-level split.
pub fn prepare_split(config: &TrainConfig, sequences: &[Sequence]) -> Result<StudentSplit, TrainError> {
    let chosen: Vec<Sequence> = if config.subsample_students > 0 && config.subsample_students < sequences.len() {
        let mut idx: Vec<usize> = (0..sequences.len()).collect();
        idx.shuffle(&mut stream_rng(config.seed, "subsample", &[]));
        let mut keep = idx[..config.subsample_students].to_vec();
        keep.sort_unstable();
        keep.into_iter().map(|i| sequences[i].clone()).collect()
    } else {
        sequences.to_vec()
    };
    Ok(split_students(
        &chosen,
        config.train_ratio,
        config.validation_fraction,
        config.split_seed(),
    )?)
}

/// Full protocol: split, train with early stopping on validation AUC,
/// restore the best epoch, evaluate on test once.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let started = Instant::now();
    let split = prepare_split(config, &dataset.sequences)?;
    let dims = config.dims(dataset.n_questions(), dataset.n_kcs(), dataset.n_literacy());
    let mut model = Model::new(config.variant, dims, &mut stream_rng(config.seed, "init", &[]))?;
    let len = config.max_seq_len;

    let windows: Vec<Window> = window_sequences(&split.train, len)
        .into_iter()
        .filter(|w| w.n_targets() > 0)
        .collect();
    if windows.is_empty() {
        return Err(TrainError::NoTrainingData);
    }
    let val_batches = window_and_pad(&split.validation, len, EVAL_BATCH);
    let test_batches = window_and_pad(&split.test, len, EVAL_BATCH);
    log::info!(
        "{}: {} parameters, {} train windows, students {}/{}/{}",
        config.variant,
        model.n_params(),
        windows.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );

    let adam = config.adam();
    let mut state = AdamState::new(model.store());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.store().clone();
    let mut epochs = Vec::new();
    let mut stopped_epoch = config.max_epochs;
    let mut early_stopped = false;
    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut stream_rng(config.seed, "shuffle", &[epoch as u64]));
        let mut weighted = 0.0;
        let mut targets = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let rows: Vec<&Window> = chunk.iter().map(|&i| &windows[i]).collect();
            let batch = Batch::from_windows(&rows);
            let (loss, grads) = batch_gradients(
                &model,
                &batch,
                config.dropout,
                config.shard_size,
                (config.seed, epoch, bi),
                config.execution,
            )?;
            let grad_norm = grads.norm();
            if !loss.is_finite() || !grad_norm.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    batch: bi,
                    loss,
                    grad_norm,
                });
            }
            adam_step(model.store_mut(), &grads, &mut state, &adam)?;
            let n = batch.n_targets();
            weighted += loss * n as f64;
            targets += n;
        }
        let val = evaluate(&model, &val_batches, config.execution)?;
        let record = EpochRecord {
            epoch,
            train_loss: weighted / targets as f64,
            val_auc: val.auc()?,
            val_acc: val.accuracy()?,
        };
        log::info!(
            "{} epoch {epoch}: loss {:.4} val auc {:.4} acc {:.4}",
            config.variant,
            record.train_loss,
            record.val_auc,
            record.val_acc
        );
        let verdict = stopper.observe(epoch, record.val_auc);
        epochs.push(record);
        if verdict.improved {
            best = model.store().clone();
        }
        if verdict.stop {
            stopped_epoch = epoch;
            early_stopped = true;
            break;
        }
    }

    model.load_values(&best)?;
    let test = evaluate(&model, &test_batches, config.execution)?;
    let wall_time_secs = started.elapsed().as_secs_f64();
    log::info!("{} finished in {wall_time_secs:.1}s", config.variant);
    let report = RunReport {
        variant: config.variant,
        seed: config.seed,
        config_hash: config.hash(),
        config: config.to_map(),
        n_params: model.n_params(),
        students: SplitSizes {
            train: split.train.len(),
            validation: split.validation.len(),
            test: split.test.len(),
        },
        epochs,
        best_epoch: stopper.best_epoch(),
        best_val_auc: stopper.best().unwrap_or(f64::NAN),
        stopped_epoch,
        early_stopped,
        test_auc: test.auc()?,
        test_acc: test.accuracy()?,
        wall_time_secs,
    };
    Ok(TrainOutcome { report, model, split })
}
