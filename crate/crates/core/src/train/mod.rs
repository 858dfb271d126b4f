//! Masked BCE training with Adam, early stopping on validation AUC, metrics
//! and the ablation suite.

mod ablation;
mod config;
mod early;
mod metrics;
mod optim;
mod trainer;

pub use ablation::{run_ablation_suite, write_ablation_csv, AblationResult, AblationRow};
pub use config::{parse_pairs, ConfigError, TrainConfig};
pub use early::{EarlyStopping, Verdict};
pub use metrics::{accuracy, auc, MetricError};
pub use optim::{adam_step, AdamConfig, AdamState, GradBuffer};
pub use trainer::{
    batch_gradients, evaluate, fit_batch, prepare_split, train, EpochRecord, Evaluation, RunReport, SplitSizes,
    TrainOutcome,
};

use thiserror::Error;

use crate::autodiff::{Tape, TensorError, Var};
use crate::data::DataError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}, gradient norm {grad_norm}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
        grad_norm: f64,
    },
    #[error("gradient for `{param}` has {got} entries, expected {expected}")]
    GradShape { param: String, expected: usize, got: usize },
    #[error("no training window has a prediction target")]
    NoTrainingData,
}

/// Mean binary cross-entropy over cells where `mask` is true.
pub fn bce_loss_masked(tape: &mut Tape<'_>, probs: Var, targets: &[f64], mask: &[bool]) -> Result<Var, TensorError> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(TensorError::EmptyMask);
    }
    tape.bce_masked(probs, targets, mask, n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_reference_values() {
        let mut tape = Tape::new();
        let p = tape.constant(vec![0.5, 0.9], &[1, 2]).unwrap();
        let l = bce_loss_masked(&mut tape, p, &[1.0, 0.0], &[true, false]).unwrap();
        assert!((tape.value(l)[0] - std::f64::consts::LN_2).abs() < 1e-15);

        let mut tape = Tape::new();
        let p = tape.constant(vec![1.0, 0.0], &[2]).unwrap();
        let l = bce_loss_masked(&mut tape, p, &[1.0, 0.0], &[true, true]).unwrap();
        assert!(tape.value(l)[0] <= 1e-6);

        let mut tape = Tape::new();
        let p = tape.constant(vec![0.3], &[1]).unwrap();
        assert_eq!(bce_loss_masked(&mut tape, p, &[1.0], &[false]), Err(TensorError::EmptyMask));
    }
}
