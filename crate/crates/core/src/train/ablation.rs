use std::io::Write;

use serde::Serialize;

use super::{train, RunReport, TrainConfig, TrainError};
use crate::data::{DataError, Dataset};
use crate::model::VariantKind;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: VariantKind,
    pub auc: f64,
    pub acc: f64,
    pub best_epoch: usize,
}

pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub reports: Vec<RunReport>,
}

/// Trains each of `variants` (the four ablation variants when empty) from
/// `base`, with the same seed and therefore the same split.
pub fn run_ablation_suite(
    base: &TrainConfig,
    dataset: &Dataset,
    variants: &[VariantKind],
) -> Result<AblationResult, TrainError> {
    let variants = if variants.is_empty() {
        &VariantKind::ABLATIONS[..]
    } else {
        variants
    };
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &variant in variants {
        let cfg = TrainConfig {
            variant,
            ..base.clone()
        };
        let out = train(&cfg, dataset)?;
        rows.push(AblationRow {
            variant,
            auc: out.report.test_auc,
            acc: out.report.test_acc,
            best_epoch: out.report.best_epoch,
        });
        reports.push(out.report);
    }
    Ok(AblationResult { rows, reports })
}

/// CSV with columns `variant,auc,acc,best_epoch`.
pub fn write_ablation_csv(rows: &[AblationRow], writer: impl Write) -> Result<(), DataError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: "<ablation writer>".into(),
        source,
    })?;
    Ok(())
}
