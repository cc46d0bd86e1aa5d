use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{clsgen_records, dev_metrics, DevObserver, EvalContext, EvalError};
use crate::metrics::spearman;
use crate::model::DualHeadModel;
use crate::synth::Instance;
use crate::tensor::Real;
use crate::training::{train, DevMetrics, EpochRecord, Example, TrainConfig};

/// Per-epoch dev curves. Index 0 is the starting model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseCurves {
    pub epochs: Vec<usize>,
    pub parsability: Vec<f64>,
    pub auroc: Vec<Option<f64>>,
    pub kappa: Vec<Option<f64>>,
    /// Spearman correlation of kappa with the epoch index over the trained
    /// epochs; an undefined kappa (no parsable output) counts as 0.
    pub kappa_trend: Option<f64>,
    /// Same for head AUROC, undefined values skipped.
    pub auroc_trend: Option<f64>,
    pub records: Vec<EpochRecord>,
}

impl CollapseCurves {
    fn from_metrics(start: DevMetrics, records: Vec<EpochRecord>) -> Self {
        let all: Vec<(usize, &DevMetrics)> = core::iter::once((0, &start))
            .chain(records.iter().map(|r| (r.epoch, &r.dev)))
            .collect();
        let trained = &all[1..];
        let idx: Vec<f64> = trained.iter().map(|(e, _)| *e as f64).collect();
        let kappa: Vec<f64> = trained.iter().map(|(_, m)| m.kappa.unwrap_or(0.0)).collect();
        let (ai, av): (Vec<f64>, Vec<f64>) = trained
            .iter()
            .filter_map(|(e, m)| m.auroc_cls.map(|a| (*e as f64, a)))
            .unzip();
        Self {
            epochs: all.iter().map(|(e, _)| *e).collect(),
            parsability: all.iter().map(|(_, m)| m.parsability.unwrap_or(0.0)).collect(),
            auroc: all.iter().map(|(_, m)| m.auroc_cls).collect(),
            kappa: all.iter().map(|(_, m)| m.kappa).collect(),
            kappa_trend: spearman(&idx, &kappa),
            auroc_trend: spearman(&ai, &av),
            records,
        }
    }
}

/// Scores the starting model on `dev`, trains with `config` (classification
/// only for the ablation, joint for the control), and records parsability,
/// head AUROC and head-text kappa after every epoch.
pub fn collapse_ablation<T: Real>(
    model: &mut DualHeadModel<T>,
    train_data: &[Example],
    dev: &[Instance],
    ctx: &EvalContext<'_>,
    config: &TrainConfig,
) -> Result<CollapseCurves, EvalError> {
    if dev.is_empty() {
        return Err(EvalError::Empty);
    }
    let start = dev_metrics(&clsgen_records(model, ctx, dev)?);
    let mut observer = DevObserver {
        ctx: *ctx,
        dev,
        dev_examples: None,
        objective: crate::training::Objective::cls_only(),
        on_epoch: |_: &DualHeadModel<T>, _: &_, _: &DevMetrics| Ok(None),
    };
    let records = train(model, train_data, config, &mut observer)?;
    Ok(CollapseCurves::from_metrics(start, records))
}
