use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{EpochRecord, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Position in the record list.
    pub index: usize,
    pub epoch: usize,
    pub scores: Vec<f64>,
}

/// z-score of each value within its series (population deviation). A
/// constant series scores 0 everywhere. Missing values are imputed with the
/// series minimum; an all-missing series scores 0.
fn zscores(series: &[Option<f64>]) -> Vec<f64> {
    let present: Vec<f64> = series.iter().flatten().copied().collect();
    if present.is_empty() {
        return alloc::vec![0.0; series.len()];
    }
    let min = present.iter().copied().fold(f64::INFINITY, f64::min);
    let filled: Vec<f64> = series.iter().map(|v| v.unwrap_or(min)).collect();
    let n = filled.len() as f64;
    let mean = filled.iter().sum::<f64>() / n;
    let var = filled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if filled.iter().all(|&v| v == filled[0]) || var == 0.0 {
        return alloc::vec![0.0; filled.len()];
    }
    let sd = Float::sqrt(var);
    filled.iter().map(|v| (v - mean) / sd).collect()
}

/// Sum of per-metric z-scores over the epochs, one row per epoch of
/// `[auroc_cls, auroc_align, kappa]`.
pub fn quality_scores(rows: &[[Option<f64>; 3]]) -> Vec<f64> {
    let mut total = alloc::vec![0.0; rows.len()];
    for m in 0..3 {
        let series: Vec<Option<f64>> = rows.iter().map(|r| r[m]).collect();
        for (t, z) in total.iter_mut().zip(zscores(&series)) {
            *t += z;
        }
    }
    total
}

/// Scores closer than this count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// The record maximising the quality score; ties go to the earliest.
pub fn select_checkpoint(records: &[EpochRecord]) -> Result<Selection, TrainError> {
    if records.is_empty() {
        return Err(TrainError::NoRecords);
    }
    let rows: Vec<[Option<f64>; 3]> = records
        .iter()
        .map(|r| [r.dev.auroc_cls, r.dev.auroc_align, r.dev.kappa])
        .collect();
    let scores = quality_scores(&rows);
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] + TIE_TOLERANCE {
            best = i;
        }
    }
    Ok(Selection {
        index: best,
        epoch: records[best].epoch,
        scores,
    })
}
