use alloc::vec::Vec;

use rand::Rng;

use super::{batch_gradients, example_loss, Example, Objective, TrainError};
use crate::model::{DualHeadModel, ParamId};
use crate::rng::ChaCha8Rng;
use crate::tensor::Tape;

/// Outcome of comparing backprop against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: (alloc::string::String, usize),
}

/// Magnitude below which gradients are compared absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

fn batch_loss(model: &DualHeadModel<f64>, batch: &[&Example], objective: Objective) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for ex in batch {
        let mut tape = Tape::untracked();
        let bound = model.params().bind(&mut tape, |_| false);
        total += example_loss(model, &mut tape, &bound, ex, objective, None)?.1.total;
    }
    Ok(total / batch.len() as f64)
}

/// Checks the gradient of the mean batch loss for every parameter
/// coordinate, or for `sample` coordinates per parameter drawn with `rng`.
/// Relative error is `|a - n| / max(|a|, |n|, GRADCHECK_FLOOR)`.
pub fn check_gradients(
    model: &DualHeadModel<f64>,
    batch: &[&Example],
    objective: Objective,
    eps: f64,
    sample: Option<(usize, &mut ChaCha8Rng)>,
) -> Result<GradCheck, TrainError> {
    let mask = alloc::vec![true; model.params().len()];
    let analytic = batch_gradients(model, batch, objective, &mask, None)?;
    let mut probe = model.clone();
    let ids: Vec<ParamId> = model.params().iter().map(|(id, _)| id).collect();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: (alloc::string::String::new(), 0),
    };
    let mut sample = sample;
    for id in ids {
        let len = model.params().value(id).len();
        let coords: Vec<usize> = match sample.as_mut() {
            Some((k, rng)) if *k < len => (0..*k).map(|_| rng.random_range(0..len)).collect(),
            _ => (0..len).collect(),
        };
        let grad = analytic.grads[id.index()].as_ref().expect("all parameters are tracked");
        for c in coords {
            let orig = model.params().value(id).data()[c];
            probe.params_mut().value_mut(id).data_mut()[c] = orig + eps;
            let plus = batch_loss(&probe, batch, objective)?;
            probe.params_mut().value_mut(id).data_mut()[c] = orig - eps;
            let minus = batch_loss(&probe, batch, objective)?;
            probe.params_mut().value_mut(id).data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            out.coords_checked += 1;
            if rel > out.max_rel_error {
                out.max_rel_error = rel;
                out.worst = (model.params().get(id).name.clone(), c);
            }
        }
    }
    Ok(out)
}
