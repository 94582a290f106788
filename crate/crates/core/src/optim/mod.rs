//! Losses, the Adam optimizer and the minibatch training loop.

mod adam;
mod loss;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{argmax, loss, loss_into, LossKind, Target};
pub use train::{train, train_with_progress, EpochRecord, TrainData, TrainHyper, TrainReport, Trainer, CURVES_HEADER};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{HmoeError, Result};
use crate::par;
use crate::tree::{GatingTrace, TreeModel};

/// Mask-free metrics of a model on a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean_loss: f64,
    /// Misclassification rate, or mean squared error for regression.
    pub error: f64,
}

/// Rows per evaluation work unit.
const EVAL_CHUNK: usize = 64;

/// Per-example error: 0/1 misclassification, or squared error averaged over
/// output dimensions.
pub(crate) fn example_error(y: &[f64], target: Target<'_>) -> f64 {
    match target {
        Target::Class(c) => f64::from(u8::from(argmax(y) != c)),
        Target::Values(t) => y.iter().zip(t).map(|(y, t)| (y - t) * (y - t)).sum::<f64>() / y.len() as f64,
    }
}

/// Evaluates `model` on every row of `data` with no dropout applied.
pub fn evaluate(model: &TreeModel, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(HmoeError::EmptyDataset(data.name().to_string()));
    }
    let kind = model.config().loss_kind();
    let chunks = data.len().div_ceil(EVAL_CHUNK);
    let mut partials: Vec<Result<(f64, f64)>> = (0..chunks).map(|_| Ok((0.0, 0.0))).collect();
    par::for_each_indexed(&mut partials, |chunk, slot| {
        let mut trace = GatingTrace::new(model.config());
        let mut upstream = vec![0.0; model.config().output_dim];
        let rows = chunk * EVAL_CHUNK..((chunk + 1) * EVAL_CHUNK).min(data.len());
        *slot = rows
            .map(|i| {
                model.forward_into(data.row(i), None, &mut trace)?;
                let y = trace.output();
                let l = loss_into(y, data.target(i), kind, &mut upstream)?;
                Ok((l, example_error(y, data.target(i))))
            })
            .try_fold((0.0, 0.0), |(ls, es), r: Result<(f64, f64)>| {
                r.map(|(l, e)| (ls + l, es + e))
            });
    });
    let (mut loss_sum, mut err_sum) = (0.0, 0.0);
    for partial in partials {
        let (l, e) = partial?;
        loss_sum += l;
        err_sum += e;
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        mean_loss: loss_sum / n,
        error: err_sum / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Targets;
    use crate::tree::{ModelConfig, Task};

    fn classifier() -> TreeModel {
        // Depth 1: the gate looks at the single feature; left leaf favors class 0.
        let cfg = ModelConfig::new(1, 1, 2, Task::Classification).unwrap();
        let mut model = TreeModel::zeros(cfg).unwrap();
        model.gate_weights_mut(1).copy_from_slice(&[20.0, 0.0]);
        model.leaf_value_mut(2).copy_from_slice(&[5.0, -5.0]);
        model.leaf_value_mut(3).copy_from_slice(&[-5.0, 5.0]);
        model
    }

    #[test]
    fn perfect_classifier_has_zero_error() {
        let data = Dataset::new("d", 1, vec![1.0, -1.0, 2.0], Targets::Classes(vec![0, 1, 0])).unwrap();
        let e = evaluate(&classifier(), &data).unwrap();
        assert_eq!(e.error, 0.0);
        assert!(e.mean_loss < 1e-3);
    }

    #[test]
    fn one_of_four_wrong() {
        let data = Dataset::new("d", 1, vec![1.0, -1.0, 2.0, 3.0], Targets::Classes(vec![0, 1, 0, 1])).unwrap();
        assert_eq!(evaluate(&classifier(), &data).unwrap().error, 0.25);
    }

    #[test]
    fn empty_dataset_rejected() {
        let data = Dataset::new("d", 1, vec![], Targets::Classes(vec![])).unwrap();
        assert!(matches!(
            evaluate(&classifier(), &data),
            Err(HmoeError::EmptyDataset(_))
        ));
    }

    #[test]
    fn regression_error_is_mean_squared_error() {
        let cfg = ModelConfig::new(1, 1, 1, Task::Regression).unwrap();
        let mut model = TreeModel::zeros(cfg).unwrap();
        model.leaf_value_mut(2)[0] = 1.0;
        model.leaf_value_mut(3)[0] = 1.0;
        let data = Dataset::new(
            "d",
            1,
            vec![0.0, 5.0],
            Targets::Real {
                dim: 1,
                values: vec![0.0, 3.0],
            },
        )
        .unwrap();
        let e = evaluate(&model, &data).unwrap();
        assert!((e.error - (1.0 + 4.0) / 2.0).abs() < 1e-15);
        assert!((e.mean_loss - e.error / 2.0).abs() < 1e-15);
    }
}
