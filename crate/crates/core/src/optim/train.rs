use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, evaluate, example_error, loss_into, AdamConfig, AdamState, Evaluation};
use crate::data::{Dataset, Targets};
use crate::dropout::{mask_rng, sample_mask_into, DropoutMask, MaskGranularity};
use crate::error::{HmoeError, Result};
use crate::grad::{accumulate_backward, Gradients};
use crate::par;
use crate::tree::{GatingTrace, ModelConfig, Task, TreeModel};

/// Examples per gradient work unit. Fixed so that the reduction order, and
/// therefore every bit of the result, is independent of the thread count.
const GRAD_CHUNK: usize = 8;

/// Stream id separating the shuffling generator from the init generator.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

pub const CURVES_HEADER: &str = "epoch,train_loss,train_err,val_err,test_err";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    /// Subtree dropout rate; `None` disables mask sampling entirely.
    pub dropout: Option<f64>,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mask_granularity: MaskGranularity,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            dropout: None,
            adam: AdamConfig::default(),
            epochs: 100,
            batch_size: 64,
            seed: 0,
            mask_granularity: MaskGranularity::Example,
        }
    }
}

impl TrainHyper {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(HmoeError::InvalidConfig("batch size must be positive".into()));
        }
        if let Some(p) = self.dropout {
            if !(0.0..=1.0).contains(&p) {
                return Err(HmoeError::InvalidRate(p));
            }
        }
        let lr = self.adam.learning_rate;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(HmoeError::InvalidConfig(format!("learning rate {lr} must be positive")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub val: Option<&'a Dataset>,
    pub test: Option<&'a Dataset>,
}

/// One row of the learning curves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's presentations, masks active. Epoch 0
    /// reports the mask-free loss of the initial model instead.
    pub train_loss: f64,
    /// Online training error with masks active; mask-free at epoch 0.
    pub train_err: f64,
    pub val_err: Option<f64>,
    pub test_err: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub config: ModelConfig,
    pub hyper: TrainHyper,
    /// Epoch 0 (initial model) through `hyper.epochs`.
    pub records: Vec<EpochRecord>,
    pub best_val_epoch: Option<usize>,
    pub best_val_error: Option<f64>,
    /// Test error of the best-validation model.
    pub best_test_error: Option<f64>,
    pub final_test_error: Option<f64>,
    /// Mask-free evaluation of the final model on the training set.
    pub final_train: Evaluation,
    /// Snapshot at `best_val_epoch`; the final model when there is no validation set.
    pub best_model: TreeModel,
    pub final_model: TreeModel,
}

impl TrainReport {
    pub fn final_record(&self) -> &EpochRecord {
        self.records.last().expect("report always holds the initial evaluation")
    }

    /// Writes the learning curves as CSV under [`CURVES_HEADER`].
    pub fn write_curves<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CURVES_HEADER}")?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                r.train_err,
                opt(r.val_err),
                opt(r.test_err)
            )?;
        }
        Ok(())
    }
}

/// Per-work-unit scratch space.
struct Partial {
    grads: Gradients,
    trace: GatingTrace,
    mask: DropoutMask,
    upstream: Vec<f64>,
    loss: f64,
    err: f64,
    status: Result<()>,
}

impl Partial {
    fn new(config: &ModelConfig) -> Self {
        Partial {
            grads: Gradients::zeros(config),
            trace: GatingTrace::new(config),
            mask: DropoutMask::keep_all(config),
            upstream: vec![0.0; config.output_dim],
            loss: 0.0,
            err: 0.0,
            status: Ok(()),
        }
    }
}

/// Epoch-at-a-time training state.
pub struct Trainer {
    model: TreeModel,
    adam: AdamState,
    hyper: TrainHyper,
    order: Vec<usize>,
    shuffle_rng: ChaCha8Rng,
    epoch: usize,
    partials: Vec<Partial>,
    grads: Gradients,
    batch_mask: DropoutMask,
}

fn check_dataset(config: &ModelConfig, data: &Dataset, role: &str) -> Result<()> {
    if data.is_empty() {
        return Err(HmoeError::EmptyDataset(format!("{role} set '{}'", data.name())));
    }
    if data.dim() != config.input_dim {
        return Err(HmoeError::DimensionMismatch {
            what: "dataset features",
            expected: config.input_dim,
            actual: data.dim(),
        });
    }
    match (config.task, data.targets()) {
        (Task::Classification, Targets::Classes(_)) => {
            if data.output_dim() > config.output_dim {
                return Err(HmoeError::ClassOutOfRange {
                    index: data.output_dim() - 1,
                    classes: config.output_dim,
                });
            }
        }
        (Task::Regression, Targets::Real { dim, .. }) => {
            if *dim != config.output_dim {
                return Err(HmoeError::DimensionMismatch {
                    what: "regression targets",
                    expected: config.output_dim,
                    actual: *dim,
                });
            }
        }
        (task, _) => {
            return Err(HmoeError::InvalidConfig(format!(
                "{role} set '{}' does not carry {task:?} targets",
                data.name()
            )))
        }
    }
    Ok(())
}

impl Trainer {
    pub fn new(config: ModelConfig, hyper: TrainHyper) -> Result<Self> {
        let model = TreeModel::init(config, hyper.seed)?;
        Trainer::from_model(model, hyper)
    }

    /// Continues from an existing model with fresh optimizer state.
    pub fn from_model(model: TreeModel, hyper: TrainHyper) -> Result<Self> {
        hyper.validate()?;
        let config = *model.config();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        shuffle_rng.set_stream(SHUFFLE_STREAM);
        let units = hyper.batch_size.div_ceil(GRAD_CHUNK);
        Ok(Trainer {
            adam: AdamState::new(&config, hyper.adam),
            model,
            hyper,
            order: Vec::new(),
            shuffle_rng,
            epoch: 0,
            partials: (0..units).map(|_| Partial::new(&config)).collect(),
            grads: Gradients::zeros(&config),
            batch_mask: DropoutMask::keep_all(&config),
        })
    }

    pub fn model(&self) -> &TreeModel {
        &self.model
    }

    pub fn into_model(self) -> TreeModel {
        self.model
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    /// One pass over `train` in a freshly shuffled order. Returns the online
    /// `(mean loss, error)` measured with masks active.
    pub fn run_epoch(&mut self, train: &Dataset) -> Result<(f64, f64)> {
        check_dataset(self.model.config(), train, "training")?;
        self.epoch += 1;
        let epoch = self.epoch as u64;
        if self.order.len() != train.len() {
            self.order = (0..train.len()).collect();
        }
        self.order.shuffle(&mut self.shuffle_rng);

        let (mut loss_sum, mut err_sum) = (0.0, 0.0);
        let hyper = self.hyper;
        let kind = self.model.config().loss_kind();
        for (batch_index, batch) in self.order.chunks(hyper.batch_size).enumerate() {
            let shared_mask = match (hyper.dropout, hyper.mask_granularity) {
                (Some(p), MaskGranularity::Minibatch) => {
                    let mut rng = mask_rng(hyper.seed, epoch, batch_index as u64);
                    sample_mask_into(p, &mut rng, &mut self.batch_mask)?;
                    Some(&self.batch_mask)
                }
                _ => None,
            };
            let used = batch.len().div_ceil(GRAD_CHUNK);
            let model = &self.model;
            par::for_each_indexed(&mut self.partials[..used], |unit, part| {
                part.grads.clear();
                part.loss = 0.0;
                part.err = 0.0;
                let rows = &batch[unit * GRAD_CHUNK..((unit + 1) * GRAD_CHUNK).min(batch.len())];
                part.status = rows.iter().try_for_each(|&i| {
                    let mask = match (hyper.dropout, shared_mask) {
                        (_, Some(shared)) => Some(shared),
                        (Some(p), None) => {
                            let mut rng = mask_rng(hyper.seed, epoch, i as u64);
                            sample_mask_into(p, &mut rng, &mut part.mask)?;
                            Some(&part.mask)
                        }
                        (None, None) => None,
                    };
                    let x = train.row(i);
                    model.forward_into(x, mask, &mut part.trace)?;
                    let y = part.trace.output();
                    let l = loss_into(y, train.target(i), kind, &mut part.upstream)?;
                    if !l.is_finite() {
                        return Err(HmoeError::NonFiniteLoss {
                            epoch: epoch as usize,
                            example: i,
                        });
                    }
                    part.loss += l;
                    part.err += example_error(y, train.target(i));
                    accumulate_backward(model, &part.trace, x, &part.upstream, mask, 1.0, &mut part.grads)
                });
            });

            self.grads.clear();
            for part in &mut self.partials[..used] {
                std::mem::replace(&mut part.status, Ok(()))?;
                self.grads.add_assign(&part.grads);
                loss_sum += part.loss;
                err_sum += part.err;
            }
            self.grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut self.adam, &mut self.model, &self.grads)?;
        }
        if !self.model.all_finite() {
            return Err(HmoeError::NonFiniteLoss {
                epoch: self.epoch,
                example: usize::MAX,
            });
        }
        let n = train.len() as f64;
        Ok((loss_sum / n, err_sum / n))
    }
}

/// Minibatch Adam training with best-validation tracking.
///
/// Every epoch reshuffles the training set, samples masks at the configured
/// granularity, and evaluates the validation and test sets without masks.
pub fn train(config: ModelConfig, hyper: TrainHyper, data: TrainData<'_>) -> Result<TrainReport> {
    train_with_progress(config, hyper, data, |_| {})
}

/// [`train`], calling `on_epoch` after every record including epoch 0.
pub fn train_with_progress(
    config: ModelConfig,
    hyper: TrainHyper,
    data: TrainData<'_>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    config.validate()?;
    hyper.validate()?;
    check_dataset(&config, data.train, "training")?;
    if let Some(val) = data.val {
        check_dataset(&config, val, "validation")?;
    }
    if let Some(test) = data.test {
        check_dataset(&config, test, "test")?;
    }

    let eval_opt = |model: &TreeModel, d: Option<&Dataset>| -> Result<Option<f64>> {
        d.map(|d| evaluate(model, d).map(|e| e.error)).transpose()
    };

    let mut trainer = Trainer::new(config, hyper)?;
    let initial = evaluate(trainer.model(), data.train)?;
    let mut records = vec![EpochRecord {
        epoch: 0,
        train_loss: initial.mean_loss,
        train_err: initial.error,
        val_err: eval_opt(trainer.model(), data.val)?,
        test_err: eval_opt(trainer.model(), data.test)?,
    }];
    let mut best: Option<(usize, f64, Option<f64>, TreeModel)> = records[0]
        .val_err
        .map(|v| (0, v, records[0].test_err, trainer.model().clone()));
    on_epoch(&records[0]);

    for _ in 0..hyper.epochs {
        let (train_loss, train_err) = trainer.run_epoch(data.train)?;
        let record = EpochRecord {
            epoch: trainer.epoch(),
            train_loss,
            train_err,
            val_err: eval_opt(trainer.model(), data.val)?,
            test_err: eval_opt(trainer.model(), data.test)?,
        };
        if let (Some(v), Some((_, best_v, _, _))) = (record.val_err, &best) {
            if v < *best_v {
                best = Some((record.epoch, v, record.test_err, trainer.model().clone()));
            }
        }
        on_epoch(&record);
        records.push(record);
    }

    let final_model = trainer.into_model();
    let final_train = evaluate(&final_model, data.train)?;
    let final_test_error = records.last().and_then(|r| r.test_err);
    let (best_val_epoch, best_val_error, best_test_error, best_model) = match best {
        Some((epoch, v, t, model)) => (Some(epoch), Some(v), t, model),
        None => (None, None, None, final_model.clone()),
    };
    Ok(TrainReport {
        config,
        hyper,
        records,
        best_val_epoch,
        best_val_error,
        best_test_error,
        final_test_error,
        final_train,
        best_model,
        final_model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_sinusoid, split, SplitSpec};

    fn toy() -> (ModelConfig, Dataset, Dataset) {
        let data = gen_sinusoid(60, 0.1, 2).unwrap();
        let (train, val) = split(&data, &SplitSpec::new(5, 1, 0).unwrap()).unwrap();
        (ModelConfig::new(3, 1, 1, Task::Regression).unwrap(), train, val)
    }

    #[test]
    fn zero_epochs_only_evaluates_initial_model() {
        let (cfg, train_set, val) = toy();
        let hyper = TrainHyper {
            epochs: 0,
            ..Default::default()
        };
        let data = TrainData {
            train: &train_set,
            val: Some(&val),
            test: None,
        };
        let report = train(cfg, hyper, data).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.final_model, TreeModel::init(cfg, 0).unwrap());
        assert_eq!(report.best_model, report.final_model);
        assert_eq!(report.best_val_epoch, Some(0));
        assert_eq!(report.final_train.error, report.records[0].train_err);
    }

    #[test]
    fn best_validation_is_the_minimum() {
        let (cfg, train_set, val) = toy();
        let hyper = TrainHyper {
            epochs: 15,
            batch_size: 8,
            adam: AdamConfig::default().with_learning_rate(0.02),
            ..Default::default()
        };
        let data = TrainData {
            train: &train_set,
            val: Some(&val),
            test: Some(&val),
        };
        let report = train(cfg, hyper, data).unwrap();
        let min = report
            .records
            .iter()
            .filter_map(|r| r.val_err)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_val_error, Some(min));
        let best_epoch = report.best_val_epoch.unwrap();
        assert_eq!(report.records[best_epoch].val_err, Some(min));
        assert_eq!(evaluate(&report.best_model, &val).unwrap().error, min);
        assert!(report.records.windows(2).all(|w| w[0].epoch + 1 == w[1].epoch));
        assert!(report.final_train.mean_loss < report.records[0].train_loss);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (cfg, train_set, _) = toy();
        let empty = train_set.head(0);
        let data = TrainData {
            train: &empty,
            val: None,
            test: None,
        };
        assert!(matches!(
            train(cfg, TrainHyper::default(), data),
            Err(HmoeError::EmptyDataset(_))
        ));

        let data = TrainData {
            train: &train_set,
            val: None,
            test: None,
        };
        let bad = TrainHyper {
            batch_size: 0,
            ..Default::default()
        };
        assert!(train(cfg, bad, data).is_err());
        let bad = TrainHyper {
            dropout: Some(1.2),
            ..Default::default()
        };
        assert!(train(cfg, bad, data).is_err());
        let wide = ModelConfig::new(3, 2, 1, Task::Regression).unwrap();
        assert!(matches!(
            train(wide, TrainHyper::default(), data),
            Err(HmoeError::DimensionMismatch { .. })
        ));
        let cls = ModelConfig::new(3, 1, 2, Task::Classification).unwrap();
        assert!(train(cls, TrainHyper::default(), data).is_err());
    }

    #[test]
    fn diverging_training_is_reported() {
        let (cfg, train_set, _) = toy();
        let mut huge = train_set.clone();
        huge = Dataset::new(
            "huge",
            1,
            huge.features().to_vec(),
            Targets::Real {
                dim: 1,
                values: vec![1e300; huge.len()],
            },
        )
        .unwrap();
        let hyper = TrainHyper {
            epochs: 3,
            ..Default::default()
        };
        let data = TrainData {
            train: &huge,
            val: None,
            test: None,
        };
        assert!(matches!(train(cfg, hyper, data), Err(HmoeError::NonFiniteLoss { .. })));
    }

    #[test]
    fn curves_csv_layout() {
        let (cfg, train_set, val) = toy();
        let hyper = TrainHyper {
            epochs: 2,
            ..Default::default()
        };
        let data = TrainData {
            train: &train_set,
            val: Some(&val),
            test: None,
        };
        let report = train(cfg, hyper, data).unwrap();
        let mut out = Vec::new();
        report.write_curves(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CURVES_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,"));
        assert!(lines[3].starts_with("2,") && lines[3].ends_with(','));
    }
}
