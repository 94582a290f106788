//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations are exposed on the toy sinusoid: incremental training at
//! a chosen dropout rate, test-time prediction against the dropout-averaged
//! expected output, and per-leaf routing of a single input under a sampled
//! mask.

use hmoe::data::{gen_sinusoid, sinusoid_grid, SINUSOID_HALF_RANGE};
use hmoe::dropout::{mask_rng, sample_mask};
use hmoe::optim::Trainer;
use hmoe::report::{predict_grid, total_variation, uniform_grid};
use hmoe::{evaluate, expected_output, Dataset, ModelConfig, Task, TrainHyper};
use wasm_bindgen::prelude::*;

fn js(e: hmoe::HmoeError) -> JsError {
    JsError::new(&e.to_string())
}

/// A toy regression run that the page drives a few epochs at a time.
#[wasm_bindgen]
pub struct ToyDemo {
    data: Dataset,
    reference: Dataset,
    trainer: Trainer,
    seed: u64,
}

#[wasm_bindgen]
impl ToyDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(
        depth: usize,
        points: usize,
        noise: f64,
        dropout: f64,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
    ) -> Result<ToyDemo, JsError> {
        let data = gen_sinusoid(points, noise, seed).map_err(js)?;
        let reference = sinusoid_grid(400, -SINUSOID_HALF_RANGE, SINUSOID_HALF_RANGE).map_err(js)?;
        let config = ModelConfig::new(depth, 1, 1, Task::Regression).map_err(js)?;
        let mut hyper = TrainHyper {
            dropout: Some(dropout),
            batch_size,
            seed,
            ..Default::default()
        };
        hyper.adam.learning_rate = learning_rate;
        let trainer = Trainer::new(config, hyper).map_err(js)?;
        Ok(ToyDemo {
            data,
            reference,
            trainer,
            seed,
        })
    }

    /// Runs `epochs` more epochs and returns the last epoch's online loss.
    pub fn train(&mut self, epochs: usize) -> Result<f64, JsError> {
        let mut last = f64::NAN;
        for _ in 0..epochs {
            last = self.trainer.run_epoch(&self.data).map_err(js)?.0;
        }
        Ok(last)
    }

    pub fn epoch(&self) -> usize {
        self.trainer.epoch()
    }

    pub fn internal_nodes(&self) -> usize {
        self.trainer.model().config().internal_count()
    }

    pub fn data_x(&self) -> Vec<f64> {
        self.data.features().to_vec()
    }

    pub fn data_y(&self) -> Vec<f64> {
        match self.data.targets() {
            hmoe::Targets::Real { values, .. } => values.clone(),
            hmoe::Targets::Classes(_) => Vec::new(),
        }
    }

    /// `points` evenly spaced inputs across the sinusoid domain.
    pub fn grid(&self, points: usize) -> Vec<f64> {
        uniform_grid(-SINUSOID_HALF_RANGE, SINUSOID_HALF_RANGE, points)
    }

    /// Mask-free predictions over [`ToyDemo::grid`].
    pub fn predict(&self, points: usize) -> Result<Vec<f64>, JsError> {
        predict_grid(self.trainer.model(), &self.grid(points)).map_err(js)
    }

    /// Output averaged over masks drawn at rate `p`, over [`ToyDemo::grid`].
    pub fn expected(&self, points: usize, p: f64) -> Result<Vec<f64>, JsError> {
        self.grid(points)
            .iter()
            .map(|&x| Ok(expected_output(self.trainer.model(), &[x], p).map_err(js)?[0]))
            .collect()
    }

    /// Mask-free mean squared error against the noiseless sinusoid.
    pub fn reference_mse(&self) -> Result<f64, JsError> {
        Ok(evaluate(self.trainer.model(), &self.reference).map_err(js)?.error)
    }

    pub fn total_variation(&self, points: usize) -> Result<f64, JsError> {
        total_variation(self.trainer.model(), &self.grid(points)).map_err(js)
    }

    /// Leaf path weights for input `x`, left to right, under a mask drawn at
    /// rate `p` from stream `draw`; `p = 0` gives the unmasked routing.
    pub fn routing(&self, x: f64, p: f64, draw: u64) -> Result<Vec<f64>, JsError> {
        let model = self.trainer.model();
        let mask = if p > 0.0 {
            Some(sample_mask(model.config(), p, &mut mask_rng(self.seed, u64::MAX, draw)).map_err(js)?)
        } else {
            None
        };
        let (_, trace) = model.forward(&[x], mask.as_ref()).map_err(js)?;
        Ok(trace.leaf_path_weights())
    }

    /// Leaf values, left to right.
    pub fn leaf_values(&self) -> Vec<f64> {
        self.trainer.model().leaves().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_trains_and_reports() {
        let mut demo = ToyDemo::new(4, 50, 0.1, 0.2, 1e-2, 16, 1).unwrap();
        let before = demo.reference_mse().unwrap();
        demo.train(30).unwrap();
        assert_eq!(demo.epoch(), 30);
        assert!(demo.reference_mse().unwrap() < before);
        assert_eq!(demo.predict(100).unwrap().len(), 100);
        assert_eq!(demo.expected(100, 0.0).unwrap(), demo.predict(100).unwrap());
        let weights = demo.routing(0.5, 0.3, 2).unwrap();
        assert_eq!(weights.len(), 16);
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(demo.data_x().len(), demo.data_y().len());
    }
}
