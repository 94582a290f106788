use serde::{Deserialize, Serialize};

use crate::error::{HmoeError, Result};
use crate::grad::Gradients;
use crate::tree::{ModelConfig, TreeModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(self, learning_rate: f64) -> Self {
        AdamConfig { learning_rate, ..self }
    }
}

/// First and second moment estimates for every model parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub hyper: AdamConfig,
    step: u64,
    config: ModelConfig,
    // Gates then leaves, matching `Gradients::iter`.
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(config: &ModelConfig, hyper: AdamConfig) -> Self {
        let n = config.parameter_count();
        AdamState {
            hyper,
            step: 0,
            config: *config,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }
}

/// Applies one bias-corrected Adam update to every parameter of `model`.
pub fn adam_step(state: &mut AdamState, model: &mut TreeModel, grads: &Gradients) -> Result<()> {
    if model.config() != &state.config || grads.config() != &state.config {
        return Err(HmoeError::InvalidConfig(
            "optimizer state, model and gradients disagree on shape".into(),
        ));
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.hyper;
    let t = state.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);

    let gate_count = model.gates().len();
    let (m_gates, m_leaves) = state.first_moment.split_at_mut(gate_count);
    let (v_gates, v_leaves) = state.second_moment.split_at_mut(gate_count);
    let update = |theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for (((theta, &g), m), v) in theta.iter_mut().zip(g).zip(m).zip(v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *theta -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    };
    update(model.gates_mut(), grads.gates(), m_gates, v_gates);
    update(model.leaves_mut(), grads.leaves(), m_leaves, v_leaves);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::Task;

    fn tiny() -> (ModelConfig, TreeModel) {
        let cfg = ModelConfig::new(1, 1, 1, Task::Regression).unwrap();
        (cfg, TreeModel::init(cfg, 0).unwrap())
    }

    #[test]
    fn zero_gradient_on_fresh_state_is_a_no_op() {
        let (cfg, mut model) = tiny();
        let before = model.clone();
        let mut state = AdamState::new(&cfg, AdamConfig::default());
        adam_step(&mut state, &mut model, &Gradients::zeros(&cfg)).unwrap();
        assert_eq!(model, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (cfg, mut model) = tiny();
        let before = model.clone();
        let mut grads = Gradients::zeros(&cfg);
        grads.leaves_mut()[0] = 1.0;
        let mut state = AdamState::new(&cfg, AdamConfig::default());
        adam_step(&mut state, &mut model, &grads).unwrap();
        let delta = model.leaves()[0] - before.leaves()[0];
        assert!((delta + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(model.leaves()[1], before.leaves()[1]);
        assert_eq!(model.gates(), before.gates());
        assert!(state.second_moment().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (cfg, mut model) = tiny();
        let other = ModelConfig::new(2, 1, 1, Task::Regression).unwrap();
        let mut state = AdamState::new(&cfg, AdamConfig::default());
        assert!(adam_step(&mut state, &mut model, &Gradients::zeros(&other)).is_err());
    }
}
