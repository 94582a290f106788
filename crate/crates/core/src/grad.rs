//! Exact gradients of the loss with respect to all gates and leaves.
//!
//! The root output is linear in every subtree output, with coefficient equal
//! to that node's path weight `P_m`. Hence
//!
//! ```text
//! dL/dc_leaf = P_leaf * dL/dy
//! dL/dw_m    = (dL/dy . (y_2m - y_2m+1)) * a_m (1 - a_m) * P_m * [x; 1]
//! ```
//!
//! for kept internal nodes, and zero for dropped nodes and everything inside a
//! dropped subtree. The mask is treated as a constant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dropout::{sample_mask, DropoutMask};
use crate::error::{HmoeError, Result};
use crate::optim::{loss, LossKind, Target};
use crate::tree::{GatingTrace, ModelConfig, Task, TreeModel};

/// Parameter-shaped gradient buffers, laid out like [`TreeModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    config: ModelConfig,
    gates: Vec<f64>,
    leaves: Vec<f64>,
}

impl Gradients {
    pub fn zeros(config: &ModelConfig) -> Self {
        Gradients {
            config: *config,
            gates: vec![0.0; config.internal_count() * config.gate_len()],
            leaves: vec![0.0; config.leaf_count() * config.output_dim],
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn gates(&self) -> &[f64] {
        &self.gates
    }

    pub fn leaves(&self) -> &[f64] {
        &self.leaves
    }

    pub fn gates_mut(&mut self) -> &mut [f64] {
        &mut self.gates
    }

    pub fn leaves_mut(&mut self) -> &mut [f64] {
        &mut self.leaves
    }

    /// `dL/dw_m` for internal node `node`.
    pub fn gate(&self, node: usize) -> &[f64] {
        let len = self.config.gate_len();
        &self.gates[(node - 1) * len..node * len]
    }

    /// `dL/dc_m` for leaf `node`.
    pub fn leaf(&self, node: usize) -> &[f64] {
        let k = self.config.output_dim;
        let row = node - self.config.first_leaf();
        &self.leaves[row * k..(row + 1) * k]
    }

    fn gate_mut(&mut self, node: usize) -> &mut [f64] {
        let len = self.config.gate_len();
        &mut self.gates[(node - 1) * len..node * len]
    }

    fn leaf_mut(&mut self, node: usize) -> &mut [f64] {
        let k = self.config.output_dim;
        let row = node - self.config.first_leaf();
        &mut self.leaves[row * k..(row + 1) * k]
    }

    pub fn clear(&mut self) {
        self.gates.fill(0.0);
        self.leaves.fill(0.0);
    }

    /// Iterates over all entries, gates first.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.gates.iter().chain(&self.leaves).copied()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.gates.iter_mut().zip(&other.gates) {
            *a += b;
        }
        for (a, b) in self.leaves.iter_mut().zip(&other.leaves) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.gates.iter_mut().chain(self.leaves.iter_mut()) {
            *v *= factor;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }
}

/// Gradients of a single example.
pub fn backward(
    model: &TreeModel,
    trace: &GatingTrace,
    x: &[f64],
    upstream: &[f64],
    mask: Option<&DropoutMask>,
) -> Result<Gradients> {
    let mut grads = Gradients::zeros(model.config());
    accumulate_backward(model, trace, x, upstream, mask, 1.0, &mut grads)?;
    Ok(grads)
}

/// Adds `scale` times the gradients of one example into `grads`.
pub fn accumulate_backward(
    model: &TreeModel,
    trace: &GatingTrace,
    x: &[f64],
    upstream: &[f64],
    mask: Option<&DropoutMask>,
    scale: f64,
    grads: &mut Gradients,
) -> Result<()> {
    let cfg = model.config();
    if trace.config() != cfg || grads.config() != cfg {
        return Err(HmoeError::InvalidConfig(
            "trace or gradient buffer was built for a different model".into(),
        ));
    }
    if x.len() != cfg.input_dim {
        return Err(HmoeError::DimensionMismatch {
            what: "input features",
            expected: cfg.input_dim,
            actual: x.len(),
        });
    }
    if upstream.len() != cfg.output_dim {
        return Err(HmoeError::DimensionMismatch {
            what: "upstream gradient",
            expected: cfg.output_dim,
            actual: upstream.len(),
        });
    }
    if let Some(mask) = mask {
        mask.check_config(cfg)?;
    }

    for m in cfg.first_leaf()..=cfg.node_count() {
        if !trace.is_evaluated(m) {
            continue;
        }
        let p = trace.path_weight(m) * scale;
        for (g, u) in grads.leaf_mut(m).iter_mut().zip(upstream) {
            *g += p * u;
        }
    }

    for m in 1..cfg.first_leaf() {
        if !trace.is_evaluated(m) || mask.is_some_and(|mask| mask.is_dropped(m)) {
            continue;
        }
        let left = trace.node_output(2 * m);
        let right = trace.node_output(2 * m + 1);
        let diff: f64 = upstream
            .iter()
            .zip(left.iter().zip(right))
            .map(|(u, (l, r))| u * (l - r))
            .sum();
        let a = trace.alpha(m);
        let coeff = diff * a * (1.0 - a) * trace.path_weight(m) * scale;
        if coeff == 0.0 {
            continue;
        }
        let g = grads.gate_mut(m);
        let (bias, weights) = g.split_last_mut().expect("gate vector has a bias entry");
        for (g, xi) in weights.iter_mut().zip(x) {
            *g += coeff * xi;
        }
        *bias += coeff;
    }
    Ok(())
}

/// Loss of one example under a fixed mask.
pub fn example_loss(
    model: &TreeModel,
    x: &[f64],
    target: Target<'_>,
    kind: LossKind,
    mask: Option<&DropoutMask>,
) -> Result<f64> {
    let (y, _) = model.forward(x, mask)?;
    Ok(loss(&y, target, kind)?.0)
}

/// Central finite differences `(L(t+h) - L(t-h)) / 2h` for every parameter,
/// holding `mask` fixed across both evaluations.
pub fn fd_gradient(
    model: &TreeModel,
    x: &[f64],
    target: Target<'_>,
    kind: LossKind,
    mask: Option<&DropoutMask>,
    h: f64,
) -> Result<Gradients> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(HmoeError::InvalidConfig(format!("step {h} must be positive")));
    }
    let mut probe = model.clone();
    let mut grads = Gradients::zeros(model.config());

    for i in 0..model.gates().len() {
        let orig = probe.gates()[i];
        probe.gates_mut()[i] = orig + h;
        let plus = example_loss(&probe, x, target, kind, mask)?;
        probe.gates_mut()[i] = orig - h;
        let minus = example_loss(&probe, x, target, kind, mask)?;
        probe.gates_mut()[i] = orig;
        grads.gates[i] = (plus - minus) / (2.0 * h);
    }
    for i in 0..model.leaves().len() {
        let orig = probe.leaves()[i];
        probe.leaves_mut()[i] = orig + h;
        let plus = example_loss(&probe, x, target, kind, mask)?;
        probe.leaves_mut()[i] = orig - h;
        let minus = example_loss(&probe, x, target, kind, mask)?;
        probe.leaves_mut()[i] = orig;
        grads.leaves[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grads)
}

/// Largest elementwise `|a - b| / max(1, |a|, |b|)`.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(a, b)| (a - b).abs() / 1f64.max(a.abs()).max(b.abs()))
        .fold(0.0, f64::max)
}

/// Outcome of [`random_gradient_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub instances: usize,
    pub max_relative_error: f64,
    /// Index of the instance attaining the maximum.
    pub worst_instance: usize,
}

/// Step used by [`random_gradient_check`].
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Compares [`backward`] with [`fd_gradient`] on `instances` random problems
/// drawn from `seed`: depths 1 to 5, at most 8 inputs and 4 outputs,
/// alternating squared error and softmax cross-entropy, with a random mask
/// on every other pair of instances.
pub fn random_gradient_check(seed: u64, instances: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        instances,
        max_relative_error: 0.0,
        worst_instance: 0,
    };
    for i in 0..instances {
        let classification = i % 2 == 1;
        let (task, output_dim) = if classification {
            (Task::Classification, rng.random_range(2..=4))
        } else {
            (Task::Regression, rng.random_range(1..=4))
        };
        let config = ModelConfig::new(rng.random_range(1..=5), rng.random_range(1..=8), output_dim, task)?;
        let mut draw = |n: usize, r: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-r..r)).collect() };
        let gates = draw(config.internal_count() * config.gate_len(), 1.5);
        let leaves = draw(config.leaf_count() * output_dim, 2.0);
        let x = draw(config.input_dim, 2.0);
        let values = draw(output_dim, 2.0);
        let model = TreeModel::from_parts(config, gates, leaves)?;
        let mask = if i % 4 >= 2 {
            let p = rng.random_range(0.0..0.6);
            Some(sample_mask(&config, p, &mut rng)?)
        } else {
            None
        };
        let target = if classification {
            Target::Class(rng.random_range(0..output_dim))
        } else {
            Target::Values(&values)
        };
        let kind = config.loss_kind();
        let (y, trace) = model.forward(&x, mask.as_ref())?;
        let (_, upstream) = loss(&y, target, kind)?;
        let exact = backward(&model, &trace, &x, &upstream, mask.as_ref())?;
        let numeric = fd_gradient(&model, &x, target, kind, mask.as_ref(), GRADCHECK_STEP)?;
        let err = max_relative_error(&exact, &numeric);
        if err > report.max_relative_error || err.is_nan() {
            report.max_relative_error = err;
            report.worst_instance = i;
        }
    }
    Ok(report)
}
