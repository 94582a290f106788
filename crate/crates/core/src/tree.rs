//! The binary soft-tree model.
//!
//! Nodes use 1-based heap numbering: the root is node 1, internal node `m`
//! has children `2m` (left) and `2m + 1` (right), and a tree of depth `d`
//! has internal nodes `1..2^d` and leaves `2^d..2^(d+1)`.
//!
//! Each internal node `m` owns a gate vector `w_m` of length `input_dim + 1`
//! whose last entry multiplies an implicit constant-1 feature. Each leaf owns a
//! constant output vector `c_m` of length `output_dim`. The subtree output is
//!
//! ```text
//! y_m(x) = a_m(x) * y_2m(x) + (1 - a_m(x)) * y_2m+1(x)   internal, kept
//! y_m(x) = y_2m+1(x)                                     internal, dropped
//! y_m(x) = c_m                                           leaf
//! ```
//!
//! with `a_m(x) = sigmoid(w_m . [x; 1])`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dropout::DropoutMask;
use crate::error::{HmoeError, Result};
use crate::optim::LossKind;

/// Largest supported depth. A depth-24 tree already holds 16M leaves.
pub const MAX_DEPTH: usize = 24;

/// Largest `f64` strictly below one; upper clamp for gate activations.
pub const ALPHA_MAX: f64 = 1.0 - f64::EPSILON / 2.0;
/// Smallest positive normal `f64`; lower clamp for gate activations.
pub const ALPHA_MIN: f64 = f64::MIN_POSITIVE;

const INIT_SCALE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

impl Task {
    pub fn loss_kind(self) -> LossKind {
        match self {
            Task::Regression => LossKind::SquaredError,
            Task::Classification => LossKind::SoftmaxCrossEntropy,
        }
    }
}

impl std::str::FromStr for Task {
    type Err = HmoeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            other => Err(HmoeError::InvalidConfig(format!("unknown task '{other}'"))),
        }
    }
}

/// Shape of a complete binary tree model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of gating levels.
    pub depth: usize,
    /// Raw feature dimension, excluding the bias feature.
    pub input_dim: usize,
    pub output_dim: usize,
    pub task: Task,
}

impl ModelConfig {
    pub fn new(depth: usize, input_dim: usize, output_dim: usize, task: Task) -> Result<Self> {
        let config = ModelConfig {
            depth,
            input_dim,
            output_dim,
            task,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > MAX_DEPTH {
            return Err(HmoeError::InvalidConfig(format!(
                "depth must be in 1..={MAX_DEPTH}, got {}",
                self.depth
            )));
        }
        if self.input_dim == 0 {
            return Err(HmoeError::InvalidConfig("input_dim must be positive".into()));
        }
        if self.output_dim == 0 {
            return Err(HmoeError::InvalidConfig("output_dim must be positive".into()));
        }
        if self.task == Task::Classification && self.output_dim < 2 {
            return Err(HmoeError::InvalidConfig(
                "classification needs at least two classes".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn internal_count(&self) -> usize {
        (1 << self.depth) - 1
    }

    #[inline]
    pub fn leaf_count(&self) -> usize {
        1 << self.depth
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        (1 << (self.depth + 1)) - 1
    }

    /// Heap index of the leftmost leaf.
    #[inline]
    pub fn first_leaf(&self) -> usize {
        1 << self.depth
    }

    /// Heap index of the leaf reached by always going right.
    #[inline]
    pub fn rightmost_leaf(&self) -> usize {
        self.node_count()
    }

    #[inline]
    pub fn is_internal(&self, node: usize) -> bool {
        node >= 1 && node < self.first_leaf()
    }

    #[inline]
    pub fn is_leaf(&self, node: usize) -> bool {
        node >= self.first_leaf() && node <= self.node_count()
    }

    /// Length of each gate vector (features plus bias).
    #[inline]
    pub fn gate_len(&self) -> usize {
        self.input_dim + 1
    }

    pub fn loss_kind(&self) -> LossKind {
        self.task.loss_kind()
    }

    pub fn parameter_count(&self) -> usize {
        self.internal_count() * self.gate_len() + self.leaf_count() * self.output_dim
    }
}

/// Numerically stable logistic function, clamped strictly inside (0, 1).
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(ALPHA_MIN, ALPHA_MAX)
}

/// Gate weights and leaf values in heap order.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeModel {
    config: ModelConfig,
    /// `internal_count * gate_len` values; row `m - 1` holds `w_m`.
    gates: Vec<f64>,
    /// `leaf_count * output_dim` values; row `m - first_leaf` holds `c_m`.
    leaves: Vec<f64>,
}

impl TreeModel {
    /// Draws every parameter i.i.d. uniform on `[-0.01, 0.01]`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE)).collect() };
        let gates = draw(config.internal_count() * config.gate_len());
        let leaves = draw(config.leaf_count() * config.output_dim);
        Ok(TreeModel { config, gates, leaves })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(TreeModel {
            config,
            gates: vec![0.0; config.internal_count() * config.gate_len()],
            leaves: vec![0.0; config.leaf_count() * config.output_dim],
        })
    }

    /// Builds a model from raw heap-ordered parameter buffers.
    pub fn from_parts(config: ModelConfig, gates: Vec<f64>, leaves: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = config.internal_count() * config.gate_len();
        if gates.len() != expected {
            return Err(HmoeError::DimensionMismatch {
                what: "gate parameters",
                expected,
                actual: gates.len(),
            });
        }
        let expected = config.leaf_count() * config.output_dim;
        if leaves.len() != expected {
            return Err(HmoeError::DimensionMismatch {
                what: "leaf parameters",
                expected,
                actual: leaves.len(),
            });
        }
        Ok(TreeModel { config, gates, leaves })
    }

    #[inline]
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

    /// Gate vector `w_m` of internal node `node`; panics for non-internal nodes.
    #[inline]
    pub fn gate_weights(&self, node: usize) -> &[f64] {
        assert!(self.config.is_internal(node), "node {node} is not internal");
        let len = self.config.gate_len();
        &self.gates[(node - 1) * len..node * len]
    }

    #[inline]
    pub fn gate_weights_mut(&mut self, node: usize) -> &mut [f64] {
        assert!(self.config.is_internal(node), "node {node} is not internal");
        let len = self.config.gate_len();
        &mut self.gates[(node - 1) * len..node * len]
    }

    /// Leaf value `c_m` of leaf `node`; panics for non-leaf nodes.
    #[inline]
    pub fn leaf_value(&self, node: usize) -> &[f64] {
        assert!(self.config.is_leaf(node), "node {node} is not a leaf");
        let k = self.config.output_dim;
        let row = node - self.config.first_leaf();
        &self.leaves[row * k..(row + 1) * k]
    }

    #[inline]
    pub fn leaf_value_mut(&mut self, node: usize) -> &mut [f64] {
        assert!(self.config.is_leaf(node), "node {node} is not a leaf");
        let k = self.config.output_dim;
        let row = node - self.config.first_leaf();
        &mut self.leaves[row * k..(row + 1) * k]
    }

    pub fn all_finite(&self) -> bool {
        self.gates.iter().chain(&self.leaves).all(|v| v.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(HmoeError::DimensionMismatch {
                what: "input features",
                expected: self.config.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    #[inline]
    fn gate_unchecked(&self, node: usize, x: &[f64]) -> f64 {
        let w = self.gate_weights(node);
        let (bias, weights) = w.split_last().expect("gate vector has a bias entry");
        let z = weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + bias;
        sigmoid(z)
    }

    /// Gate activation `sigmoid(w_m . [x; 1])` of internal node `node`.
    pub fn gate(&self, node: usize, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        if !self.config.is_internal(node) {
            return Err(HmoeError::InvalidConfig(format!(
                "node {node} is not an internal node of a depth-{} tree",
                self.config.depth
            )));
        }
        Ok(self.gate_unchecked(node, x))
    }

    /// Evaluates the tree, returning the root output and the full trace.
    pub fn forward(&self, x: &[f64], mask: Option<&DropoutMask>) -> Result<(Vec<f64>, GatingTrace)> {
        let mut trace = GatingTrace::new(&self.config);
        self.forward_into(x, mask, &mut trace)?;
        Ok((trace.output().to_vec(), trace))
    }

    /// Root output only.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x, None)?.0)
    }

    /// Evaluates the tree into a reusable trace buffer.
    ///
    /// Nodes inside a dropped left subtree are not evaluated: their path
    /// weight is zero and their trace entries are left at zero.
    pub fn forward_into(&self, x: &[f64], mask: Option<&DropoutMask>, trace: &mut GatingTrace) -> Result<()> {
        self.check_input(x)?;
        if let Some(mask) = mask {
            mask.check_config(&self.config)?;
        }
        if trace.config != self.config {
            *trace = GatingTrace::new(&self.config);
        }
        let cfg = &self.config;
        let k = cfg.output_dim;
        let first_leaf = cfg.first_leaf();
        let dropped = |m: usize| mask.is_some_and(|mask| mask.is_dropped(m));

        trace.path_weights.fill(0.0);
        trace.evaluated.fill(false);
        trace.alphas.fill(0.0);
        trace.path_weights[1] = 1.0;
        trace.evaluated[1] = true;

        // Top-down: gate activations and path weights. Parents precede children.
        for m in 1..first_leaf {
            if !trace.evaluated[m] {
                continue;
            }
            let alpha = self.gate_unchecked(m, x);
            trace.alphas[m - 1] = alpha;
            let p = trace.path_weights[m];
            let (left, right) = if dropped(m) {
                (None, p)
            } else {
                (Some(alpha * p), (1.0 - alpha) * p)
            };
            if let Some(left) = left {
                trace.path_weights[2 * m] = left;
                trace.evaluated[2 * m] = true;
            }
            trace.path_weights[2 * m + 1] = right;
            trace.evaluated[2 * m + 1] = true;
        }

        // Bottom-up: subtree outputs.
        for m in first_leaf..=cfg.node_count() {
            let out = &mut trace.node_outputs[m * k..(m + 1) * k];
            if trace.evaluated[m] {
                out.copy_from_slice(self.leaf_value(m));
            } else {
                out.fill(0.0);
            }
        }
        for m in (1..first_leaf).rev() {
            let (head, tail) = trace.node_outputs.split_at_mut(2 * m * k);
            let out = &mut head[m * k..(m + 1) * k];
            if !trace.evaluated[m] {
                out.fill(0.0);
                continue;
            }
            let left = &tail[..k];
            let right = &tail[k..2 * k];
            if dropped(m) {
                out.copy_from_slice(right);
            } else {
                let a = trace.alphas[m - 1];
                for ((o, l), r) in out.iter_mut().zip(left).zip(right) {
                    *o = a * l + (1.0 - a) * r;
                }
            }
        }
        Ok(())
    }
}

/// Everything forward computes, kept for backward and introspection.
///
/// All per-node vectors are indexed by heap number; index 0 is unused.
#[derive(Clone, Debug)]
pub struct GatingTrace {
    pub(crate) config: ModelConfig,
    /// Gate activation per internal node (`alphas[m - 1]`).
    pub(crate) alphas: Vec<f64>,
    /// `node_count + 1` rows of `output_dim` values.
    pub(crate) node_outputs: Vec<f64>,
    pub(crate) path_weights: Vec<f64>,
    pub(crate) evaluated: Vec<bool>,
}

impl GatingTrace {
    pub fn new(config: &ModelConfig) -> Self {
        let nodes = config.node_count() + 1;
        GatingTrace {
            config: *config,
            alphas: vec![0.0; config.internal_count()],
            node_outputs: vec![0.0; nodes * config.output_dim],
            path_weights: vec![0.0; nodes],
            evaluated: vec![false; nodes],
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Root output `y_1(x)`.
    pub fn output(&self) -> &[f64] {
        self.node_output(1)
    }

    pub fn node_output(&self, node: usize) -> &[f64] {
        let k = self.config.output_dim;
        &self.node_outputs[node * k..(node + 1) * k]
    }

    /// Gate activation of an evaluated internal node.
    pub fn alpha(&self, node: usize) -> f64 {
        self.alphas[node - 1]
    }

    /// Product of effective gate factors from the root to `node`.
    pub fn path_weight(&self, node: usize) -> f64 {
        self.path_weights[node]
    }

    /// False for nodes that lie inside a dropped left subtree.
    pub fn is_evaluated(&self, node: usize) -> bool {
        self.evaluated[node]
    }

    /// Path weights of the leaves, leftmost first.
    pub fn leaf_path_weights(&self) -> Vec<f64> {
        self.path_weights[self.config.first_leaf()..].to_vec()
    }
}
