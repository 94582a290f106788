//! Binary hierarchical mixtures of experts (soft decision trees) trained with
//! subtree dropout.
//!
//! A model is a complete binary tree of fixed depth. Internal nodes hold
//! sigmoid gates that softly route an input to both children; leaves hold
//! constant output vectors. During training, dropout removes whole left
//! subtrees at random so that right subtrees learn to stand in for the full
//! tree.
//!
//! ```
//! use hmoe::{ModelConfig, Task, TreeModel};
//!
//! let config = ModelConfig::new(3, 2, 1, Task::Regression)?;
//! let model = TreeModel::init(config, 42)?;
//! let (y, trace) = model.forward(&[0.5, -1.0], None)?;
//! let total: f64 = trace.leaf_path_weights().iter().sum();
//! assert!((total - 1.0).abs() < 1e-12);
//! assert_eq!(y.len(), 1);
//! # Ok::<(), hmoe::HmoeError>(())
//! ```

pub mod checkpoint;
pub mod data;
pub mod dropout;
pub mod error;
pub mod grad;
pub mod optim;
mod par;
pub mod report;
pub mod tree;

#[cfg(feature = "cli")]
pub mod cli;

pub use data::{Dataset, SplitSpec, Targets};
pub use dropout::{expected_output, sample_mask, DropoutMask, MaskGranularity};
pub use error::{HmoeError, Result};
pub use grad::{backward, fd_gradient, Gradients};
pub use optim::{evaluate, train, AdamConfig, Evaluation, LossKind, Target, TrainData, TrainHyper, TrainReport};
pub use tree::{sigmoid, GatingTrace, ModelConfig, Task, TreeModel};
