//! Hierarchical subtree dropout.
//!
//! During training each internal node independently drops its entire left
//! subtree with probability `p`, in which case the node passes its right
//! child's output through unchanged. At test time no mask is applied and no
//! rescaling is done: a kept node mixes with `(a, 1 - a)` and a dropped node
//! with `(0, 1)`, so the gate factors sum to one either way.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HmoeError, Result};
use crate::tree::{ModelConfig, TreeModel};

/// Realized drop indicators for one training presentation.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    /// `drops[m - 1]` is true when internal node `m` drops its left subtree.
    drops: Vec<bool>,
    rate: f64,
}

impl DropoutMask {
    /// A mask that keeps every node.
    pub fn keep_all(config: &ModelConfig) -> Self {
        DropoutMask {
            drops: vec![false; config.internal_count()],
            rate: 0.0,
        }
    }

    /// A mask that drops at every node, collapsing the tree to its right spine.
    pub fn drop_all(config: &ModelConfig) -> Self {
        DropoutMask {
            drops: vec![true; config.internal_count()],
            rate: 1.0,
        }
    }

    pub fn from_drops(config: ModelConfig, drops: Vec<bool>, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        if drops.len() != config.internal_count() {
            return Err(HmoeError::DimensionMismatch {
                what: "mask entries",
                expected: config.internal_count(),
                actual: drops.len(),
            });
        }
        Ok(DropoutMask { drops, rate })
    }

    #[inline]
    pub fn is_dropped(&self, node: usize) -> bool {
        self.drops[node - 1]
    }

    pub fn drops(&self) -> &[bool] {
        &self.drops
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn dropped_count(&self) -> usize {
        self.drops.iter().filter(|&&d| d).count()
    }

    pub(crate) fn check_config(&self, config: &ModelConfig) -> Result<()> {
        if self.drops.len() != config.internal_count() {
            return Err(HmoeError::DimensionMismatch {
                what: "mask entries",
                expected: config.internal_count(),
                actual: self.drops.len(),
            });
        }
        Ok(())
    }
}

fn check_rate(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(HmoeError::InvalidRate(p))
    }
}

/// Draws `d_m ~ Bernoulli(p)` independently for every internal node.
pub fn sample_mask<R: Rng + ?Sized>(config: &ModelConfig, p: f64, rng: &mut R) -> Result<DropoutMask> {
    let mut mask = DropoutMask::keep_all(config);
    sample_mask_into(p, rng, &mut mask)?;
    Ok(mask)
}

/// Resamples `mask` in place, one uniform draw per internal node in heap order.
pub fn sample_mask_into<R: Rng + ?Sized>(p: f64, rng: &mut R, mask: &mut DropoutMask) -> Result<()> {
    check_rate(p)?;
    mask.rate = p;
    for d in mask.drops.iter_mut() {
        *d = rng.random::<f64>() < p;
    }
    Ok(())
}

/// Which training presentations share a mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskGranularity {
    /// A fresh mask for every example on every visit.
    #[default]
    Example,
    /// One mask shared by all examples of a minibatch.
    Minibatch,
}

impl std::str::FromStr for MaskGranularity {
    type Err = HmoeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "example" => Ok(MaskGranularity::Example),
            "minibatch" => Ok(MaskGranularity::Minibatch),
            other => Err(HmoeError::InvalidConfig(format!("unknown mask granularity '{other}'"))),
        }
    }
}

/// Generator for the mask of one presentation unit.
///
/// The stream is a pure function of `(seed, epoch, unit)`, where `unit` is the
/// example's dataset index (or the minibatch index), so masks do not depend on
/// how work is scheduled across threads.
pub fn mask_rng(seed: u64, epoch: u64, unit: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&epoch.to_le_bytes());
    key[16..].copy_from_slice(b"hmoe/subtree-dro");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(unit);
    rng
}

/// Expected output over all masks drawn at rate `p`, in closed form.
///
/// Drops are independent across nodes, so the expectation factorizes:
/// `E[y_m] = (1-p) a_m E[y_2m] + ((1-p)(1-a_m) + p) E[y_2m+1]`.
pub fn expected_output(model: &TreeModel, x: &[f64], p: f64) -> Result<Vec<f64>> {
    check_rate(p)?;
    let cfg = model.config();
    let k = cfg.output_dim;
    let first_leaf = cfg.first_leaf();
    let mut values = vec![0.0; (cfg.node_count() + 1) * k];
    for m in first_leaf..=cfg.node_count() {
        values[m * k..(m + 1) * k].copy_from_slice(model.leaf_value(m));
    }
    for m in (1..first_leaf).rev() {
        let a = model.gate(m, x)?;
        let left_factor = (1.0 - p) * a;
        let right_factor = (1.0 - p) * (1.0 - a) + p;
        let (head, tail) = values.split_at_mut(2 * m * k);
        let out = &mut head[m * k..(m + 1) * k];
        for ((o, l), r) in out.iter_mut().zip(&tail[..k]).zip(&tail[k..2 * k]) {
            *o = left_factor * l + right_factor * r;
        }
    }
    Ok(values[k..2 * k].to_vec())
}

/// Expected path weight of every leaf under rate-`p` dropout, leftmost first.
pub fn expected_leaf_weights(model: &TreeModel, x: &[f64], p: f64) -> Result<Vec<f64>> {
    check_rate(p)?;
    let cfg = model.config();
    let mut weights = vec![0.0; cfg.node_count() + 1];
    weights[1] = 1.0;
    for m in 1..cfg.first_leaf() {
        let a = model.gate(m, x)?;
        weights[2 * m] = weights[m] * (1.0 - p) * a;
        weights[2 * m + 1] = weights[m] * ((1.0 - p) * (1.0 - a) + p);
    }
    Ok(weights.split_off(cfg.first_leaf()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::Task;

    fn cfg(depth: usize) -> ModelConfig {
        ModelConfig::new(depth, 2, 1, Task::Regression).unwrap()
    }

    #[test]
    fn degenerate_rates() {
        let c = cfg(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_mask(&c, 0.0, &mut rng).unwrap().dropped_count(), 0);
        assert_eq!(
            sample_mask(&c, 1.0, &mut rng).unwrap().dropped_count(),
            c.internal_count()
        );
    }

    #[test]
    fn rate_outside_unit_interval_rejected() {
        let c = cfg(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_mask(&c, -0.1, &mut rng),
            Err(HmoeError::InvalidRate(_))
        ));
        assert!(sample_mask(&c, 1.5, &mut rng).is_err());
        assert!(sample_mask(&c, f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn empirical_drop_frequency() {
        let c = cfg(4);
        let mut counts = vec![0usize; c.internal_count()];
        let mut mask = DropoutMask::keep_all(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let trials = 100_000;
        for _ in 0..trials {
            sample_mask_into(0.1, &mut rng, &mut mask).unwrap();
            for (count, &d) in counts.iter_mut().zip(mask.drops()) {
                *count += d as usize;
            }
        }
        for count in counts {
            let freq = count as f64 / trials as f64;
            assert!((freq - 0.1).abs() < 0.01, "frequency {freq}");
        }
    }

    #[test]
    fn mask_streams_are_keyed() {
        let c = cfg(5);
        let draw = |seed, epoch, unit| {
            let mut rng = mask_rng(seed, epoch, unit);
            sample_mask(&c, 0.5, &mut rng).unwrap()
        };
        assert_eq!(draw(3, 1, 9), draw(3, 1, 9));
        assert_ne!(draw(3, 1, 9), draw(3, 1, 10));
        assert_ne!(draw(3, 1, 9), draw(3, 2, 9));
        assert_ne!(draw(3, 1, 9), draw(4, 1, 9));
    }

    #[test]
    fn expectation_endpoints() {
        let model = TreeModel::init(cfg(3), 5).unwrap();
        let x = [0.3, -1.2];
        let plain = model.predict(&x).unwrap();
        assert_eq!(expected_output(&model, &x, 0.0).unwrap(), plain);
        let right = model.leaf_value(model.config().rightmost_leaf()).to_vec();
        assert_eq!(expected_output(&model, &x, 1.0).unwrap(), right);
        assert!(expected_output(&model, &x, 2.0).is_err());
    }

    #[test]
    fn expected_weights_reproduce_expected_output() {
        let model = TreeModel::init(cfg(4), 8).unwrap();
        let x = [0.9, 0.1];
        let w = expected_leaf_weights(&model, &x, 0.25).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let cfg = model.config();
        let y: f64 = (cfg.first_leaf()..=cfg.node_count())
            .zip(&w)
            .map(|(leaf, w)| w * model.leaf_value(leaf)[0])
            .sum();
        let e = expected_output(&model, &x, 0.25).unwrap()[0];
        assert!((y - e).abs() < 1e-12);
    }
}
