use serde::{Deserialize, Serialize};

use crate::error::{HmoeError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// `0.5 * |y - t|^2`
    SquaredError,
    /// `-log softmax(y)[t]`
    SoftmaxCrossEntropy,
}

/// A single supervised target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target<'a> {
    Class(usize),
    Values(&'a [f64]),
}

/// Loss value and its gradient with respect to the model output.
pub fn loss(y: &[f64], target: Target<'_>, kind: LossKind) -> Result<(f64, Vec<f64>)> {
    let mut upstream = vec![0.0; y.len()];
    let value = loss_into(y, target, kind, &mut upstream)?;
    Ok((value, upstream))
}

/// Writes `dL/dy` into `upstream` and returns the loss value.
pub fn loss_into(y: &[f64], target: Target<'_>, kind: LossKind, upstream: &mut [f64]) -> Result<f64> {
    if upstream.len() != y.len() {
        return Err(HmoeError::DimensionMismatch {
            what: "upstream buffer",
            expected: y.len(),
            actual: upstream.len(),
        });
    }
    match (kind, target) {
        (LossKind::SquaredError, Target::Values(t)) => {
            if t.len() != y.len() {
                return Err(HmoeError::DimensionMismatch {
                    what: "regression target",
                    expected: y.len(),
                    actual: t.len(),
                });
            }
            let mut value = 0.0;
            for ((u, y), t) in upstream.iter_mut().zip(y).zip(t) {
                let r = y - t;
                *u = r;
                value += r * r;
            }
            Ok(0.5 * value)
        }
        (LossKind::SoftmaxCrossEntropy, Target::Class(class)) => {
            if class >= y.len() {
                return Err(HmoeError::ClassOutOfRange {
                    index: class,
                    classes: y.len(),
                });
            }
            let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (u, y) in upstream.iter_mut().zip(y) {
                *u = (y - max).exp();
                sum += *u;
            }
            for u in upstream.iter_mut() {
                *u /= sum;
            }
            upstream[class] -= 1.0;
            Ok(max + sum.ln() - y[class])
        }
        (kind, target) => Err(HmoeError::InvalidConfig(format!(
            "target {target:?} does not fit loss {kind:?}"
        ))),
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(y: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in y.iter().enumerate().skip(1) {
        if v > y[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_regression_fit() {
        let t = [0.5, -2.0];
        let (value, up) = loss(&t, Target::Values(&t), LossKind::SquaredError).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(up, vec![0.0, 0.0]);
    }

    #[test]
    fn uniform_softmax() {
        let y = [0.0; 10];
        let (value, up) = loss(&y, Target::Class(3), LossKind::SoftmaxCrossEntropy).unwrap();
        assert!((value - 10f64.ln()).abs() < 1e-15);
        assert!((value - std::f64::consts::LN_10).abs() < 1e-12);
        for (i, u) in up.iter().enumerate() {
            let expected = if i == 3 { -0.9 } else { 0.1 };
            assert!((u - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let y = [1000.0, -1000.0, 999.0];
        let (value, up) = loss(&y, Target::Class(1), LossKind::SoftmaxCrossEntropy).unwrap();
        assert!(value.is_finite());
        assert!((value - (2000.0 + (1.0 + (-1.0f64).exp()).ln())).abs() < 1e-9);
        assert!(up.iter().all(|u| u.is_finite()));
        assert!(up.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn out_of_range_class_rejected() {
        assert!(matches!(
            loss(&[0.0; 3], Target::Class(3), LossKind::SoftmaxCrossEntropy),
            Err(HmoeError::ClassOutOfRange { index: 3, classes: 3 })
        ));
        assert!(loss(&[0.0; 3], Target::Class(0), LossKind::SquaredError).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
    }
}
