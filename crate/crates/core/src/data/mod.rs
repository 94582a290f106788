//! Datasets and the file formats they are read from.

mod csv;
mod fvec;
mod idx;
mod sinusoid;
mod split;

pub use self::csv::{read_xy_csv, write_xy_csv, write_xy_csv_to};
pub use fvec::{decode_fvec, encode_fvec, read_fvec, write_fvec, FVEC_MAGIC, FVEC_VERSION};
pub use idx::{
    parse_idx_images, parse_idx_labels, read_idx, read_maybe_gz, IdxImages, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use sinusoid::{gen_sinusoid, sinusoid_grid, SINUSOID_HALF_RANGE};
pub use split::{split, SplitSpec};

use crate::error::{HmoeError, Result};
use crate::optim::Target;

/// Supervision attached to every row of a [`Dataset`].
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// One class index per example.
    Classes(Vec<u32>),
    /// `dim` real values per example, row-major.
    Real { dim: usize, values: Vec<f64> },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(labels) => labels.len(),
            Targets::Real { dim, values } => values.len() / dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dense feature matrix with one target per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    dim: usize,
    features: Vec<f64>,
    targets: Targets,
}

impl Dataset {
    pub fn new(name: impl Into<String>, dim: usize, features: Vec<f64>, targets: Targets) -> Result<Self> {
        if dim == 0 {
            return Err(HmoeError::InvalidConfig("feature dimension must be positive".into()));
        }
        if features.len() % dim != 0 {
            return Err(HmoeError::Malformed {
                format: "dataset",
                detail: format!("{} values do not form rows of {dim}", features.len()),
            });
        }
        if let Targets::Real { dim: 0, .. } = targets {
            return Err(HmoeError::InvalidConfig("target dimension must be positive".into()));
        }
        if let Targets::Real { dim, values } = &targets {
            if values.len() % dim != 0 {
                return Err(HmoeError::Malformed {
                    format: "dataset",
                    detail: format!("{} target values do not form rows of {dim}", values.len()),
                });
            }
        }
        let rows = features.len() / dim;
        if rows != targets.len() {
            return Err(HmoeError::CountMismatch {
                images: rows,
                labels: targets.len(),
            });
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(HmoeError::Malformed {
                format: "dataset",
                detail: format!("non-finite feature in row {}", pos / dim),
            });
        }
        Ok(Dataset {
            name: name.into(),
            dim,
            features,
            targets,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Number of features per row.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> Target<'_> {
        match &self.targets {
            Targets::Classes(labels) => Target::Class(labels[i] as usize),
            Targets::Real { dim, values } => Target::Values(&values[i * dim..(i + 1) * dim]),
        }
    }

    /// Output width a model needs for this dataset: the number of classes
    /// (largest label plus one) or the regression target dimension.
    pub fn output_dim(&self) -> usize {
        match &self.targets {
            Targets::Classes(labels) => labels.iter().max().map_or(0, |&m| m as usize + 1),
            Targets::Real { dim, .. } => *dim,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.targets, Targets::Classes(_))
    }

    /// Mean feature vector.
    pub fn mean_row(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (m, x) in mean.iter_mut().zip(self.row(i)) {
                *m += x;
            }
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let targets = match &self.targets {
            Targets::Classes(labels) => Targets::Classes(indices.iter().map(|&i| labels[i]).collect()),
            Targets::Real { dim, values } => Targets::Real {
                dim: *dim,
                values: indices
                    .iter()
                    .flat_map(|&i| values[i * dim..(i + 1) * dim].iter().copied())
                    .collect(),
            },
        };
        Dataset {
            name: name.into(),
            dim: self.dim,
            features,
            targets,
        }
    }

    /// The first `n` rows (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, format!("{}[..{}]", self.name, idx.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_validates_shapes() {
        assert!(Dataset::new("a", 2, vec![0.0; 4], Targets::Classes(vec![0, 1])).is_ok());
        assert!(matches!(
            Dataset::new("a", 2, vec![0.0; 4], Targets::Classes(vec![0])),
            Err(HmoeError::CountMismatch { .. })
        ));
        assert!(Dataset::new("a", 3, vec![0.0; 4], Targets::Classes(vec![0])).is_err());
        assert!(Dataset::new("a", 1, vec![f64::NAN], Targets::Classes(vec![0])).is_err());
        assert!(Dataset::new(
            "a",
            1,
            vec![0.0; 2],
            Targets::Real {
                dim: 2,
                values: vec![0.0; 3]
            }
        )
        .is_err());
    }

    #[test]
    fn subset_keeps_rows_and_targets_together() {
        let d = Dataset::new(
            "d",
            2,
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            Targets::Real {
                dim: 1,
                values: vec![10.0, 20.0, 30.0],
            },
        )
        .unwrap();
        let s = d.subset(&[2, 0], "s");
        assert_eq!(s.features(), &[4.0, 5.0, 0.0, 1.0]);
        assert_eq!(s.target(0), Target::Values(&[30.0]));
        assert_eq!(d.mean_row(), vec![2.0, 3.0]);
        assert_eq!(d.output_dim(), 1);
    }
}
