use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{HmoeError, Result};

/// A seeded two-way `first:second` partition, e.g. `5:1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub first: u32,
    pub second: u32,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(first: u32, second: u32, seed: u64) -> Result<Self> {
        if first == 0 || second == 0 {
            return Err(HmoeError::InvalidConfig(format!(
                "split ratio parts must be positive, got {first}:{second}"
            )));
        }
        Ok(SplitSpec { first, second, seed })
    }

    /// Parses `"a:b"`.
    pub fn parse(ratio: &str, seed: u64) -> Result<Self> {
        let bad = || HmoeError::InvalidConfig(format!("ratio '{ratio}' is not of the form a:b"));
        let (a, b) = ratio.split_once(':').ok_or_else(bad)?;
        let a = a.trim().parse().map_err(|_| bad())?;
        let b = b.trim().parse().map_err(|_| bad())?;
        SplitSpec::new(a, b, seed)
    }

    /// Size of the first part for `n` examples: `floor(n * a / (a + b))`.
    pub fn first_len(&self, n: usize) -> usize {
        let total = u64::from(self.first) + u64::from(self.second);
        (n as u128 * u128::from(self.first) / u128::from(total)) as usize
    }
}

/// Seeded shuffle followed by a contiguous cut.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    SplitSpec::new(spec.first, spec.second, spec.seed)?;
    let n = dataset.len();
    if n < 2 {
        return Err(HmoeError::EmptyDataset(format!(
            "cannot split {n} examples into two parts"
        )));
    }
    let (first, second) = split_indices(n, spec);
    let name = dataset.name();
    Ok((
        dataset.subset(&first, format!("{name}[split {}:{} a]", spec.first, spec.second)),
        dataset.subset(&second, format!("{name}[split {}:{} b]", spec.first, spec.second)),
    ))
}

pub(crate) fn split_indices(n: usize, spec: &SplitSpec) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let second = order.split_off(spec.first_len(n));
    (order, second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn experiment_split_sizes() {
        let s51 = SplitSpec::parse("5:1", 0).unwrap();
        assert_eq!(s51.first_len(60_000), 50_000);
        let s41 = SplitSpec::parse("4:1", 0).unwrap();
        assert_eq!(s41.first_len(50_000), 40_000);
        assert_eq!(s51.first_len(10_000), 8_333);
    }

    #[test]
    fn rejects_bad_ratios_and_tiny_sets() {
        assert!(SplitSpec::parse("5", 0).is_err());
        assert!(SplitSpec::parse("0:1", 0).is_err());
        assert!(SplitSpec::parse("a:1", 0).is_err());
        let one = Dataset::new("d", 1, vec![0.0], crate::data::Targets::Classes(vec![0])).unwrap();
        assert!(split(&one, &SplitSpec::new(1, 1, 0).unwrap()).is_err());
    }

    #[test]
    fn split_keeps_row_target_pairs() {
        let n = 20;
        let features: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let labels: Vec<u32> = (0..n as u32).collect();
        let d = Dataset::new("d", 1, features, crate::data::Targets::Classes(labels)).unwrap();
        let (a, b) = split(&d, &SplitSpec::new(3, 1, 9).unwrap()).unwrap();
        assert_eq!((a.len(), b.len()), (15, 5));
        for part in [&a, &b] {
            for i in 0..part.len() {
                let x = part.row(i)[0] as usize;
                assert_eq!(part.target(i), crate::optim::Target::Class(x));
            }
        }
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 2usize..500, a in 1u32..10, b in 1u32..10, seed: u64) {
            let spec = SplitSpec::new(a, b, seed).unwrap();
            let (first, second) = split_indices(n, &spec);
            prop_assert_eq!(first.len(), n * a as usize / (a + b) as usize);
            let mut all: Vec<usize> = first.into_iter().chain(second).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
