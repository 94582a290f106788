//! Dense labeled feature matrices.
//!
//! Little-endian layout: magic `FVEC`, `version: u32`, `n: u32`, `dim: u32`,
//! then `n * dim` `f32` features row-major, then `n` `u32` labels.

use std::path::Path;

use super::{Dataset, Targets};
use crate::error::{HmoeError, Result};

pub const FVEC_MAGIC: [u8; 4] = *b"FVEC";
pub const FVEC_VERSION: u32 = 1;
const HEADER: usize = 16;
const FORMAT: &str = "fvec";

pub fn encode_fvec(dataset: &Dataset) -> Result<Vec<u8>> {
    let Targets::Classes(labels) = dataset.targets() else {
        return Err(HmoeError::InvalidConfig(
            "fvec stores class labels; dataset has real targets".into(),
        ));
    };
    let n = u32::try_from(dataset.len()).map_err(|_| HmoeError::InvalidConfig("too many rows".into()))?;
    let dim = u32::try_from(dataset.dim()).map_err(|_| HmoeError::InvalidConfig("too many columns".into()))?;
    let mut out = Vec::with_capacity(HEADER + 4 * (dataset.features().len() + labels.len()));
    out.extend_from_slice(&FVEC_MAGIC);
    out.extend_from_slice(&FVEC_VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for &v in dataset.features() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &label in labels {
        out.extend_from_slice(&label.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_fvec(bytes: &[u8], name: impl Into<String>) -> Result<Dataset> {
    if bytes.len() < HEADER {
        return Err(HmoeError::Truncated {
            format: FORMAT,
            detail: format!("{} header bytes, need {HEADER}", bytes.len()),
        });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    if bytes[..4] != FVEC_MAGIC {
        return Err(HmoeError::BadMagic {
            format: FORMAT,
            expected: u32::from_be_bytes(FVEC_MAGIC),
            found: u32::from_be_bytes(bytes[..4].try_into().unwrap()),
        });
    }
    let version = word(4);
    if version != FVEC_VERSION {
        return Err(HmoeError::BadVersion {
            format: FORMAT,
            expected: FVEC_VERSION,
            found: version,
        });
    }
    let n = word(8) as usize;
    let dim = word(12) as usize;
    if dim == 0 {
        return Err(HmoeError::Malformed {
            format: FORMAT,
            detail: "zero feature dimension".into(),
        });
    }
    let expected = n
        .checked_mul(dim)
        .and_then(|v| v.checked_add(n))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| HmoeError::Malformed {
            format: FORMAT,
            detail: "header sizes overflow".into(),
        })?;
    let body = &bytes[HEADER..];
    if body.len() < expected {
        return Err(HmoeError::Truncated {
            format: FORMAT,
            detail: format!("expected {expected} data bytes, found {}", body.len()),
        });
    }
    if body.len() > expected {
        return Err(HmoeError::Malformed {
            format: FORMAT,
            detail: format!("{} trailing bytes", body.len() - expected),
        });
    }
    let (feat_bytes, label_bytes) = body.split_at(4 * n * dim);
    let features = feat_bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let labels = label_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Dataset::new(name, dim, features, Targets::Classes(labels))
}

pub fn write_fvec(dataset: &Dataset, path: &Path) -> Result<()> {
    let bytes = encode_fvec(dataset)?;
    std::fs::write(path, bytes).map_err(|e| HmoeError::io(path, e))
}

pub fn read_fvec(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| HmoeError::io(path, e))?;
    decode_fvec(&bytes, path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(n: usize, dim: usize, values: Vec<f32>, labels: Vec<u32>) -> Dataset {
        assert_eq!(values.len(), n * dim);
        Dataset::new(
            "t",
            dim,
            values.into_iter().map(f64::from).collect(),
            Targets::Classes(labels),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_three_by_five() {
        let values: Vec<f32> = (0..15).map(|i| i as f32 * 0.37 - 2.0).collect();
        let d = dataset(3, 5, values, vec![4, 0, 9]);
        let back = decode_fvec(&encode_fvec(&d).unwrap(), "t").unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn header_layout_is_little_endian() {
        let d = dataset(1, 2, vec![1.0, -2.0], vec![7]);
        let bytes = encode_fvec(&d).unwrap();
        assert_eq!(&bytes[..4], b"FVEC");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1f32.to_le_bytes());
        assert_eq!(&bytes[24..28], &[7, 0, 0, 0]);
        assert_eq!(bytes.len(), 28);
    }

    #[test]
    fn malformed_inputs_rejected() {
        assert!(matches!(decode_fvec(&[], "e"), Err(HmoeError::Truncated { .. })));
        let d = dataset(2, 2, vec![0.0; 4], vec![0, 1]);
        let good = encode_fvec(&d).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_fvec(&bad, "e"), Err(HmoeError::BadMagic { .. })));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(
            decode_fvec(&bad, "e"),
            Err(HmoeError::BadVersion { found: 2, .. })
        ));
        assert!(matches!(
            decode_fvec(&good[..good.len() - 1], "e"),
            Err(HmoeError::Truncated { .. })
        ));
    }

    #[test]
    fn real_targets_cannot_be_written() {
        let d = Dataset::new(
            "r",
            1,
            vec![0.0],
            Targets::Real {
                dim: 1,
                values: vec![1.0],
            },
        )
        .unwrap();
        assert!(encode_fvec(&d).is_err());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(
            (n, dim, values, labels) in (1usize..6, 1usize..7).prop_flat_map(|(n, dim)| (
                Just(n),
                Just(dim),
                prop::collection::vec(-1e6f32..1e6, n * dim),
                prop::collection::vec(0u32..10, n),
            ))
        ) {
            let d = dataset(n, dim, values, labels);
            let back = decode_fvec(&encode_fvec(&d).unwrap(), "t").unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
