//! Binary model checkpoints.
//!
//! Little-endian layout: magic `HMOE`, `version: u32`, `depth: u32`,
//! `input_dim: u32`, `output_dim: u32`, `task: u8` (0 regression,
//! 1 classification), then every gate vector in node order and every leaf
//! value in node order as `f64`.

use std::path::Path;

use crate::error::{HmoeError, Result};
use crate::tree::{ModelConfig, Task, TreeModel};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HMOE";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER: usize = 4 + 4 * 4 + 1;
const FORMAT: &str = "checkpoint";

fn task_byte(task: Task) -> u8 {
    match task {
        Task::Regression => 0,
        Task::Classification => 1,
    }
}

pub fn encode_checkpoint(model: &TreeModel) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::with_capacity(HEADER + 8 * cfg.parameter_count());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        cfg.depth as u32,
        cfg.input_dim as u32,
        cfg.output_dim as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(task_byte(cfg.task));
    for v in model.gates().iter().chain(model.leaves()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TreeModel> {
    if bytes.len() < HEADER {
        return Err(HmoeError::Truncated {
            format: FORMAT,
            detail: format!("{} header bytes, need {HEADER}", bytes.len()),
        });
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(HmoeError::BadMagic {
            format: FORMAT,
            expected: u32::from_be_bytes(CHECKPOINT_MAGIC),
            found: u32::from_be_bytes(bytes[..4].try_into().unwrap()),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != CHECKPOINT_VERSION {
        return Err(HmoeError::BadVersion {
            format: FORMAT,
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let task = match bytes[HEADER - 1] {
        0 => Task::Regression,
        1 => Task::Classification,
        other => {
            return Err(HmoeError::Malformed {
                format: FORMAT,
                detail: format!("unknown task byte {other}"),
            })
        }
    };
    let config = ModelConfig::new(word(1) as usize, word(2) as usize, word(3) as usize, task)?;
    let body = &bytes[HEADER..];
    let expected = 8 * config.parameter_count();
    if body.len() != expected {
        let err = if body.len() < expected {
            HmoeError::Truncated {
                format: FORMAT,
                detail: format!("expected {expected} parameter bytes, found {}", body.len()),
            }
        } else {
            HmoeError::Malformed {
                format: FORMAT,
                detail: format!("{} trailing bytes", body.len() - expected),
            }
        };
        return Err(err);
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let gates: Vec<f64> = values
        .by_ref()
        .take(config.internal_count() * config.gate_len())
        .collect();
    let leaves: Vec<f64> = values.collect();
    let model = TreeModel::from_parts(config, gates, leaves)?;
    if !model.all_finite() {
        return Err(HmoeError::Malformed {
            format: FORMAT,
            detail: "non-finite parameter".into(),
        });
    }
    Ok(model)
}

impl TreeModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, encode_checkpoint(self)).map_err(|e| HmoeError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HmoeError::io(path, e))?;
        decode_checkpoint(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let cfg = ModelConfig::new(2, 3, 4, Task::Classification).unwrap();
        let model = TreeModel::init(cfg, 1).unwrap();
        let bytes = encode_checkpoint(&model);
        assert_eq!(&bytes[..4], b"HMOE");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &4u32.to_le_bytes());
        assert_eq!(bytes[20], 1);
        assert_eq!(&bytes[21..29], &model.gate_weights(1)[0].to_le_bytes());
        assert_eq!(bytes.len(), 21 + 8 * (3 * 4 + 4 * 4));
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let cfg = ModelConfig::new(2, 1, 1, Task::Regression).unwrap();
        let good = encode_checkpoint(&TreeModel::init(cfg, 1).unwrap());
        let mut bad = good.clone();
        bad[1] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(HmoeError::BadMagic { .. })));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(HmoeError::BadVersion { found: 9, .. })
        ));
        assert!(matches!(
            decode_checkpoint(&good[..good.len() - 3]),
            Err(HmoeError::Truncated { .. })
        ));
        assert!(matches!(
            decode_checkpoint(&good[..7]),
            Err(HmoeError::Truncated { .. })
        ));
        let mut bad = good.clone();
        bad[20] = 7;
        assert!(decode_checkpoint(&bad).is_err());
        let mut bad = good.clone();
        bad.extend_from_slice(&[0; 8]);
        assert!(matches!(decode_checkpoint(&bad), Err(HmoeError::Malformed { .. })));
        let mut bad = good;
        let at = bad.len() - 8;
        bad[at..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_checkpoint(&bad).is_err());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(depth in 1usize..5, input in 1usize..6, output in 2usize..5, cls: bool, seed: u64) {
            let task = if cls { Task::Classification } else { Task::Regression };
            let model = TreeModel::init(ModelConfig::new(depth, input, output, task).unwrap(), seed).unwrap();
            prop_assert_eq!(decode_checkpoint(&encode_checkpoint(&model)).unwrap(), model);
        }
    }
}
