//! IDX files as distributed with MNIST: big-endian headers followed by raw
//! unsigned bytes. Gzip-compressed files (`.gz`) are decompressed on read.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{Dataset, Targets};
use crate::error::{HmoeError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded image file: `count` images of `rows x cols` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize, format: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| HmoeError::Truncated {
            format,
            detail: format!("header ends after {} bytes", bytes.len()),
        })
}

fn check_magic(bytes: &[u8], expected: u32, format: &'static str) -> Result<()> {
    let found = be_u32(bytes, 0, format)?;
    if found != expected {
        return Err(HmoeError::BadMagic {
            format,
            expected,
            found,
        });
    }
    Ok(())
}

fn check_body(bytes: &[u8], header: usize, body: usize, format: &'static str) -> Result<()> {
    let have = bytes.len() - header;
    if have < body {
        return Err(HmoeError::Truncated {
            format,
            detail: format!("expected {body} data bytes, found {have}"),
        });
    }
    if have > body {
        return Err(HmoeError::Malformed {
            format,
            detail: format!("{} trailing bytes", have - body),
        });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    const FORMAT: &str = "idx images";
    check_magic(bytes, IDX_IMAGES_MAGIC, FORMAT)?;
    let count = be_u32(bytes, 4, FORMAT)? as usize;
    let rows = be_u32(bytes, 8, FORMAT)? as usize;
    let cols = be_u32(bytes, 12, FORMAT)? as usize;
    let body = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| HmoeError::Malformed {
            format: FORMAT,
            detail: "image dimensions overflow".into(),
        })?;
    check_body(bytes, 16, body, FORMAT)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    const FORMAT: &str = "idx labels";
    check_magic(bytes, IDX_LABELS_MAGIC, FORMAT)?;
    let count = be_u32(bytes, 4, FORMAT)? as usize;
    check_body(bytes, 8, count, FORMAT)?;
    Ok(bytes[8..].to_vec())
}

/// Reads a whole file, gunzipping it when the name ends in `.gz`.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path).map_err(|e| HmoeError::io(path, e))?;
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|ext| ext == "gz") {
        GzDecoder::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| HmoeError::io(path, e))?;
    } else {
        file.read_to_end(&mut bytes).map_err(|e| HmoeError::io(path, e))?;
    }
    Ok(bytes)
}

/// Images flattened row-major and scaled to `[0, 1]`, paired with labels.
pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_idx_images(&read_maybe_gz(images_path)?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path)?)?;
    idx_dataset(images, labels, images_path.display().to_string())
}

pub(crate) fn idx_dataset(images: IdxImages, labels: Vec<u8>, name: String) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(HmoeError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let features = images.pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels = labels.into_iter().map(u32::from).collect();
    Dataset::new(name, images.rows * images.cols, features, Targets::Classes(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images_fixture() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        for v in [2u32, 2, 2] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(&[0, 255, 51, 0, 255, 255, 0, 102]);
        b
    }

    fn labels_fixture(n: u32) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&n.to_be_bytes());
        b.extend((0..n).map(|i| (i % 10) as u8 + 3));
        b
    }

    #[test]
    fn handcrafted_two_by_two() {
        let images = parse_idx_images(&images_fixture()).unwrap();
        let labels = parse_idx_labels(&labels_fixture(2)).unwrap();
        let d = idx_dataset(images, labels, "fixture".into()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 4);
        assert_eq!(d.row(0), &[0.0, 1.0, 0.2, 0.0]);
        assert_eq!(d.row(1), &[1.0, 1.0, 0.0, 0.4]);
        assert_eq!(d.targets(), &Targets::Classes(vec![3, 4]));
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut labels = labels_fixture(2);
        labels[3] = 0x03;
        assert!(matches!(
            parse_idx_labels(&labels),
            Err(HmoeError::BadMagic { found: 0x803, .. })
        ));
        assert!(matches!(
            parse_idx_images(&labels_fixture(2)),
            Err(HmoeError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncation_and_count_mismatch_are_distinct() {
        let mut images = images_fixture();
        images.pop();
        assert!(matches!(parse_idx_images(&images), Err(HmoeError::Truncated { .. })));
        assert!(matches!(
            parse_idx_images(&images[..10]),
            Err(HmoeError::Truncated { .. })
        ));
        assert!(matches!(parse_idx_labels(&[]), Err(HmoeError::Truncated { .. })));

        let images = parse_idx_images(&images_fixture()).unwrap();
        let labels = parse_idx_labels(&labels_fixture(3)).unwrap();
        assert!(matches!(
            idx_dataset(images, labels, String::new()),
            Err(HmoeError::CountMismatch { images: 2, labels: 3 })
        ));
    }

    #[test]
    fn reads_plain_and_gzipped_files() {
        use flate2::write::GzEncoder;
        use std::io::Write;

        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img-idx3-ubyte");
        std::fs::write(&img, images_fixture()).unwrap();
        let lab = dir.path().join("lab-idx1-ubyte.gz");
        let mut enc = GzEncoder::new(File::create(&lab).unwrap(), flate2::Compression::default());
        enc.write_all(&labels_fixture(2)).unwrap();
        enc.finish().unwrap();

        let d = read_idx(&img, &lab).unwrap();
        assert_eq!(d.len(), 2);
        assert!(matches!(
            read_idx(&dir.path().join("missing"), &lab),
            Err(HmoeError::Io { .. })
        ));
    }
}
