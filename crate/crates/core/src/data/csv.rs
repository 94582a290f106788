//! Plain numeric CSV for regression data and prediction grids.
//!
//! Values are written with Rust's shortest round-trip formatting, so a file
//! read back reproduces the exact `f64` values.

use std::io::Write;
use std::path::Path;

use super::{Dataset, Targets};
use crate::error::{HmoeError, Result};

const FORMAT: &str = "csv";

fn csv_err(path: &Path, e: ::csv::Error) -> HmoeError {
    match e.into_kind() {
        ::csv::ErrorKind::Io(io) => HmoeError::io(path, io),
        other => HmoeError::Malformed {
            format: FORMAT,
            detail: format!("{}: {other:?}", path.display()),
        },
    }
}

/// Writes `(x, y)` rows under a two-column header.
pub fn write_xy_csv_to<W: Write>(
    writer: W,
    header: [&str; 2],
    rows: impl IntoIterator<Item = (f64, f64)>,
) -> std::result::Result<(), ::csv::Error> {
    let mut w = ::csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for (x, y) in rows {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a scalar-input, scalar-target dataset as `x,y`.
pub fn write_xy_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let Targets::Real { dim: 1, values } = dataset.targets() else {
        return Err(HmoeError::InvalidConfig("x,y export needs scalar real targets".into()));
    };
    if dataset.dim() != 1 {
        return Err(HmoeError::DimensionMismatch {
            what: "x,y export features",
            expected: 1,
            actual: dataset.dim(),
        });
    }
    let file = std::fs::File::create(path).map_err(|e| HmoeError::io(path, e))?;
    let rows = dataset.features().iter().copied().zip(values.iter().copied());
    write_xy_csv_to(std::io::BufWriter::new(file), ["x", "y"], rows).map_err(|e| csv_err(path, e))
}

/// Reads a headed numeric CSV: every column but the last is a feature and the
/// last column is a scalar regression target.
pub fn read_xy_csv(path: &Path) -> Result<Dataset> {
    let mut reader = ::csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let columns = reader.headers().map_err(|e| csv_err(path, e))?.len();
    if columns < 2 {
        return Err(HmoeError::Malformed {
            format: FORMAT,
            detail: format!("{}: need at least two columns", path.display()),
        });
    }
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| HmoeError::Malformed {
                format: FORMAT,
                detail: format!("{}: row {}: '{field}' is not a number", path.display(), line + 2),
            })?;
            if col + 1 == columns {
                targets.push(v);
            } else {
                features.push(v);
            }
        }
    }
    if targets.is_empty() {
        return Err(HmoeError::EmptyDataset(path.display().to_string()));
    }
    Dataset::new(
        path.display().to_string(),
        columns - 1,
        features,
        Targets::Real {
            dim: 1,
            values: targets,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_sinusoid;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let d = gen_sinusoid(37, 0.1, 1).unwrap();
        write_xy_csv(&d, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x,y\n"));
        assert_eq!(text.lines().count(), 38);
        let back = read_xy_csv(&path).unwrap();
        assert_eq!(back.features(), d.features());
        assert_eq!(back.targets(), d.targets());
    }

    #[test]
    fn non_numeric_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x,y\n1,2\n3,abc\n").unwrap();
        assert!(matches!(read_xy_csv(&path), Err(HmoeError::Malformed { .. })));
        std::fs::write(&path, "x,y\n").unwrap();
        assert!(matches!(read_xy_csv(&path), Err(HmoeError::EmptyDataset(_))));
    }
}
