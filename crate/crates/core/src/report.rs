//! Introspection: per-node input averages, PGM export, and 1-D fit summaries.

use std::path::{Path, PathBuf};

use crate::data::{write_xy_csv_to, Dataset};
use crate::error::{HmoeError, Result};
use crate::tree::{GatingTrace, TreeModel};

/// Nodes whose total responsibility falls below this are considered inactive.
pub const INACTIVE_THRESHOLD: f64 = 1e-9;

/// Default number of points of a prediction grid.
pub const DEFAULT_GRID_POINTS: usize = 1000;

/// Responsibility-weighted average of the inputs routed to one node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeImage {
    pub node: usize,
    /// Sum over examples of the node's path weight.
    pub weight_total: f64,
    pub mean_input: Vec<f64>,
}

impl NodeImage {
    pub fn is_active(&self) -> bool {
        self.weight_total >= INACTIVE_THRESHOLD
    }
}

/// Computes `sum_i P_m(x_i) x_i / sum_i P_m(x_i)` for every node `m`, where
/// `P_m` is the unmasked root-to-node path weight. Inactive nodes get an
/// all-zero `mean_input`.
pub fn node_visualizations(model: &TreeModel, dataset: &Dataset) -> Result<Vec<NodeImage>> {
    let cfg = model.config();
    if dataset.is_empty() {
        return Err(HmoeError::EmptyDataset(dataset.name().to_string()));
    }
    if dataset.dim() != cfg.input_dim {
        return Err(HmoeError::DimensionMismatch {
            what: "dataset features",
            expected: cfg.input_dim,
            actual: dataset.dim(),
        });
    }
    let dim = cfg.input_dim;
    let nodes = cfg.node_count();
    let mut totals = vec![0.0; nodes + 1];
    let mut sums = vec![0.0; (nodes + 1) * dim];
    let mut trace = GatingTrace::new(cfg);
    for i in 0..dataset.len() {
        let x = dataset.row(i);
        model.forward_into(x, None, &mut trace)?;
        for m in 1..=nodes {
            let p = trace.path_weight(m);
            if p == 0.0 {
                continue;
            }
            totals[m] += p;
            for (s, xi) in sums[m * dim..(m + 1) * dim].iter_mut().zip(x) {
                *s += p * xi;
            }
        }
    }
    Ok((1..=nodes)
        .map(|m| {
            let total = totals[m];
            let mean_input = if total >= INACTIVE_THRESHOLD {
                sums[m * dim..(m + 1) * dim].iter().map(|s| s / total).collect()
            } else {
                vec![0.0; dim]
            };
            NodeImage {
                node: m,
                weight_total: total,
                mean_input,
            }
        })
        .collect())
}

/// Rescales `values` linearly from their `[min, max]` to bytes `0..=255`.
/// A constant vector maps to mid-gray (128).
pub fn rescale_to_bytes(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let range = hi - lo;
    if !(range > 0.0 && range.is_finite()) {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Binary greyscale PGM (`P5`, maxval 255).
pub fn encode_pgm(pixels: &[u8], width: usize, height: usize) -> Result<Vec<u8>> {
    if width * height != pixels.len() {
        return Err(HmoeError::DimensionMismatch {
            what: "image pixels (width * height)",
            expected: width * height,
            actual: pixels.len(),
        });
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

/// Parses a `P5` file with maxval 255 into `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    const FORMAT: &str = "pgm";
    let malformed = |detail: &str| HmoeError::Malformed {
        format: FORMAT,
        detail: detail.to_string(),
    };
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(HmoeError::Truncated {
                format: FORMAT,
                detail: "incomplete header".into(),
            });
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| malformed("non-ascii header"))?);
    }
    if fields[0] != "P5" {
        return Err(malformed("not a binary greymap (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| malformed("bad header number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(malformed("only maxval 255 is supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let raster = bytes.get(pos + 1..).unwrap_or_default();
    if raster.len() != width * height {
        return Err(HmoeError::Truncated {
            format: FORMAT,
            detail: format!("expected {} pixels, found {}", width * height, raster.len()),
        });
    }
    Ok((width, height, raster.to_vec()))
}

pub fn node_image_filename(node: usize) -> String {
    format!("node_{node}.pgm")
}

/// Writes one node's mean input as a `width x height` PGM.
pub fn export_pgm(image: &NodeImage, width: usize, height: usize, path: &Path) -> Result<()> {
    if width * height != image.mean_input.len() {
        return Err(HmoeError::DimensionMismatch {
            what: "image size (width * height)",
            expected: image.mean_input.len(),
            actual: width * height,
        });
    }
    let bytes = encode_pgm(&rescale_to_bytes(&image.mean_input), width, height)?;
    std::fs::write(path, bytes).map_err(|e| HmoeError::io(path, e))
}

/// Exports every active node into `dir` as `node_<index>.pgm`.
pub fn export_node_images(images: &[NodeImage], width: usize, height: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HmoeError::io(dir, e))?;
    images
        .iter()
        .filter(|img| img.is_active())
        .map(|img| {
            let path = dir.join(node_image_filename(img.node));
            export_pgm(img, width, height, &path)?;
            Ok(path)
        })
        .collect()
}

/// `points` evenly spaced values from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (points - 1) as f64;
            (0..points).map(|i| lo + step * i as f64).collect()
        }
    }
}

fn check_scalar(model: &TreeModel) -> Result<()> {
    let cfg = model.config();
    if cfg.input_dim != 1 || cfg.output_dim != 1 {
        return Err(HmoeError::InvalidConfig(format!(
            "expected a scalar-input scalar-output model, got {} -> {}",
            cfg.input_dim, cfg.output_dim
        )));
    }
    Ok(())
}

/// Predictions of a scalar model at every grid point.
pub fn predict_grid(model: &TreeModel, grid: &[f64]) -> Result<Vec<f64>> {
    check_scalar(model)?;
    let mut trace = GatingTrace::new(model.config());
    grid.iter()
        .map(|&x| {
            model.forward_into(&[x], None, &mut trace)?;
            Ok(trace.output()[0])
        })
        .collect()
}

/// `sum_i |y(g_{i+1}) - y(g_i)|` over an ascending grid.
pub fn total_variation(model: &TreeModel, grid: &[f64]) -> Result<f64> {
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(HmoeError::InvalidConfig("grid must be sorted ascending".into()));
    }
    let ys = predict_grid(model, grid)?;
    Ok(ys.windows(2).map(|w| (w[1] - w[0]).abs()).sum())
}

/// Writes a scalar model's predictions as `x,y_pred` CSV.
pub fn write_prediction_csv(model: &TreeModel, grid: &[f64], path: &Path) -> Result<()> {
    let ys = predict_grid(model, grid)?;
    let file = std::fs::File::create(path).map_err(|e| HmoeError::io(path, e))?;
    write_xy_csv_to(
        std::io::BufWriter::new(file),
        ["x", "y_pred"],
        grid.iter().copied().zip(ys),
    )
    .map_err(|e| HmoeError::Malformed {
        format: "csv",
        detail: e.to_string(),
    })
}
