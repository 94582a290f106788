//! Dataset sources named on the command line.
//!
//! A source is one of
//!
//! * `path.csv`: feature columns followed by one target column,
//! * `path.fvec`: dense feature matrix with class labels,
//! * `images,labels`: an explicit IDX pair,
//! * `...images-idx3-ubyte[.gz]`: IDX images whose labels file is found by
//!   replacing `images-idx3` with `labels-idx1` in the file name.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::data::{read_fvec, read_idx, read_xy_csv, split, Dataset, SplitSpec};

/// Resolves a source string into the files it names, images before labels.
pub fn source_files(source: &str) -> anyhow::Result<Vec<PathBuf>> {
    if let Some((images, labels)) = source.split_once(',') {
        return Ok(vec![images.into(), labels.into()]);
    }
    let path = PathBuf::from(source);
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if name.contains("idx3-ubyte") {
        let Some(labels) = name
            .contains("images-idx3")
            .then(|| name.replace("images-idx3", "labels-idx1"))
        else {
            bail!("cannot derive a labels file from '{source}'; pass 'images,labels'");
        };
        return Ok(vec![path.clone(), path.with_file_name(labels)]);
    }
    Ok(vec![path])
}

pub fn load_dataset(source: &str) -> anyhow::Result<Dataset> {
    let files = source_files(source)?;
    for f in &files {
        if !f.is_file() {
            bail!("dataset file '{}' does not exist", f.display());
        }
    }
    let dataset = match files.as_slice() {
        [images, labels] => read_idx(images, labels),
        [path] => match extension(path).as_deref() {
            Some("csv") => read_xy_csv(path),
            Some("fvec") => read_fvec(path),
            _ => bail!("unrecognized dataset format for '{source}' (expected .csv, .fvec or IDX)"),
        },
        _ => unreachable!("a source names one or two files"),
    };
    dataset.with_context(|| format!("loading dataset '{source}'"))
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

/// Where the training, validation and test sets come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataSources {
    pub train: String,
    pub val: Option<String>,
    pub test: Option<String>,
    /// Carves the validation set out of `train` when `val` is absent.
    pub val_split: Option<SplitSpec>,
}

/// Summary of a loaded dataset for run manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub source: String,
    pub name: String,
    pub examples: usize,
    pub dim: usize,
}

impl DatasetInfo {
    fn of(source: &str, data: &Dataset) -> Self {
        DatasetInfo {
            source: source.to_owned(),
            name: data.name().to_owned(),
            examples: data.len(),
            dim: data.dim(),
        }
    }
}

pub struct LoadedData {
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Option<Dataset>,
}

impl LoadedData {
    pub fn info(&self, sources: &DataSources) -> [Option<DatasetInfo>; 3] {
        let val_source = sources.val.clone().unwrap_or_else(|| sources.train.clone());
        [
            Some(DatasetInfo::of(&sources.train, &self.train)),
            self.val.as_ref().map(|v| DatasetInfo::of(&val_source, v)),
            self.test
                .as_ref()
                .map(|t| DatasetInfo::of(sources.test.as_deref().unwrap_or_default(), t)),
        ]
    }
}

impl DataSources {
    pub fn load(&self) -> anyhow::Result<LoadedData> {
        if self.val.is_some() && self.val_split.is_some() {
            bail!("give either a validation set or a validation ratio, not both");
        }
        let mut train = load_dataset(&self.train)?;
        let mut val = self.val.as_deref().map(load_dataset).transpose()?;
        let test = self.test.as_deref().map(load_dataset).transpose()?;
        if let Some(spec) = &self.val_split {
            let (a, b) = split(&train, spec)?;
            train = a;
            val = Some(b);
        }
        Ok(LoadedData { train, val, test })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_labels_path_is_derived() {
        let files = source_files("d/train-images-idx3-ubyte.gz").unwrap();
        assert_eq!(
            files,
            [
                PathBuf::from("d/train-images-idx3-ubyte.gz"),
                "d/train-labels-idx1-ubyte.gz".into()
            ]
        );
        let files = source_files("a.idx,b.idx").unwrap();
        assert_eq!(files, [PathBuf::from("a.idx"), "b.idx".into()]);
        assert!(source_files("d/weird-idx3-ubyte").is_err());
    }

    #[test]
    fn missing_and_unknown_sources_fail() {
        assert!(load_dataset("/nonexistent/x.csv").is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        std::fs::write(&path, b"0").unwrap();
        assert!(load_dataset(path.to_str().unwrap()).is_err());
    }
}
