//! JSON manifest plus headerless CSV files.
//!
//! Label files always carry one column per class in manifest order, so an
//! unseen positive in the training split is detectable on load.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    validate_dataset, ClassVocabulary, Dataset, LabelSpace, Sample, SemanticMatrix,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    pub seen: bool,
    pub embedding_row: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub features: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: SplitFiles,
    pub val: SplitFiles,
    pub test: SplitFiles,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: Vec<ClassEntry>,
    pub d: usize,
    pub v: usize,
    pub embeddings: PathBuf,
    pub splits: Splits,
}

/// Everything a manifest describes, validated.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestData {
    pub vocab: Arc<ClassVocabulary>,
    pub semantics: SemanticMatrix,
    /// Seen-only labels.
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl ManifestData {
    pub fn split(&self, name: &str) -> Option<&Dataset> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<ManifestData> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let names = manifest.classes.iter().map(|c| c.name.clone()).collect();
    let seen: Vec<bool> = manifest.classes.iter().map(|c| c.seen).collect();
    let vocab = Arc::new(ClassVocabulary::new(names, &seen)?);

    let emb_path = resolve(&manifest.embeddings);
    let emb_rows = read_real_rows(&emb_path, manifest.d)?;
    let c = manifest.classes.len();
    let mut rows = Array2::zeros((c, manifest.d));
    for (i, class) in manifest.classes.iter().enumerate() {
        let src = emb_rows.get(class.embedding_row).ok_or_else(|| Error::Parse {
            path: emb_path.clone(),
            line: class.embedding_row + 1,
            message: format!(
                "class '{}' references embedding row {} but the file has {} rows",
                class.name,
                class.embedding_row,
                emb_rows.len()
            ),
        })?;
        rows.row_mut(i).assign(&ndarray::ArrayView1::from(&src[..]));
    }
    let semantics = SemanticMatrix::new(rows)?;

    let load_split = |files: &SplitFiles| -> Result<Dataset> {
        let fpath = resolve(&files.features);
        let lpath = resolve(&files.labels);
        let features = read_real_rows(&fpath, manifest.v)?;
        let labels = read_label_rows(&lpath, c)?;
        if features.len() != labels.len() {
            return Err(Error::mismatch(
                format!("sample count of {} vs {}", lpath.display(), fpath.display()),
                features.len(),
                labels.len(),
            ));
        }
        let samples = features
            .into_iter()
            .zip(labels)
            .map(|(f, y)| Sample::new(f, y))
            .collect();
        let ds = Dataset::new(samples, LabelSpace::AllClasses, manifest.v, vocab.clone());
        let violations = validate_dataset(&ds);
        if !violations.is_empty() {
            return Err(Error::InvalidDataset(violations));
        }
        Ok(ds)
    };

    let train = load_split(&manifest.splits.train)?.into_training_split()?;
    let val = load_split(&manifest.splits.val)?;
    let test = load_split(&manifest.splits.test)?;
    if train.zero_positive_count() > 0 {
        log::warn!(
            "training split contains {} sample(s) without positive labels",
            train.zero_positive_count()
        );
    }
    Ok(ManifestData {
        vocab,
        semantics,
        train,
        val,
        test,
    })
}

/// Writes `manifest.json` and its CSV files into `dir`; returns the manifest path.
pub fn save_manifest(dir: impl AsRef<Path>, data: &ManifestData) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let split = |name: &str| SplitFiles {
        features: PathBuf::from(format!("{name}_features.csv")),
        labels: PathBuf::from(format!("{name}_labels.csv")),
    };
    let manifest = Manifest {
        classes: data
            .vocab
            .names()
            .iter()
            .enumerate()
            .map(|(i, name)| ClassEntry {
                name: name.clone(),
                seen: data.vocab.is_seen(i),
                embedding_row: i,
            })
            .collect(),
        d: data.semantics.dim(),
        v: data.train.feature_dim,
        embeddings: PathBuf::from("embeddings.csv"),
        splits: Splits {
            train: split("train"),
            val: split("val"),
            test: split("test"),
        },
    };

    let emb: Vec<Vec<f64>> = data
        .semantics
        .as_array()
        .outer_iter()
        .map(|r| r.to_vec())
        .collect();
    write_file(&dir.join(&manifest.embeddings), &format_real_rows(emb.iter().map(|r| &r[..])))?;
    for (files, ds) in [
        (&manifest.splits.train, &data.train),
        (&manifest.splits.val, &data.val),
        (&manifest.splits.test, &data.test),
    ] {
        write_file(
            &dir.join(&files.features),
            &format_real_rows(ds.samples.iter().map(|s| &s.features[..])),
        )?;
        let labels = ds.all_class_labels();
        write_file(
            &dir.join(&files.labels),
            &format_label_rows(labels.iter().map(|l| &l[..])),
        )?;
    }
    let path = dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_file(&path, &json)?;
    Ok(path)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn format_real_rows<'a>(rows: impl Iterator<Item = &'a [f64]>) -> String {
    let mut out = String::new();
    for row in rows {
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            // Display prints the shortest string that parses back to the same f64
            write!(out, "{x}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn format_label_rows<'a>(rows: impl Iterator<Item = &'a [u8]>) -> String {
    let mut out = String::new();
    for row in rows {
        for (j, y) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{y}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn read_real_rows(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (line, content) in data_lines(&text) {
        let row = content
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("'{}' is not a decimal number", tok.trim()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {width} values, found {}", row.len()),
            });
        }
        if let Some(j) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("non-finite value in column {j}"),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read_label_rows(path: &Path, width: usize) -> Result<Vec<Vec<u8>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (line, content) in data_lines(&text) {
        let row = content
            .split(',')
            .map(|tok| {
                tok.trim().parse::<u8>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("'{}' is not a 0/1 label", tok.trim()),
                })
            })
            .collect::<Result<Vec<u8>>>()?;
        if row.len() != width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {width} labels, found {}", row.len()),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}
