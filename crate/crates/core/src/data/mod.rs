//! Class vocabulary, semantic embeddings, labelled samples and dataset splits.
//!
//! Class indices always refer to positions in [`ClassVocabulary::names`].
//! A dataset stores its multi-hot labels either over the seen classes only
//! (positions in [`ClassVocabulary::seen_ids`]) or over all classes.

mod manifest;

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{load_manifest, save_manifest, ClassEntry, Manifest, ManifestData, SplitFiles};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassVocabulary {
    names: Vec<String>,
    seen_ids: Vec<usize>,
    unseen_ids: Vec<usize>,
}

impl ClassVocabulary {
    /// Builds a vocabulary from class names and a per-class seen flag.
    pub fn new(names: Vec<String>, seen: &[bool]) -> Result<Self> {
        if names.len() != seen.len() {
            return Err(Error::mismatch("seen flags", names.len(), seen.len()));
        }
        let seen_ids = (0..names.len()).filter(|&i| seen[i]).collect();
        let unseen_ids = (0..names.len()).filter(|&i| !seen[i]).collect();
        Self::from_partition(names, seen_ids, unseen_ids)
    }

    pub fn from_partition(
        names: Vec<String>,
        seen_ids: Vec<usize>,
        unseen_ids: Vec<usize>,
    ) -> Result<Self> {
        let c = names.len();
        let mut distinct = HashSet::new();
        for name in &names {
            if name.trim().is_empty() {
                return Err(Error::InvalidVocabulary("empty class name".into()));
            }
            if !distinct.insert(name.as_str()) {
                return Err(Error::InvalidVocabulary(format!("duplicate class name '{name}'")));
            }
        }
        let mut covered = vec![false; c];
        for &id in seen_ids.iter().chain(&unseen_ids) {
            if id >= c {
                return Err(Error::InvalidVocabulary(format!(
                    "class id {id} out of range for {c} classes"
                )));
            }
            if covered[id] {
                return Err(Error::InvalidVocabulary(format!(
                    "class id {id} listed more than once in the seen/unseen partition"
                )));
            }
            covered[id] = true;
        }
        if let Some(missing) = covered.iter().position(|&c| !c) {
            return Err(Error::InvalidVocabulary(format!(
                "class '{}' is in neither the seen nor the unseen set",
                names[missing]
            )));
        }
        if seen_ids.len() < 2 {
            return Err(Error::InvalidVocabulary(format!(
                "at least 2 seen classes are required, found {}",
                seen_ids.len()
            )));
        }
        Ok(Self {
            names,
            seen_ids,
            unseen_ids,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn seen_ids(&self) -> &[usize] {
        &self.seen_ids
    }

    pub fn unseen_ids(&self) -> &[usize] {
        &self.unseen_ids
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn num_seen(&self) -> usize {
        self.seen_ids.len()
    }

    pub fn is_seen(&self, class: usize) -> bool {
        self.seen_ids.contains(&class)
    }

    /// Position of `class` within the seen label space.
    pub fn seen_position(&self, class: usize) -> Option<usize> {
        self.seen_ids.iter().position(|&id| id == class)
    }
}

/// One semantic embedding per class, rows in vocabulary order.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMatrix {
    rows: Array2<f64>,
}

impl SemanticMatrix {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        for (i, row) in rows.outer_iter().enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("semantic embedding row {i}")));
            }
            if row.dot(&row) == 0.0 {
                return Err(Error::DegenerateVector(format!("semantic embedding row {i}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.rows
    }

    /// The sub-matrix of the given rows, in the given order.
    pub fn select(&self, ids: &[usize]) -> SemanticMatrix {
        SemanticMatrix {
            rows: self.rows.select(ndarray::Axis(0), ids),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Sample {
    pub fn new(features: Vec<f64>, labels: Vec<u8>) -> Self {
        Self { features, labels }
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y != 0)
            .map(|(i, _)| i)
    }

    pub fn has_positive(&self) -> bool {
        self.labels.iter().any(|&y| y != 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpace {
    SeenOnly,
    AllClasses,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub label_space: LabelSpace,
    pub feature_dim: usize,
    pub vocab: Arc<ClassVocabulary>,
}

impl Dataset {
    pub fn new(
        samples: Vec<Sample>,
        label_space: LabelSpace,
        feature_dim: usize,
        vocab: Arc<ClassVocabulary>,
    ) -> Self {
        Self {
            samples,
            label_space,
            feature_dim,
            vocab,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_width(&self) -> usize {
        match self.label_space {
            LabelSpace::SeenOnly => self.vocab.num_seen(),
            LabelSpace::AllClasses => self.vocab.num_classes(),
        }
    }

    /// Feature rows of the selected samples stacked into a matrix.
    pub fn feature_matrix(&self, indices: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((indices.len(), self.feature_dim));
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r)
                .assign(&ArrayView1::from(&self.samples[i].features[..]));
        }
        out
    }

    /// Labels of every sample restricted to the seen classes.
    ///
    /// For an all-class dataset, positives of unseen classes are dropped.
    pub fn seen_labels(&self) -> Vec<Vec<u8>> {
        match self.label_space {
            LabelSpace::SeenOnly => self.samples.iter().map(|s| s.labels.clone()).collect(),
            LabelSpace::AllClasses => self
                .samples
                .iter()
                .map(|s| self.vocab.seen_ids().iter().map(|&c| s.labels[c]).collect())
                .collect(),
        }
    }

    /// Labels of every sample expanded to all classes.
    pub fn all_class_labels(&self) -> Vec<Vec<u8>> {
        match self.label_space {
            LabelSpace::AllClasses => self.samples.iter().map(|s| s.labels.clone()).collect(),
            LabelSpace::SeenOnly => self
                .samples
                .iter()
                .map(|s| {
                    let mut full = vec![0u8; self.vocab.num_classes()];
                    for (pos, &c) in self.vocab.seen_ids().iter().enumerate() {
                        full[c] = s.labels[pos];
                    }
                    full
                })
                .collect(),
        }
    }

    /// Converts an all-class dataset into a seen-only training split,
    /// rejecting the first sample that carries an unseen-class positive.
    pub fn into_training_split(self) -> Result<Dataset> {
        if self.label_space == LabelSpace::SeenOnly {
            return Ok(self);
        }
        if let Some(v) = inductive_violations(&self).into_iter().next() {
            let sample = v.sample.unwrap_or(0);
            let class = self.samples[sample]
                .positives()
                .find(|&c| !self.vocab.is_seen(c))
                .map(|c| self.vocab.names()[c].clone())
                .unwrap_or_default();
            return Err(Error::InductiveViolation { sample, class });
        }
        let labels = self.seen_labels();
        let samples = self
            .samples
            .into_iter()
            .zip(labels)
            .map(|(s, labels)| Sample::new(s.features, labels))
            .collect();
        Ok(Dataset::new(
            samples,
            LabelSpace::SeenOnly,
            self.feature_dim,
            self.vocab,
        ))
    }

    pub fn zero_positive_count(&self) -> usize {
        self.samples.iter().filter(|s| !s.has_positive()).count()
    }

    /// Drops samples without any positive label.
    pub fn without_zero_positive(&self) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| s.has_positive())
                .cloned()
                .collect(),
            ..self.clone()
        }
    }
}

/// A broken dataset invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub sample: Option<usize>,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sample {
            Some(i) => write!(f, "sample {i}: {}", self.reason),
            None => f.write_str(&self.reason),
        }
    }
}

/// Lists every type-invariant violation in `ds`; empty when the dataset is well-formed.
pub fn validate_dataset(ds: &Dataset) -> Vec<Violation> {
    let width = ds.label_width();
    let mut out = Vec::new();
    for (i, s) in ds.samples.iter().enumerate() {
        let mut push = |reason: String| {
            out.push(Violation {
                sample: Some(i),
                reason,
            })
        };
        if s.features.len() != ds.feature_dim {
            push(format!(
                "feature length {} does not match declared dimension {}",
                s.features.len(),
                ds.feature_dim
            ));
        }
        if let Some(j) = s.features.iter().position(|x| !x.is_finite()) {
            push(format!("non-finite feature component {j}"));
        }
        if s.labels.len() != width {
            push(format!(
                "label length {} does not match label space width {width}",
                s.labels.len()
            ));
        }
        if let Some(j) = s.labels.iter().position(|&y| y > 1) {
            push(format!("non-binary label at class position {j}"));
        }
    }
    out
}

/// Samples of an all-class dataset that carry a positive for an unseen class.
pub fn inductive_violations(ds: &Dataset) -> Vec<Violation> {
    if ds.label_space == LabelSpace::SeenOnly {
        return Vec::new();
    }
    ds.samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let unseen: Vec<&str> = s
                .positives()
                .filter(|&c| c < ds.vocab.num_classes() && !ds.vocab.is_seen(c))
                .map(|c| ds.vocab.names()[c].as_str())
                .collect();
            (!unseen.is_empty()).then(|| Violation {
                sample: Some(i),
                reason: format!("unseen-class positive in training split ({})", unseen.join(", ")),
            })
        })
        .collect()
}

/// Mean of the semantic rows selected by the positives of `labels`.
///
/// `labels` must be indexed like the rows of `semantics`.
pub fn average_positive_semantics(labels: &[u8], semantics: &SemanticMatrix) -> Result<Array1<f64>> {
    if labels.len() != semantics.len() {
        return Err(Error::mismatch(
            "label vector vs semantic rows",
            semantics.len(),
            labels.len(),
        ));
    }
    let mut sum = Array1::zeros(semantics.dim());
    let mut count = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        if y != 0 {
            sum += &semantics.row(i);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoPositiveLabels);
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn vocab() -> Arc<ClassVocabulary> {
        Arc::new(
            ClassVocabulary::new(
                vec!["a".into(), "b".into(), "c".into()],
                &[true, true, false],
            )
            .unwrap(),
        )
    }

    #[test]
    fn vocabulary_partition() {
        let v = vocab();
        assert_eq!(v.seen_ids(), &[0, 1]);
        assert_eq!(v.unseen_ids(), &[2]);
        assert_eq!(v.seen_position(1), Some(1));
        assert_eq!(v.seen_position(2), None);
    }

    #[test]
    fn vocabulary_rejects_bad_input() {
        let dup = ClassVocabulary::new(vec!["a".into(), "a".into()], &[true, true]);
        assert!(matches!(dup, Err(Error::InvalidVocabulary(_))));
        let one_seen = ClassVocabulary::new(vec!["a".into(), "b".into()], &[true, false]);
        assert!(matches!(one_seen, Err(Error::InvalidVocabulary(_))));
        let empty = ClassVocabulary::new(vec!["".into(), "b".into()], &[true, true]);
        assert!(empty.is_err());
        let overlap = ClassVocabulary::from_partition(
            vec!["a".into(), "b".into(), "c".into()],
            vec![0, 1],
            vec![1, 2],
        );
        assert!(overlap.is_err());
        let missing =
            ClassVocabulary::from_partition(vec!["a".into(), "b".into(), "c".into()], vec![0, 1], vec![]);
        assert!(missing.is_err());
    }

    #[test]
    fn semantic_matrix_rejects_zero_and_nan_rows() {
        assert!(SemanticMatrix::new(array![[1.0, 0.0], [0.0, 0.0]]).is_err());
        assert!(SemanticMatrix::new(array![[1.0, f64::NAN]]).is_err());
    }

    #[test]
    fn validate_well_formed() {
        let ds = Dataset::new(
            vec![Sample::new(vec![0.5, 1.0], vec![1, 0, 1])],
            LabelSpace::AllClasses,
            2,
            vocab(),
        );
        assert!(validate_dataset(&ds).is_empty());
    }

    #[test]
    fn validate_non_binary_label() {
        let ds = Dataset::new(
            vec![Sample::new(vec![0.5, 1.0], vec![2, 0])],
            LabelSpace::SeenOnly,
            2,
            vocab(),
        );
        let v = validate_dataset(&ds);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].sample, Some(0));
        assert!(v[0].reason.contains("non-binary label"));
    }

    #[test]
    fn validate_nan_feature_names_component() {
        let ds = Dataset::new(
            vec![
                Sample::new(vec![0.5, 1.0], vec![1, 0]),
                Sample::new(vec![0.5, f64::NAN], vec![1, 0]),
            ],
            LabelSpace::SeenOnly,
            2,
            vocab(),
        );
        let v = validate_dataset(&ds);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].sample, Some(1));
        assert!(v[0].reason.contains("component 1"));
    }

    #[test]
    fn training_split_rejects_unseen_positive() {
        let ds = Dataset::new(
            vec![
                Sample::new(vec![0.0], vec![1, 0, 0]),
                Sample::new(vec![0.0], vec![0, 1, 1]),
            ],
            LabelSpace::AllClasses,
            1,
            vocab(),
        );
        match ds.into_training_split() {
            Err(Error::InductiveViolation { sample, class }) => {
                assert_eq!(sample, 1);
                assert_eq!(class, "c");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn training_split_projects_labels() {
        let ds = Dataset::new(
            vec![Sample::new(vec![0.0], vec![0, 1, 0])],
            LabelSpace::AllClasses,
            1,
            vocab(),
        );
        let train = ds.into_training_split().unwrap();
        assert_eq!(train.label_space, LabelSpace::SeenOnly);
        assert_eq!(train.samples[0].labels, vec![0, 1]);
        assert_eq!(train.all_class_labels()[0], vec![0, 1, 0]);
    }

    #[test]
    fn average_of_single_positive_is_the_row() {
        let w = SemanticMatrix::new(array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]]).unwrap();
        let avg = average_positive_semantics(&[0, 1, 0], &w).unwrap();
        assert_eq!(avg, array![3.0, -1.0]);
    }

    #[test]
    fn average_of_opposite_rows_is_zero() {
        let w = SemanticMatrix::new(array![[1.0, -2.0], [-1.0, 2.0]]).unwrap();
        let avg = average_positive_semantics(&[1, 1], &w).unwrap();
        assert_eq!(avg, array![0.0, 0.0]);
    }

    #[test]
    fn average_of_two_basis_rows() {
        let w = SemanticMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let avg = average_positive_semantics(&[1, 1], &w).unwrap();
        assert_eq!(avg, array![0.5, 0.5]);
    }

    #[test]
    fn average_without_positives_fails() {
        let w = SemanticMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(
            average_positive_semantics(&[0, 0], &w),
            Err(Error::NoPositiveLabels)
        ));
    }

    proptest::proptest! {
        #[test]
        fn average_is_permutation_invariant(
            rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 4),
            labels in proptest::collection::vec(0u8..2, 4),
            perm_seed in 0usize..24,
        ) {
            proptest::prop_assume!(labels.iter().any(|&y| y == 1));
            proptest::prop_assume!(rows.iter().all(|r| r.iter().any(|&x| x != 0.0)));
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let w = SemanticMatrix::new(Array2::from_shape_vec((4, 3), flat).unwrap()).unwrap();
            // apply the same permutation to rows and labels
            let mut perm: Vec<usize> = (0..4).collect();
            let mut k = perm_seed;
            for i in (1..4).rev() {
                perm.swap(i, k % (i + 1));
                k /= i + 1;
            }
            let wp = w.select(&perm);
            let lp: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
            let a = average_positive_semantics(&labels, &w).unwrap();
            let b = average_positive_semantics(&lp, &wp).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                proptest::prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
