//! Synthetic multi-label zero-shot benchmark with known generative structure.
//!
//! Seen-class semantics share a common direction, which controls their
//! pairwise cosines. Each unseen-class semantic vector is a convex
//! combination of a few seen ones plus a bounded perturbation, so unseen
//! classes are inferable from the seen structure. A sample's features are a
//! fixed random linear map of the mean semantics of its positive classes,
//! plus isotropic Gaussian noise. The map is a scaled random isometry, so
//! the feature geometry mirrors the semantic geometry.

use std::sync::Arc;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{
    average_positive_semantics, ClassVocabulary, Dataset, LabelSpace, ManifestData, Sample,
    SemanticMatrix,
};
use crate::error::{Error, Result};
use crate::metrics::auroc;
use crate::net::cosine_similarity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticGeometry {
    /// Expected cosine between two seen-class embeddings.
    pub shared_cosine: f64,
    /// Number of seen classes mixed into each unseen class.
    pub unseen_parents: usize,
    /// Perturbation norm relative to the norm of the convex combination.
    pub unseen_perturbation: f64,
}

impl Default for SemanticGeometry {
    fn default() -> Self {
        Self {
            shared_cosine: 0.2,
            unseen_parents: 2,
            unseen_perturbation: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub num_seen: usize,
    pub semantic_dim: usize,
    pub feature_dim: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub geometry: SemanticGeometry,
    pub noise_sigma: f64,
    pub max_labels_per_sample: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 14,
            num_seen: 10,
            semantic_dim: 16,
            feature_dim: 32,
            n_train: 2000,
            n_val: 300,
            n_test: 700,
            geometry: SemanticGeometry::default(),
            noise_sigma: 0.5,
            max_labels_per_sample: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InfeasibleSpec(m));
        if self.num_seen < 2 || self.num_seen >= self.num_classes {
            return fail(format!(
                "need 2 <= seen < classes, got {} seen of {}",
                self.num_seen, self.num_classes
            ));
        }
        if self.semantic_dim == 0 || self.feature_dim == 0 {
            return fail("dimensions must be positive".into());
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return fail("split sizes must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if self.max_labels_per_sample == 0 || self.max_labels_per_sample > self.num_seen {
            return fail(format!(
                "max_labels_per_sample must lie in 1..={} (the seen classes available to the training split), got {}",
                self.num_seen, self.max_labels_per_sample
            ));
        }
        let g = &self.geometry;
        if !(0.0..1.0).contains(&g.shared_cosine) {
            return fail(format!("shared_cosine must lie in [0, 1), got {}", g.shared_cosine));
        }
        if g.unseen_parents == 0 || g.unseen_parents > self.num_seen {
            return fail(format!("unseen_parents must lie in 1..={}", self.num_seen));
        }
        if !(g.unseen_perturbation >= 0.0 && g.unseen_perturbation.is_finite()) {
            return fail("unseen_perturbation must be >= 0".into());
        }
        Ok(())
    }

    /// Expected positive rate of a class in a split.
    pub fn target_rate(&self, split: Split, class: usize) -> f64 {
        let mean_labels = (1 + self.max_labels_per_sample) as f64 / 2.0;
        match split {
            Split::Train if class < self.num_seen => mean_labels / self.num_seen as f64,
            Split::Train => 0.0,
            _ => mean_labels / self.num_classes as f64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthBenchmark {
    pub spec: SynthSpec,
    pub data: ManifestData,
    /// Ground-truth feature map, shape `(feature_dim, semantic_dim)`.
    pub projection: Array2<f64>,
}

fn gaussian_unit(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.dot(&v).sqrt();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn normalized(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    v / n
}

/// `sqrt(v)` times a random `(v, d)` matrix with orthonormal columns (the
/// first `min(v, d)` of them when `v < d`), so feature-space cosines follow
/// semantic-space cosines.
fn random_isometry(rng: &mut ChaCha8Rng, v: usize, d: usize) -> Array2<f64> {
    let k = v.max(d);
    let g = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let scale = (v as f64).sqrt();
    Array2::from_shape_fn((v, d), |(i, j)| q[(i, j)] * scale)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthBenchmark> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (c, s, d, v) = (spec.num_classes, spec.num_seen, spec.semantic_dim, spec.feature_dim);
    let geo = &spec.geometry;

    let common = gaussian_unit(&mut rng, d);
    let mut rows = Array2::zeros((c, d));
    for i in 0..s {
        let own = gaussian_unit(&mut rng, d);
        let w = &common * geo.shared_cosine.sqrt() + &own * (1.0 - geo.shared_cosine).sqrt();
        rows.row_mut(i).assign(&normalized(w));
    }
    for u in s..c {
        let parents = sample_indices(&mut rng, s, geo.unseen_parents).into_vec();
        let weights: Vec<f64> = parents.iter().map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let mut combo = Array1::zeros(d);
        for (&p, &w) in parents.iter().zip(&weights) {
            combo += &(&rows.row(p) * (w / total));
        }
        let norm = combo.dot(&combo).sqrt();
        let perturb = gaussian_unit(&mut rng, d) * (geo.unseen_perturbation * norm);
        rows.row_mut(u).assign(&normalized(combo + perturb));
    }
    let semantics = SemanticMatrix::new(rows)?;

    let projection = random_isometry(&mut rng, v, d);

    let names: Vec<String> = (0..c).map(|i| format!("class_{i:02}")).collect();
    let seen_flags: Vec<bool> = (0..c).map(|i| i < s).collect();
    let vocab = Arc::new(ClassVocabulary::new(names, &seen_flags)?);

    let mut make_split = |n: usize, pool: usize| -> Result<Dataset> {
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let k = rng.random_range(1..=spec.max_labels_per_sample);
            let mut labels = vec![0u8; c];
            for cls in sample_indices(&mut rng, pool, k) {
                labels[cls] = 1;
            }
            let mean = average_positive_semantics(&labels, &semantics)?;
            let clean = projection.dot(&mean);
            let features: Vec<f64> = clean
                .iter()
                .map(|&x| x + spec.noise_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            samples.push(Sample::new(features, labels));
        }
        Ok(Dataset::new(samples, LabelSpace::AllClasses, v, vocab.clone()))
    };
    let train = make_split(spec.n_train, s)?.into_training_split()?;
    let val = make_split(spec.n_val, c)?;
    let test = make_split(spec.n_test, c)?;

    Ok(SynthBenchmark {
        spec: spec.clone(),
        data: ManifestData {
            vocab,
            semantics,
            train,
            val,
            test,
        },
        projection,
    })
}

impl SynthBenchmark {
    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.data.train,
            Split::Val => &self.data.val,
            Split::Test => &self.data.test,
        }
    }

    /// Per-class AUROC of the generator's own scoring rule: cosine between
    /// the least-squares de-noised semantics `pinv(projection) f` and each
    /// class embedding. `None` for classes absent from (or saturating) the split.
    pub fn reference_auroc(&self, split: Split) -> Result<Vec<Option<f64>>> {
        let (v, d) = self.projection.dim();
        let a = DMatrix::from_row_iterator(v, d, self.projection.iter().copied());
        let pinv = a
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::InvalidConfig(format!("pseudo-inverse failed: {e}")))?;
        let pinv = Array2::from_shape_fn((d, v), |(i, j)| pinv[(i, j)]);

        let ds = self.split(split);
        let labels = ds.all_class_labels();
        let sem = &self.data.semantics;
        let mut scores = Array2::zeros((ds.len(), sem.len()));
        for (r, s) in ds.samples.iter().enumerate() {
            let est = pinv.dot(&Array1::from(s.features.clone()));
            for cls in 0..sem.len() {
                scores[(r, cls)] = cosine_similarity(est.view(), sem.row(cls))?;
            }
        }
        (0..sem.len())
            .map(|cls| {
                let col = scores.column(cls).to_vec();
                let y: Vec<u8> = labels.iter().map(|l| l[cls]).collect();
                match auroc(&col, &y) {
                    Ok(a) => Ok(Some(a)),
                    Err(Error::UndefinedAuroc) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect()
    }
}

/// Generates the benchmark for `spec` and computes its reference AUROCs.
pub fn bayes_reference_auroc(spec: &SynthSpec, split: Split) -> Result<Vec<Option<f64>>> {
    generate(spec)?.reference_auroc(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{inductive_violations, validate_dataset};

    fn small() -> SynthSpec {
        SynthSpec {
            n_train: 200,
            n_val: 60,
            n_test: 80,
            ..Default::default()
        }
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        for bad in [
            SynthSpec { num_seen: 14, ..small() },
            SynthSpec { max_labels_per_sample: 11, ..small() },
            SynthSpec { max_labels_per_sample: 0, ..small() },
            SynthSpec { noise_sigma: -1.0, ..small() },
            SynthSpec { n_val: 0, ..small() },
        ] {
            assert!(matches!(generate(&bad), Err(Error::InfeasibleSpec(_))));
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.projection, b.projection);
        let c = generate(&SynthSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.data.train, c.data.train);
    }

    #[test]
    fn splits_are_valid_and_inductive() {
        for seed in 0..5 {
            let b = generate(&SynthSpec { seed, ..small() }).unwrap();
            assert_eq!(b.data.train.label_space, LabelSpace::SeenOnly);
            for ds in [&b.data.train, &b.data.val, &b.data.test] {
                assert!(validate_dataset(ds).is_empty());
            }
            let as_all = Dataset::new(
                b.data.train.samples.clone(),
                LabelSpace::SeenOnly,
                b.data.train.feature_dim,
                b.data.vocab.clone(),
            );
            assert!(inductive_violations(&as_all).is_empty());
            assert_eq!(b.data.train.zero_positive_count(), 0);
            let unseen_pos: usize = b
                .data
                .val
                .samples
                .iter()
                .map(|s| b.data.vocab.unseen_ids().iter().filter(|&&u| s.labels[u] == 1).count())
                .sum();
            assert!(unseen_pos > 0);
        }
    }

    #[test]
    fn noiseless_single_label_features_are_exact_images() {
        let spec = SynthSpec { noise_sigma: 0.0, max_labels_per_sample: 1, ..small() };
        let b = generate(&spec).unwrap();
        let s = &b.data.val.samples[0];
        let cls = s.positives().next().unwrap();
        let expected = b.projection.dot(&b.data.semantics.row(cls));
        for (x, y) in s.features.iter().zip(expected.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn noiseless_reference_is_perfect() {
        let spec = SynthSpec { noise_sigma: 0.0, max_labels_per_sample: 1, ..small() };
        for split in [Split::Val, Split::Test] {
            let r = bayes_reference_auroc(&spec, split).unwrap();
            for a in r.into_iter().flatten() {
                assert!((a - 1.0).abs() < 1e-12, "{a}");
            }
        }
    }

    #[test]
    fn heavy_noise_reference_approaches_chance() {
        let spec = SynthSpec { noise_sigma: 1e4, n_test: 3000, ..small() };
        let r = bayes_reference_auroc(&spec, Split::Test).unwrap();
        let vals: Vec<f64> = r.into_iter().flatten().collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 0.5).abs() < 0.03, "{mean}");
    }

    #[test]
    fn unseen_semantics_are_close_to_parents() {
        let b = generate(&small()).unwrap();
        let sem = &b.data.semantics;
        for u in b.data.vocab.unseen_ids() {
            let best = b
                .data
                .vocab
                .seen_ids()
                .iter()
                .map(|&s| cosine_similarity(sem.row(*u), sem.row(s)).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(best > 0.3, "unseen class {u} unrelated to every seen class ({best})");
        }
    }
}
