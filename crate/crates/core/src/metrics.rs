//! Generalized zero-shot inference and evaluation: top-k precision/recall/f1,
//! per-class AUROC, and seen/unseen/harmonic summaries.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{ClassVocabulary, Dataset, SemanticMatrix};
use crate::error::{Error, Result};
use crate::net::ModelParams;
use crate::objective::score_matrix;

/// Cosine scores of every sample (rows) against every class (columns).
pub type ScoreMatrix = Array2<f64>;

/// Scores every sample against every class in `semantics`, seen or unseen.
pub fn infer_scores(
    params: &ModelParams,
    features: ArrayView2<'_, f64>,
    semantics: &SemanticMatrix,
) -> Result<ScoreMatrix> {
    let latent = params.latent_visual(features)?;
    let projected = params.latent_semantic(semantics.as_array().view())?;
    score_matrix(latent.view(), projected.view())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub k: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// Per-class averages over classes with a defined denominator.
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Indices of the `k` highest scores; ties go to the lower index.
fn top_k_indices(row: ArrayView1<'_, f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Micro-averaged top-k recall, precision and f1, plus macro variants.
pub fn topk_metrics(scores: ArrayView2<'_, f64>, labels: &[Vec<u8>], k: usize) -> Result<TopK> {
    let c = scores.ncols();
    if k == 0 || k > c {
        return Err(Error::InvalidConfig(format!("k must lie in 1..={c}, got {k}")));
    }
    if labels.len() != scores.nrows() {
        return Err(Error::mismatch("label rows vs score rows", scores.nrows(), labels.len()));
    }
    let mut tp = vec![0usize; c];
    let mut predicted = vec![0usize; c];
    let mut actual = vec![0usize; c];
    for (row, y) in scores.outer_iter().zip(labels) {
        if y.len() != c {
            return Err(Error::mismatch("label width vs score columns", c, y.len()));
        }
        for (j, &v) in y.iter().enumerate() {
            actual[j] += usize::from(v != 0);
        }
        for j in top_k_indices(row, k) {
            predicted[j] += 1;
            tp[j] += usize::from(y[j] != 0);
        }
    }
    let tp_total: usize = tp.iter().sum();
    let actual_total: usize = actual.iter().sum();
    let n = labels.len();
    let precision = if n == 0 { 0.0 } else { tp_total as f64 / (n * k) as f64 };
    let recall = if actual_total == 0 {
        0.0
    } else {
        tp_total as f64 / actual_total as f64
    };

    let mean = |vals: Vec<f64>| {
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let per_p: Vec<f64> = (0..c)
        .filter(|&j| predicted[j] > 0)
        .map(|j| tp[j] as f64 / predicted[j] as f64)
        .collect();
    let per_r: Vec<f64> = (0..c)
        .filter(|&j| actual[j] > 0)
        .map(|j| tp[j] as f64 / actual[j] as f64)
        .collect();
    let per_f: Vec<f64> = (0..c)
        .filter(|&j| actual[j] > 0 || predicted[j] > 0)
        .map(|j| {
            let p = if predicted[j] > 0 { tp[j] as f64 / predicted[j] as f64 } else { 0.0 };
            let r = if actual[j] > 0 { tp[j] as f64 / actual[j] as f64 } else { 0.0 };
            f1(p, r)
        })
        .collect();
    Ok(TopK {
        k,
        recall,
        precision,
        f1: f1(precision, recall),
        macro_recall: mean(per_r),
        macro_precision: mean(per_p),
        macro_f1: mean(per_f),
    })
}

/// Rank-based (Mann-Whitney) AUROC with mid-ranks for tied scores.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::mismatch("AUROC scores vs labels", labels.len(), scores.len()));
    }
    let n_pos = labels.iter().filter(|&&y| y != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuroc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] != 0).count();
        rank_sum_pos += mid_rank * pos_in_group as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// `2ab / (a + b)`, and 0 when both are 0.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GzslSummary {
    pub seen_mean: f64,
    pub unseen_mean: f64,
    pub harmonic: f64,
}

/// Seen and unseen AUROC means and their harmonic mean. Classes whose AUROC
/// is undefined are left out of the means.
pub fn gzsl_summary(per_class_auroc: &[Option<f64>], vocab: &ClassVocabulary) -> Result<GzslSummary> {
    let mean_of = |ids: &[usize], which: &'static str| -> Result<f64> {
        let vals: Vec<f64> = ids.iter().filter_map(|&c| per_class_auroc.get(c).copied().flatten()).collect();
        if vals.is_empty() {
            return Err(Error::EmptyPartition(which));
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let seen_mean = mean_of(vocab.seen_ids(), "seen")?;
    let unseen_mean = mean_of(vocab.unseen_ids(), "unseen")?;
    Ok(GzslSummary {
        seen_mean,
        unseen_mean,
        harmonic: harmonic_mean(seen_mean, unseen_mean),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub seen: Vec<bool>,
    pub num_samples: usize,
    /// Samples without ground-truth positives; they count toward precision
    /// denominators only.
    pub zero_positive_samples: usize,
    pub per_k: Vec<TopK>,
    /// `None` where the class has only positives or only negatives.
    pub per_class_auroc: Vec<Option<f64>>,
    pub seen_mean: Option<f64>,
    pub unseen_mean: Option<f64>,
    pub harmonic: Option<f64>,
}

impl MetricsReport {
    pub fn from_scores(
        scores: ArrayView2<'_, f64>,
        labels: &[Vec<u8>],
        vocab: &ClassVocabulary,
        ks: &[usize],
    ) -> Result<Self> {
        let c = vocab.num_classes();
        if scores.ncols() != c {
            return Err(Error::mismatch("score columns vs classes", c, scores.ncols()));
        }
        let per_k = ks
            .iter()
            .map(|&k| topk_metrics(scores, labels, k))
            .collect::<Result<Vec<_>>>()?;
        let per_class_auroc: Vec<Option<f64>> = (0..c)
            .map(|j| {
                let col: Vec<f64> = scores.column(j).to_vec();
                let y: Vec<u8> = labels.iter().map(|l| l[j]).collect();
                match auroc(&col, &y) {
                    Ok(a) => Ok(Some(a)),
                    Err(Error::UndefinedAuroc) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        let mean = |ids: &[usize]| {
            let v: Vec<f64> = ids.iter().filter_map(|&c| per_class_auroc[c]).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let summary = gzsl_summary(&per_class_auroc, vocab).ok();
        Ok(Self {
            class_names: vocab.names().to_vec(),
            seen: (0..c).map(|i| vocab.is_seen(i)).collect(),
            num_samples: labels.len(),
            zero_positive_samples: labels.iter().filter(|l| l.iter().all(|&y| y == 0)).count(),
            per_k,
            seen_mean: mean(vocab.seen_ids()),
            unseen_mean: mean(vocab.unseen_ids()),
            harmonic: summary.map(|s| s.harmonic),
            per_class_auroc,
        })
    }

    /// Two CSV blocks: top-k and AUROC summary, then per-class AUROC.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut header: Vec<String> = Vec::new();
        let mut row: Vec<String> = Vec::new();
        for t in &self.per_k {
            for (name, v) in [("r", t.recall), ("p", t.precision), ("f1", t.f1)] {
                header.push(format!("{name}@{}", t.k));
                row.push(format!("{v}"));
            }
        }
        for (name, v) in [
            ("auroc_seen", self.seen_mean),
            ("auroc_unseen", self.unseen_mean),
            ("auroc_harmonic", self.harmonic),
        ] {
            header.push(name.into());
            row.push(opt(v));
        }
        writeln!(out, "{}", header.join(",")).unwrap();
        writeln!(out, "{}", row.join(",")).unwrap();
        out.push('\n');
        let names: Vec<String> = self
            .class_names
            .iter()
            .zip(&self.seen)
            .map(|(n, &s)| if s { n.clone() } else { format!("{n} (unseen)") })
            .collect();
        writeln!(out, "{}", names.join(",")).unwrap();
        let vals: Vec<String> = self.per_class_auroc.iter().map(|&v| opt(v)).collect();
        writeln!(out, "{}", vals.join(",")).unwrap();
        out
    }

    /// Fixed-width text rendering with two decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.per_k {
            writeln!(
                out,
                "top-{}: recall {:.2}  precision {:.2}  f1 {:.2}   (macro: {:.2} / {:.2} / {:.2})",
                t.k, t.recall, t.precision, t.f1, t.macro_recall, t.macro_precision, t.macro_f1
            )
            .unwrap();
        }
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"));
        writeln!(
            out,
            "AUROC: seen {}  unseen {}  harmonic {}",
            fmt(self.seen_mean),
            fmt(self.unseen_mean),
            fmt(self.harmonic)
        )
        .unwrap();
        let width = self.class_names.iter().map(|n| n.len()).max().unwrap_or(0) + 2;
        for ((name, &seen), &a) in self.class_names.iter().zip(&self.seen).zip(&self.per_class_auroc) {
            let tag = if seen { "" } else { "*" };
            writeln!(out, "  {:<width$}{}", format!("{name}{tag}"), fmt(a)).unwrap();
        }
        out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

/// Scores `ds` with `params` over all classes and computes the full report.
pub fn evaluate(
    params: &ModelParams,
    ds: &Dataset,
    semantics: &SemanticMatrix,
    ks: &[usize],
) -> Result<MetricsReport> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let scores = infer_scores(params, ds.feature_matrix(&idx).view(), semantics)?;
    MetricsReport::from_scores(scores.view(), &ds.all_class_labels(), &ds.vocab, ks)
}
