//! Training objective: margin ranking over relevance scores, visual/semantic
//! alignment, and inter-class consistency of the projected semantics.
//!
//! `total = rank + gamma1 * align + gamma2 * con`, with each term switchable
//! for ablations. Gradients are derived by hand and pushed through the three
//! networks.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{average_positive_semantics, SemanticMatrix};
use crate::error::{Error, Result};
use crate::net::{cosine_similarity, ModelGrads, ModelParams};

/// Which loss terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermMask {
    pub rank: bool,
    pub align: bool,
    pub con: bool,
}

impl TermMask {
    pub const ALL: TermMask = TermMask {
        rank: true,
        align: true,
        con: true,
    };
    pub const RANK_ONLY: TermMask = TermMask {
        rank: true,
        align: false,
        con: false,
    };
    pub const RANK_ALIGN: TermMask = TermMask {
        rank: true,
        align: true,
        con: false,
    };
}

impl Default for TermMask {
    fn default() -> Self {
        Self::ALL
    }
}

impl FromStr for TermMask {
    type Err = Error;

    /// Parses a comma-separated subset of `rank,align,con`.
    fn from_str(s: &str) -> Result<Self> {
        let mut mask = TermMask {
            rank: false,
            align: false,
            con: false,
        };
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "rank" => mask.rank = true,
                "align" => mask.align = true,
                "con" => mask.con = true,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown loss term '{other}' (expected rank, align or con)"
                    )))
                }
            }
        }
        if !(mask.rank || mask.align || mask.con) {
            return Err(Error::InvalidConfig("term mask enables no loss term".into()));
        }
        Ok(mask)
    }
}

impl fmt::Display for TermMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.rank, "rank"), (self.align, "align"), (self.con, "con")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        f.write_str(&names.join(","))
    }
}

/// Normalisation of the per-image ranking penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RankNormalization {
    /// Divide by the number of seen classes.
    #[default]
    SeenClasses,
    /// Divide by the number of positive/negative pairs.
    Pairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub delta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub terms: TermMask,
    pub rank_normalization: RankNormalization,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            delta: 0.5,
            gamma1: 0.01,
            gamma2: 0.01,
            terms: TermMask::ALL,
            rank_normalization: RankNormalization::SeenClasses,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("delta", self.delta), ("gamma1", self.gamma1), ("gamma2", self.gamma2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rank: f64,
    pub align: f64,
    pub con: f64,
    pub total: f64,
}

/// A minibatch: feature rows and seen-class multi-hot labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Array2<f64>,
    pub labels: Vec<Vec<u8>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Cosines between every row of `a` and every row of `b`, with what the
/// backward pass needs.
struct CosineTable {
    values: Array2<f64>,
    a_unit: Array2<f64>,
    b_unit: Array2<f64>,
    a_norm: Array1<f64>,
    b_norm: Array1<f64>,
}

fn unit_rows(m: ArrayView2<'_, f64>, what: &str) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms: Array1<f64> = m.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::DegenerateVector(format!("{what} row {i}")));
    }
    let unit = &m / &norms.view().insert_axis(Axis(1));
    Ok((unit, norms))
}

impl CosineTable {
    fn new(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Self> {
        let values = score_matrix(a, b)?;
        let (a_unit, a_norm) = unit_rows(a, "latent")?;
        let (b_unit, b_norm) = unit_rows(b, "latent")?;
        Ok(Self {
            values,
            a_unit,
            b_unit,
            a_norm,
            b_norm,
        })
    }

    /// Given `g = dL/dvalues`, returns `(dL/da, dL/db)`.
    ///
    /// d cos(a,b)/da = (b_unit - cos * a_unit) / |a|
    fn backward(&self, g: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let gs = g * &self.values;
        let row_w = gs.sum_axis(Axis(1)).insert_axis(Axis(1));
        let col_w = gs.sum_axis(Axis(0)).insert_axis(Axis(1));
        let da = (g.dot(&self.b_unit) - &self.a_unit * &row_w)
            / &self.a_norm.view().insert_axis(Axis(1));
        let db = (g.t().dot(&self.a_unit) - &self.b_unit * &col_w)
            / &self.b_norm.view().insert_axis(Axis(1));
        (da, db)
    }
}

/// Cosine scores between every latent visual row and every latent semantic row.
///
/// This is the single scoring path used for training and for inference.
pub fn score_matrix(
    latent_visuals: ArrayView2<'_, f64>,
    latent_semantics: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if latent_visuals.ncols() != latent_semantics.ncols() {
        return Err(Error::mismatch(
            "latent widths",
            latent_semantics.ncols(),
            latent_visuals.ncols(),
        ));
    }
    let mut out = Array2::zeros((latent_visuals.nrows(), latent_semantics.nrows()));
    for (i, z) in latent_visuals.outer_iter().enumerate() {
        for (j, q) in latent_semantics.outer_iter().enumerate() {
            out[(i, j)] = cosine_similarity(z, q)?;
        }
    }
    Ok(out)
}

/// Relevance score of every class for one latent visual vector.
pub fn relevance_scores(
    latent_visual: ArrayView1<'_, f64>,
    latent_semantics: ArrayView2<'_, f64>,
) -> Result<Array1<f64>> {
    let scores = score_matrix(latent_visual.insert_axis(Axis(0)), latent_semantics)?;
    Ok(scores.row(0).to_owned())
}

/// Per-image hinge ranking penalty; accumulates `scale * dL/dscores` into `grad`
/// when given.
fn ranking_image(
    scores: ArrayView1<'_, f64>,
    labels: &[u8],
    delta: f64,
    norm: RankNormalization,
    mut grad: Option<(&mut [f64], f64)>,
) -> f64 {
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 0).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if positives.is_empty() || negatives.is_empty() {
        return 0.0;
    }
    let denom = match norm {
        RankNormalization::SeenClasses => labels.len() as f64,
        RankNormalization::Pairs => (positives.len() * negatives.len()) as f64,
    };
    let mut sum = 0.0;
    for &p in &positives {
        for &n in &negatives {
            let margin = delta + scores[n] - scores[p];
            if margin > 0.0 {
                sum += margin;
                if let Some((g, scale)) = grad.as_mut() {
                    g[n] += *scale / denom;
                    g[p] -= *scale / denom;
                }
            }
        }
    }
    sum / denom
}

/// Margin ranking penalty of one image.
///
/// Zero when the image has no positive or no negative label.
pub fn ranking_loss_image(
    scores: ArrayView1<'_, f64>,
    labels: &[u8],
    delta: f64,
    norm: RankNormalization,
) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::mismatch("scores vs labels", labels.len(), scores.len()));
    }
    Ok(ranking_image(scores, labels, delta, norm, None))
}

/// Mean of the per-image ranking penalties over the batch.
pub fn ranking_loss_batch(
    scores: ArrayView2<'_, f64>,
    labels: &[Vec<u8>],
    delta: f64,
    norm: RankNormalization,
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if scores.nrows() != labels.len() {
        return Err(Error::mismatch("score rows vs label rows", labels.len(), scores.nrows()));
    }
    let mut sum = 0.0;
    for (row, y) in scores.outer_iter().zip(labels) {
        sum += ranking_loss_image(row, y, delta, norm)?;
    }
    Ok(sum / labels.len() as f64)
}

/// `mean(1 - cos(visual_i, projected_i))` over paired rows; 0 for no rows.
pub fn alignment_loss(
    latent_visuals: ArrayView2<'_, f64>,
    projected: ArrayView2<'_, f64>,
) -> Result<f64> {
    if latent_visuals.dim() != projected.dim() {
        return Err(Error::mismatch(
            "alignment pairs",
            latent_visuals.nrows(),
            projected.nrows(),
        ));
    }
    if latent_visuals.nrows() == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (z, u) in latent_visuals.outer_iter().zip(projected.outer_iter()) {
        sum += 1.0 - cosine_similarity(z, u)?;
    }
    Ok(sum / latent_visuals.nrows() as f64)
}

/// Sum over ordered pairs `i != j` of `|cos(w_i, w_j) - cos(phi_i, phi_j)|`.
pub fn consistency_loss(original: ArrayView2<'_, f64>, projected: ArrayView2<'_, f64>) -> Result<f64> {
    if original.nrows() != projected.nrows() {
        return Err(Error::mismatch("consistency rows", original.nrows(), projected.nrows()));
    }
    if original.nrows() < 2 {
        return Err(Error::InvalidConfig(
            "consistency needs at least two classes".into(),
        ));
    }
    let before = score_matrix(original, original)?;
    let after = score_matrix(projected, projected)?;
    Ok(off_diagonal_l1(&before, &after))
}

fn off_diagonal_l1(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if i != j {
                sum += (a[(i, j)] - b[(i, j)]).abs();
            }
        }
    }
    sum
}

/// Value of every enabled term, without gradients.
pub fn loss_value(
    batch: &Batch,
    params: &ModelParams,
    seen_semantics: &SemanticMatrix,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    evaluate(batch, params, seen_semantics, cfg, false).map(|(l, _)| l)
}

/// Loss breakdown and gradients for every parameter of every network.
///
/// Gradients reach the encoder and visual map through the ranking and
/// alignment terms, and the semantic map through all three.
pub fn total_loss(
    batch: &Batch,
    params: &ModelParams,
    seen_semantics: &SemanticMatrix,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, ModelGrads)> {
    evaluate(batch, params, seen_semantics, cfg, true).map(|(l, g)| (l, g.expect("gradients requested")))
}

fn evaluate(
    batch: &Batch,
    params: &ModelParams,
    seen: &SemanticMatrix,
    cfg: &LossConfig,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<ModelGrads>)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if batch.features.nrows() != n {
        return Err(Error::mismatch("feature rows vs label rows", n, batch.features.nrows()));
    }
    let s = seen.len();
    if let Some(bad) = batch.labels.iter().find(|y| y.len() != s) {
        return Err(Error::mismatch("label width vs seen classes", s, bad.len()));
    }

    // forward
    let enc = match &params.encoder {
        Some(e) => Some(e.forward(batch.features.view())?),
        None => None,
    };
    let visual_in = enc.as_ref().map_or(batch.features.view(), |(f, _)| f.view());
    let (latent, vis_tape) = params.visual_map.forward(visual_in)?;
    let (proj_seen, sem_tape) = params.semantic_map.forward(seen.as_array().view())?;

    let mut d_latent = Array2::<f64>::zeros(latent.raw_dim());
    let mut d_proj_seen = Array2::<f64>::zeros(proj_seen.raw_dim());
    let mut breakdown = LossBreakdown::default();

    if cfg.terms.rank {
        let table = CosineTable::new(latent.view(), proj_seen.view())?;
        let mut g = Array2::<f64>::zeros(table.values.raw_dim());
        let mut sum = 0.0;
        for (i, y) in batch.labels.iter().enumerate() {
            let grad = want_grads.then(|| {
                (
                    g.row_mut(i).into_slice().expect("standard layout"),
                    1.0 / n as f64,
                )
            });
            sum += ranking_image(table.values.row(i), y, cfg.delta, cfg.rank_normalization, grad);
        }
        breakdown.rank = sum / n as f64;
        if want_grads {
            let (dz, dq) = table.backward(&g);
            d_latent += &dz;
            d_proj_seen += &dq;
        }
    }

    let mut align_branch = None;
    if cfg.terms.align {
        let active: Vec<usize> = (0..n).filter(|&i| batch.labels[i].iter().any(|&y| y != 0)).collect();
        if !active.is_empty() {
            let mut targets = Array2::zeros((active.len(), seen.dim()));
            for (r, &i) in active.iter().enumerate() {
                targets
                    .row_mut(r)
                    .assign(&average_positive_semantics(&batch.labels[i], seen)?);
            }
            let (proj_targets, tgt_tape) = params.semantic_map.forward(targets.view())?;
            let z = latent.select(Axis(0), &active);
            breakdown.align = alignment_loss(z.view(), proj_targets.view())?;
            if want_grads {
                let (z_unit, z_norm) = unit_rows(z.view(), "latent visual")?;
                let (u_unit, u_norm) = unit_rows(proj_targets.view(), "projected semantics")?;
                let scale = -cfg.gamma1 / active.len() as f64;
                let mut d_targets = Array2::zeros(proj_targets.raw_dim());
                for (r, &i) in active.iter().enumerate() {
                    let c = z_unit.row(r).dot(&u_unit.row(r));
                    let dz = (&u_unit.row(r) - &(&z_unit.row(r) * c)) * (scale / z_norm[r]);
                    let du = (&z_unit.row(r) - &(&u_unit.row(r) * c)) * (scale / u_norm[r]);
                    let mut row = d_latent.row_mut(i);
                    row += &dz;
                    d_targets.row_mut(r).assign(&du);
                }
                align_branch = Some((tgt_tape, d_targets));
            }
        }
    }

    if cfg.terms.con {
        let before = score_matrix(seen.as_array().view(), seen.as_array().view())?;
        let table = CosineTable::new(proj_seen.view(), proj_seen.view())?;
        breakdown.con = off_diagonal_l1(&before, &table.values);
        if want_grads {
            let mut g = Array2::zeros((s, s));
            for i in 0..s {
                for j in 0..s {
                    let diff = table.values[(i, j)] - before[(i, j)];
                    if i != j && diff != 0.0 {
                        g[(i, j)] = cfg.gamma2 * diff.signum();
                    }
                }
            }
            let (da, db) = table.backward(&g);
            d_proj_seen += &da;
            d_proj_seen += &db;
        }
    }

    breakdown.total = breakdown.rank + cfg.gamma1 * breakdown.align + cfg.gamma2 * breakdown.con;
    if !want_grads {
        return Ok((breakdown, None));
    }

    // backward
    let (vis_grads, d_visual_in) = params.visual_map.backward(&vis_tape, d_latent.view())?;
    let enc_grads = match (&params.encoder, &enc) {
        (Some(e), Some((_, tape))) => Some(e.backward(tape, d_visual_in.view())?.0),
        _ => None,
    };
    let (mut sem_grads, _) = params.semantic_map.backward(&sem_tape, d_proj_seen.view())?;
    if let Some((tape, d_targets)) = align_branch {
        let (g, _) = params.semantic_map.backward(&tape, d_targets.view())?;
        sem_grads.add_assign(&g);
    }
    Ok((
        breakdown,
        Some(ModelGrads {
            encoder: enc_grads,
            visual_map: vis_grads,
            semantic_map: sem_grads,
        }),
    ))
}
