//! Central finite-difference verification of the analytic gradients of the
//! full objective on small random problems.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::data::SemanticMatrix;
use crate::error::Result;
use crate::net::{ModelConfig, ModelParams};
use crate::objective::{loss_value, total_loss, Batch, LossConfig, RankNormalization, TermMask};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Denominator floor of [`relative_error`].
pub const ABS_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, ABS_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// A random small problem: model, batch, seen semantics and loss settings.
#[derive(Debug, Clone)]
pub struct Problem {
    pub params: ModelParams,
    pub batch: Batch,
    pub semantics: SemanticMatrix,
    pub loss: LossConfig,
}

impl Problem {
    /// Sizes are bounded by d <= 16, v <= 32, latent <= 8, batch <= 4.
    pub fn random(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..=16);
        let v = rng.random_range(2..=32);
        let latent = rng.random_range(2..=8);
        let n = rng.random_range(1..=4);
        let s = rng.random_range(2..=6);
        let hidden: Vec<usize> = (0..rng.random_range(0..=2)).map(|_| rng.random_range(2..=8)).collect();
        let encoder = rng
            .random_bool(0.5)
            .then(|| (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=8)).collect());
        let cfg = ModelConfig {
            encoder_widths: encoder,
            map_hidden: hidden,
            latent_dim: latent,
        };
        let mut params = ModelParams::init(&cfg, v, d, rng.random())?;
        for (_, t) in params.named_tensors_mut() {
            for x in t.iter_mut() {
                *x += 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let mut normal = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || rng.sample::<f64, _>(StandardNormal));
        let semantics = SemanticMatrix::new(normal(s, d))?;
        let features = normal(n, v);
        let labels = (0..n)
            .map(|_| (0..s).map(|_| u8::from(rng.random_bool(0.4))).collect())
            .collect();
        let loss = LossConfig {
            delta: 0.5,
            gamma1: rng.random_range(0.1..1.0),
            gamma2: rng.random_range(0.1..1.0),
            terms: TermMask::ALL,
            rank_normalization: if rng.random_bool(0.5) {
                RankNormalization::SeenClasses
            } else {
                RankNormalization::Pairs
            },
        };
        Ok(Self {
            params,
            batch: Batch { features, labels },
            semantics,
            loss,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Worst {
    pub trial_seed: u64,
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckSummary {
    pub trials: usize,
    pub parameters_checked: usize,
    pub max_relative_error: f64,
    pub worst: Option<Worst>,
}

/// Largest relative error over every parameter of one problem.
pub fn check_problem(p: &Problem, trial_seed: u64) -> Result<(usize, f64, Option<Worst>)> {
    let (_, grads) = total_loss(&p.batch, &p.params, &p.semantics, &p.loss)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.to_vec()))
        .collect();
    let mut probe = p.params.clone();
    let mut checked = 0;
    let mut max_err = 0.0;
    let mut worst = None;
    for (k, (name, g)) in analytic.iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            let orig = probe.named_tensors()[k].1[i];
            let mut eval_at = |x: f64| -> Result<f64> {
                probe.named_tensors_mut()[k].1[i] = x;
                Ok(loss_value(&p.batch, &probe, &p.semantics, &p.loss)?.total)
            };
            let plus = eval_at(orig + STEP)?;
            let minus = eval_at(orig - STEP)?;
            eval_at(orig)?;
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(a, numeric);
            checked += 1;
            if err > max_err || worst.is_none() {
                max_err = f64::max(err, max_err);
                worst = Some(Worst {
                    trial_seed,
                    tensor: name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok((checked, max_err, worst))
}

/// Checks `trials` random problems derived from `seed`.
pub fn run(seed: u64, trials: usize) -> Result<GradCheckSummary> {
    let mut summary = GradCheckSummary {
        trials,
        parameters_checked: 0,
        max_relative_error: 0.0,
        worst: None,
    };
    for t in 0..trials as u64 {
        let trial_seed = seed.wrapping_mul(1_000_003).wrapping_add(t);
        let problem = Problem::random(trial_seed)?;
        let (n, err, worst) = check_problem(&problem, trial_seed)?;
        summary.parameters_checked += n;
        if err >= summary.max_relative_error {
            summary.max_relative_error = err;
            summary.worst = worst;
        }
    }
    Ok(summary)
}
