//! Minibatch training, per-epoch validation, plateau scheduling, model
//! selection by validation harmonic AUROC, and the gamma/learning-rate grid.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, LabelSpace, ManifestData};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::net::{EncoderMode, ModelConfig, ModelParams};
use crate::objective::{loss_value, total_loss, Batch, LossBreakdown, LossConfig};
use crate::optim::{AdamConfig, AdamState, PlateauScheduler, SchedulerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub loss: LossConfig,
    pub seed: u64,
    pub encoder_mode: EncoderMode,
    pub shuffle: bool,
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub scheduler: SchedulerConfig,
    /// Values of k for the top-k metrics.
    pub eval_ks: Vec<usize>,
    /// Drop training samples that have no positive label.
    pub drop_zero_positive: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 1e-4,
            loss: LossConfig::default(),
            seed: 0,
            encoder_mode: EncoderMode::EndToEnd,
            shuffle: true,
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
            scheduler: SchedulerConfig::default(),
            eval_ks: vec![2, 3],
            drop_zero_positive: false,
        }
    }
}

impl TrainConfig {
    /// Networks small enough to train on the default synthetic benchmark in
    /// seconds: a one-layer encoder of width 32, mapping widths 64 and 32,
    /// and a 16-dimensional latent space. Everything else keeps its default.
    pub fn desk_scale() -> Self {
        Self {
            model: ModelConfig {
                encoder_widths: Some(vec![32]),
                map_hidden: vec![64, 32],
                latent_dim: 16,
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(Error::InvalidConfig("eval_ks must be non-empty and positive".into()));
        }
        self.loss.validate()?;
        self.scheduler.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().fold(String::new(), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    pub val_metrics: MetricsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    #[serde(skip)]
    pub best_params: ModelParams,
    #[serde(skip)]
    pub final_params: ModelParams,
    pub best_checkpoint: Option<PathBuf>,
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    /// One CSV row per epoch.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(
            "epoch,lr,train_rank,train_align,train_con,train_total,val_rank,val_align,val_con,val_total,val_auroc_seen,val_auroc_unseen,val_auroc_harmonic\n",
        );
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.epoch,
                e.lr,
                e.train.rank,
                e.train.align,
                e.train.con,
                e.train.total,
                e.val.rank,
                e.val.align,
                e.val.con,
                e.val.total,
                opt(e.val_metrics.seen_mean),
                opt(e.val_metrics.unseen_mean),
                opt(e.val_metrics.harmonic),
            )
            .unwrap();
        }
        out
    }
}

fn selection_key(m: &MetricsReport) -> f64 {
    m.harmonic.unwrap_or(f64::NEG_INFINITY)
}

/// Initialises fresh networks from `cfg.model` and trains them.
pub fn train_from_scratch(
    cfg: &TrainConfig,
    data: &ManifestData,
    out_dir: Option<&Path>,
) -> Result<RunRecord> {
    let params = ModelParams::init(&cfg.model, data.train.feature_dim, data.semantics.dim(), cfg.seed)?;
    train(cfg, data, params, out_dir)
}

/// Trains `params` on the training split, validating every epoch.
///
/// When `out_dir` is given it receives `config.json`, `metrics.csv`,
/// `checkpoints/best.ckpt` and `checkpoints/last.ckpt`.
pub fn train(
    cfg: &TrainConfig,
    data: &ManifestData,
    mut params: ModelParams,
    out_dir: Option<&Path>,
) -> Result<RunRecord> {
    let started = Instant::now();
    cfg.validate()?;
    if data.train.label_space != LabelSpace::SeenOnly {
        return Err(Error::InvalidConfig(
            "training split must use the seen-only label space".into(),
        ));
    }
    params.validate()?;
    if params.feature_dim() != data.train.feature_dim {
        return Err(Error::mismatch("model feature width", data.train.feature_dim, params.feature_dim()));
    }
    if params.semantic_dim() != data.semantics.dim() {
        return Err(Error::mismatch("model semantic width", data.semantics.dim(), params.semantic_dim()));
    }
    if data.val.is_empty() {
        return Err(Error::InvalidConfig("validation split is empty".into()));
    }
    let train_set: Dataset = if cfg.drop_zero_positive {
        data.train.without_zero_positive()
    } else {
        data.train.clone()
    };
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("training split is empty".into()));
    }
    let seen = data.semantics.select(data.vocab.seen_ids());
    let val_batch = Batch {
        features: data.val.feature_matrix(&(0..data.val.len()).collect::<Vec<_>>()),
        labels: data.val.seen_labels(),
    };

    let frozen = cfg.encoder_mode == EncoderMode::Frozen;
    let trainable = |name: &str| !(frozen && name.starts_with("encoder."));
    let lens: Vec<usize> = params
        .named_tensors()
        .iter()
        .filter(|(n, _)| trainable(n))
        .map(|(_, t)| t.len())
        .collect();
    let mut adam = AdamState::new(&lens, cfg.lr, cfg.adam);
    let mut scheduler = PlateauScheduler::new(cfg.lr, cfg.scheduler);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F_5A_u64);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams, AdamState)> = None;
    for epoch in 1..=cfg.epochs {
        let lr = adam.lr;
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut sum = LossBreakdown::default();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = Batch {
                features: train_set.feature_matrix(chunk),
                labels: chunk.iter().map(|&i| train_set.samples[i].labels.clone()).collect(),
            };
            let (loss, grads) = total_loss(&batch, &params, &seen, &cfg.loss)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let w = chunk.len() as f64;
            sum.rank += loss.rank * w;
            sum.align += loss.align * w;
            sum.con += loss.con * w;
            sum.total += loss.total * w;

            let grads: Vec<(String, &[f64])> =
                grads.named_tensors().into_iter().filter(|(n, _)| trainable(n)).collect();
            let mut tensors: Vec<&mut [f64]> = params
                .named_tensors_mut()
                .into_iter()
                .filter(|(n, _)| trainable(n))
                .map(|(_, t)| t)
                .collect();
            adam.step(&mut tensors, &grads)?;
        }
        let n = train_set.len() as f64;
        let train_loss = LossBreakdown {
            rank: sum.rank / n,
            align: sum.align / n,
            con: sum.con / n,
            total: sum.total / n,
        };
        let val_loss = loss_value(&val_batch, &params, &seen, &cfg.loss)?;
        let val_metrics = evaluate(&params, &data.val, &data.semantics, &cfg.eval_ks)?;
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} harmonic {:?}",
            train_loss.total,
            val_loss.total,
            val_metrics.harmonic
        );

        let key = selection_key(&val_metrics);
        if best.as_ref().is_none_or(|(_, k, _, _)| key > *k) {
            best = Some((epoch, key, params.clone(), adam.clone()));
        }
        if val_loss.total.is_finite() && scheduler.observe(val_loss.total) {
            log::info!("epoch {epoch}: learning rate reduced to {}", scheduler.lr());
        }
        adam.lr = scheduler.lr();
        epochs.push(EpochRecord {
            epoch,
            lr,
            train: train_loss,
            val: val_loss,
            val_metrics,
        });
    }

    let (best_epoch, _, best_params, best_adam) = best.expect("at least one epoch");
    let mut record = RunRecord {
        config: cfg.clone(),
        epochs,
        best_epoch,
        best_params,
        final_params: params,
        best_checkpoint: None,
        wall_time_secs: 0.0,
    };
    if let Some(dir) = out_dir {
        let hash = cfg.hash();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let config_path = dir.join("config.json");
        let mut json = serde_json::to_string_pretty(cfg).expect("config serializes");
        json.push('\n');
        fs::write(&config_path, json).map_err(|e| Error::io(&config_path, e))?;
        let csv_path = dir.join("metrics.csv");
        fs::write(&csv_path, record.metrics_csv()).map_err(|e| Error::io(&csv_path, e))?;
        let best_path = dir.join("checkpoints").join("best.ckpt");
        Checkpoint::new(record.best_params.clone(), Some(best_adam), cfg.seed, best_epoch, hash.clone())
            .save(&best_path)?;
        Checkpoint::new(record.final_params.clone(), Some(adam), cfg.seed, cfg.epochs, hash)
            .save(dir.join("checkpoints").join("last.ckpt"))?;
        record.best_checkpoint = Some(best_path);
    }
    record.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub gammas: Vec<f64>,
    pub lrs: Vec<f64>,
    /// Train only this many randomly drawn combinations instead of all of them.
    pub random_trials: Option<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            gammas: vec![0.1, 0.01, 0.05],
            lrs: vec![1e-4, 5e-5, 1e-5],
            random_trials: None,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() || self.lrs.is_empty() {
            return Err(Error::InvalidConfig("grid candidate sets must be non-empty".into()));
        }
        if let Some(v) = self.gammas.iter().chain(&self.lrs).find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidConfig(format!("grid values must be positive, got {v}")));
        }
        if self.random_trials == Some(0) {
            return Err(Error::InvalidConfig("random_trials must be >= 1".into()));
        }
        Ok(())
    }

    /// `(gamma, lr)` pairs to train, in run order.
    pub fn combinations(&self, seed: u64) -> Vec<(f64, f64)> {
        let mut all: Vec<(f64, f64)> = self
            .gammas
            .iter()
            .flat_map(|&g| self.lrs.iter().map(move |&lr| (g, lr)))
            .collect();
        if let Some(n) = self.random_trials {
            all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            all.truncate(n);
        }
        all
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridTrial {
    pub gamma: f64,
    pub lr: f64,
    pub harmonic: Option<f64>,
    pub unseen: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridOutcome {
    pub best: RunRecord,
    pub trials: Vec<GridTrial>,
}

/// Trains one model per `(gamma, lr)` with `gamma1 = gamma2 = gamma` and
/// returns the run with the highest validation harmonic AUROC (ties: higher
/// unseen AUROC, then lower learning rate). Up to `jobs` runs execute at once.
pub fn grid_search(
    grid: &GridSpec,
    base: &TrainConfig,
    data: &ManifestData,
    out_dir: Option<&Path>,
    jobs: usize,
) -> Result<GridOutcome> {
    grid.validate()?;
    let combos = grid.combinations(base.seed);
    let configs: Vec<TrainConfig> = combos
        .iter()
        .map(|&(gamma, lr)| {
            let mut cfg = base.clone();
            cfg.loss.gamma1 = gamma;
            cfg.loss.gamma2 = gamma;
            cfg.lr = lr;
            cfg
        })
        .collect();
    for cfg in &configs {
        cfg.validate()?;
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunRecord>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, configs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= configs.len() {
                    break;
                }
                let (gamma, lr) = combos[i];
                let dir = out_dir.map(|d| d.join(format!("gamma{gamma}_lr{lr}")));
                let r = train_from_scratch(&configs[i], data, dir.as_deref());
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });

    let mut trials = Vec::new();
    let mut best: Option<RunRecord> = None;
    let mut last_err = String::new();
    for ((gamma, lr), r) in combos.iter().copied().zip(results.into_inner().unwrap()) {
        match r.expect("every combination ran") {
            Ok(rec) => {
                let m = &rec.best().val_metrics;
                trials.push(GridTrial {
                    gamma,
                    lr,
                    harmonic: m.harmonic,
                    unseen: m.unseen_mean,
                    error: None,
                });
                if best.as_ref().is_none_or(|b| better(&rec, b)) {
                    best = Some(rec);
                }
            }
            Err(e) => {
                log::warn!("grid run gamma={gamma} lr={lr} failed: {e}");
                last_err = e.to_string();
                trials.push(GridTrial {
                    gamma,
                    lr,
                    harmonic: None,
                    unseen: None,
                    error: Some(last_err.clone()),
                });
            }
        }
    }
    let best = best.ok_or(Error::AllRunsFailed(last_err))?;
    Ok(GridOutcome { best, trials })
}

fn better(a: &RunRecord, b: &RunRecord) -> bool {
    let (ma, mb) = (&a.best().val_metrics, &b.best().val_metrics);
    let key = |m: &MetricsReport| {
        (
            selection_key(m),
            m.unseen_mean.unwrap_or(f64::NEG_INFINITY),
        )
    };
    let (ha, ua) = key(ma);
    let (hb, ub) = key(mb);
    ha.total_cmp(&hb)
        .then(ua.total_cmp(&ub))
        .then(b.config.lr.total_cmp(&a.config.lr))
        .is_gt()
}
