//! Segment-based training loop.
//!
//! Videos are cut into consecutive fixed-length segments and only segments
//! containing a positive frame are trained. Each step draws distinct users,
//! one random retained segment per user, averages the per-segment loss and
//! applies one Adam update. Per-segment forward/backward runs in parallel;
//! gradients are reduced serially in ascending user order, so results do not
//! depend on the thread count.

mod adam;
mod checkpoint;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_model, Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::featureio::{AnnotatedVideo, UserRecord};
use crate::io_util::atomic_write;
use crate::model::{forward, ModelParams};
use crate::objective::{contrastive_loss_graph, mine_hard_negatives, positives};
use crate::preference::AttentionStrategy;
use crate::tensor::{Graph, Real, Tensor};

/// Stream of the training RNG; stream 0 of the same seed initializes parameters.
const SAMPLER_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub segment_len: usize,
    pub batch_users: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub k_factor: usize,
    pub lambda: f64,
    pub strategy: AttentionStrategy,
    /// Keep only this many most recent history segments per user.
    pub max_history: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            segment_len: 256,
            batch_users: 32,
            epochs: 150,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            k_factor: 5,
            lambda: 9.0,
            strategy: AttentionStrategy::Full,
            max_history: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.segment_len < 2 {
            return fail("segment_len must be at least 2");
        }
        if self.batch_users == 0 {
            return fail("batch_users must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("moment decay rates must lie in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return fail("epsilon must be positive");
        }
        if self.k_factor == 0 {
            return fail("k_factor must be at least 1");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_map: Option<f64>,
}

/// A training window of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: String,
    pub start: usize,
    pub len: usize,
    pub labels: Vec<bool>,
}

/// Consecutive windows `[0, L)`, `[L, 2L)`, … including a short remainder;
/// only windows with at least one positive are returned.
pub fn slice_segments(video: &AnnotatedVideo, segment_len: usize) -> Vec<Segment> {
    assert!(segment_len >= 2, "segment_len must be at least 2");
    let t = video.labels.len();
    (0..t)
        .step_by(segment_len)
        .filter_map(|start| {
            let len = segment_len.min(t - start);
            let labels = video.labels[start..start + len].to_vec();
            labels.iter().any(|&y| y).then(|| Segment {
                id: format!("{}@{start}", video.id),
                start,
                len,
                labels,
            })
        })
        .collect()
}

struct TrainSegment<F> {
    id: String,
    x: Tensor<F>,
    labels: Vec<bool>,
}

struct TrainUser<F> {
    history: Vec<Tensor<F>>,
    segments: Vec<TrainSegment<F>>,
}

fn prepare<F: Real>(users: &[UserRecord], cfg: &TrainConfig) -> Result<Vec<TrainUser<F>>> {
    let mut out = Vec::new();
    for u in users {
        let mut u = u.clone();
        u.cap_history(cfg.max_history);
        let segments: Vec<TrainSegment<F>> = u
            .videos
            .iter()
            .flat_map(|v| {
                slice_segments(v, cfg.segment_len)
                    .into_iter()
                    .map(move |s| TrainSegment {
                        x: v.features.window(s.start, s.len).to_tensor(),
                        id: s.id,
                        labels: s.labels,
                    })
            })
            .collect();
        if segments.is_empty() {
            log::warn!("user {} has no segment with a positive label; skipped", u.user_id);
            continue;
        }
        if u.history.is_empty() && cfg.strategy.requires_history() {
            return Err(Error::NoHistory(cfg.strategy.name()));
        }
        out.push(TrainUser {
            history: u.history.iter().map(|h| h.0.to_tensor()).collect(),
            segments,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    Ok(out)
}

/// Loss and parameter gradients of one segment.
fn segment_gradient<F: Real>(
    params: &ModelParams<F>,
    cfg: &TrainConfig,
    history: &[Tensor<F>],
    seg: &TrainSegment<F>,
) -> Result<(f64, Vec<Tensor<F>>)> {
    assert!(seg.labels.iter().any(|&y| y), "segment {} has no positive", seg.id);
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let sv = forward(&mut g, &vars, cfg.strategy, cfg.lambda, &seg.x, history)?;
    let omega = positives(&seg.labels);
    let mined = mine_hard_negatives(g.value(sv.b).data(), &seg.labels, cfg.k_factor)?;
    let loss = contrastive_loss_graph(&mut g, sv.l, sv.b, &omega, &mined)?;
    let value = g.value(loss).data()[0].f64();
    if !value.is_finite() {
        log::error!("non-finite loss {value} on segment {}", seg.id);
        return Err(Error::NumericAbort(format!("non-finite loss on segment {}", seg.id)));
    }
    let mut grads = g.backward(loss)?;
    Ok((value, vars.all().into_iter().map(|v| grads.take(v)).collect()))
}

/// In-memory training state.
pub struct Trainer<F: Real> {
    state: Checkpoint<F>,
    rng: ChaCha8Rng,
    users: Vec<TrainUser<F>>,
    val: Vec<UserRecord>,
    best: Option<ModelParams<F>>,
    pool: Option<rayon::ThreadPool>,
}

impl<F: Real> Trainer<F> {
    /// Fresh parameters for `d`-channel features.
    pub fn new(cfg: TrainConfig, d: usize, train: &[UserRecord], val: &[UserRecord]) -> Result<Self> {
        cfg.validate()?;
        let params = ModelParams::init(d, cfg.lambda, cfg.seed);
        let adam = AdamState::new(params.named_tensors().iter().map(|(_, t)| t.shape()));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(SAMPLER_STREAM);
        let state = Checkpoint {
            rng: RngState::capture(&rng),
            config: cfg,
            epoch: 0,
            step: 0,
            params,
            adam,
            best_val: None,
            best_epoch: None,
            metrics: Vec::new(),
            step_losses: Vec::new(),
        };
        Self::from_state(state, None, train, val)
    }

    /// Continues from a saved state; `best` is the best-validation model so far.
    pub fn from_state(
        state: Checkpoint<F>,
        best: Option<ModelParams<F>>,
        train: &[UserRecord],
        val: &[UserRecord],
    ) -> Result<Self> {
        state.config.validate()?;
        let d = state.params.d();
        for u in train.iter().chain(val) {
            for v in &u.videos {
                crate::model::check_dims(d, &v.features, &u.history)?;
            }
        }
        let users = prepare(train, &state.config)?;
        let mut val = val.to_vec();
        val.iter_mut().for_each(|u| u.cap_history(state.config.max_history));
        Ok(Self {
            rng: state.rng.restore()?,
            best: best.or_else(|| state.best_epoch.map(|_| state.params.clone())),
            state,
            users,
            val,
            pool: None,
        })
    }

    /// Caps worker threads for this trainer (default: the global rayon pool).
    pub fn with_threads(mut self, threads: Option<usize>) -> Result<Self> {
        self.pool = match threads {
            Some(n) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            ),
            None => None,
        };
        Ok(self)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    pub fn params(&self) -> &ModelParams<F> {
        &self.state.params
    }

    /// Best-validation parameters (latest when no validation split is given).
    pub fn best_params(&self) -> &ModelParams<F> {
        self.best.as_ref().unwrap_or(&self.state.params)
    }

    pub fn metrics(&self) -> &[EpochMetrics] {
        &self.state.metrics
    }

    pub fn step_losses(&self) -> &[f64] {
        &self.state.step_losses
    }

    pub fn epoch(&self) -> usize {
        self.state.epoch
    }

    pub fn effective_users(&self) -> usize {
        self.users.len()
    }

    /// Snapshot with the current RNG position.
    pub fn checkpoint(&self) -> Checkpoint<F> {
        let mut c = self.state.clone();
        c.rng = RngState::capture(&self.rng);
        c
    }

    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    /// One optimizer step over `(user, segment)` pairs sorted by user.
    fn step(&mut self, batch: &[(usize, usize)]) -> Result<f64> {
        let params = &self.state.params;
        let cfg = &self.state.config;
        let users = &self.users;
        let results: Vec<Result<(f64, Vec<Tensor<F>>)>> = self.install(|| {
            batch
                .par_iter()
                .map(|&(u, s)| segment_gradient(params, cfg, &users[u].history, &users[u].segments[s]))
                .collect()
        });
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut total: Option<Vec<Tensor<F>>> = None;
        for r in results {
            let (l, grads) = r?;
            loss += l;
            match &mut total {
                None => total = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        for (x, &y) in a.data_mut().iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    }
                }
            }
        }
        let mut grads = total.expect("non-empty batch");
        let inv = F::of(1.0 / n);
        grads
            .iter_mut()
            .for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= inv));
        let adam_cfg = cfg.adam();
        adam_step(
            &mut self.state.params.tensors_mut(),
            &grads,
            &mut self.state.adam,
            &adam_cfg,
        )?;
        self.state.step += 1;
        let loss = loss / n;
        self.state.step_losses.push(loss);
        Ok(loss)
    }

    /// Draws the batches of one epoch: a shuffled pass over users, the last
    /// batch topped up with distinct users drawn from the rest.
    fn epoch_batches(&mut self) -> Vec<Vec<(usize, usize)>> {
        let n = self.users.len();
        let b = self.state.config.batch_users.min(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(b)
            .map(|chunk| chunk.to_vec())
            .collect::<Vec<_>>()
            .into_iter()
            .map(|mut chosen| {
                if chosen.len() < b {
                    let mut rest: Vec<usize> = (0..n).filter(|u| !chosen.contains(u)).collect();
                    rest.shuffle(&mut self.rng);
                    chosen.extend_from_slice(&rest[..b - chosen.len()]);
                }
                chosen.sort_unstable();
                chosen
                    .into_iter()
                    .map(|u| (u, self.rng.random_range(0..self.users[u].segments.len())))
                    .collect()
            })
            .collect()
    }

    pub fn validate_map(&self, params: &ModelParams<F>) -> Result<Option<f64>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let strategy = self.state.config.strategy;
        let val = &self.val;
        Ok(self.install(|| evaluate(params, val, strategy))?.map)
    }

    /// Trains one epoch and validates; returns the epoch's metrics.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let started = Instant::now();
        let batches = self.epoch_batches();
        let mut sum = 0.0;
        for b in &batches {
            sum += self.step(b)?;
        }
        if !self.state.params.is_finite() {
            return Err(Error::NumericAbort("parameters became non-finite".into()));
        }
        self.state.epoch += 1;
        let val_map = self.validate_map(&self.state.params)?;
        let improved = match (val_map, self.state.best_val) {
            (Some(v), Some(best)) => v > best,
            (Some(_), None) => true,
            (None, _) => true,
        };
        if improved {
            self.state.best_val = val_map;
            self.state.best_epoch = Some(self.state.epoch);
            self.best = Some(self.state.params.clone());
        }
        let m = EpochMetrics {
            epoch: self.state.epoch,
            train_loss: sum / batches.len() as f64,
            val_map,
        };
        log::info!(
            "epoch {} loss {:.6} val_map {} ({} steps, {:.1}s)",
            m.epoch,
            m.train_loss,
            m.val_map.map_or("-".to_string(), |v| format!("{v:.4}")),
            batches.len(),
            started.elapsed().as_secs_f64()
        );
        self.state.metrics.push(m.clone());
        self.state.rng = RngState::capture(&self.rng);
        Ok(m)
    }

    /// Runs remaining epochs up to the configured count, persisting artifacts
    /// into `out_dir` after every epoch when given.
    pub fn train(&mut self, out_dir: Option<&Path>) -> Result<()> {
        if let Some(dir) = out_dir {
            let mut cfg = serde_json::to_vec_pretty(&self.state.config)?;
            cfg.push(b'\n');
            atomic_write(&dir.join("config.json"), &cfg)?;
        }
        while self.state.epoch < self.state.config.epochs {
            let before = self.state.best_epoch;
            self.run_epoch()?;
            if let Some(dir) = out_dir {
                self.persist(dir, self.state.best_epoch != before)?;
            }
        }
        Ok(())
    }

    fn persist(&self, dir: &Path, best_changed: bool) -> Result<()> {
        let ckpt = self.checkpoint();
        ckpt.save(&dir.join("last.prck"))?;
        if best_changed {
            let mut best = ckpt.clone();
            best.params = self.best_params().clone();
            best.save(&dir.join("best.prck"))?;
        }
        atomic_write(
            &dir.join("metrics.jsonl"),
            metrics_jsonl(&self.state.metrics)?.as_bytes(),
        )?;
        let mut steps = String::new();
        for (i, l) in self.state.step_losses.iter().enumerate() {
            steps.push_str(&serde_json::to_string(
                &serde_json::json!({ "step": i + 1, "loss": l }),
            )?);
            steps.push('\n');
        }
        atomic_write(&dir.join("steps.jsonl"), steps.as_bytes())
    }
}

pub fn metrics_jsonl(metrics: &[EpochMetrics]) -> Result<String> {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m)?);
        out.push('\n');
    }
    Ok(out)
}

/// Resumes from `dir/last.prck` (and `dir/best.prck` when present).
pub fn resume_trainer<F: Real>(
    dir: &Path,
    epochs: Option<usize>,
    train: &[UserRecord],
    val: &[UserRecord],
) -> Result<Trainer<F>> {
    let mut state = Checkpoint::<F>::load(&dir.join("last.prck"))?;
    if let Some(e) = epochs {
        state.config.epochs = e;
    }
    let best_path = dir.join("best.prck");
    let best = if best_path.is_file() {
        Some(Checkpoint::<F>::load(&best_path)?.params)
    } else {
        None
    };
    Trainer::from_state(state, best, train, val)
}
