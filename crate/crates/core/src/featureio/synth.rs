//! Seeded synthetic corpora of multi-interest users.
//!
//! Each corpus draws `num_topics` unit-vector topic centres. A user owns a few
//! of them; history clips are noisy samples of the user's topics. Videos are
//! sequences of shots: a small budget of positive shots drawn from the user's
//! topics, and distractor shots drawn from other topics, from random
//! directions, or (training split only) from the user's own topics but left
//! unlabeled, which mimics incomplete annotation.
//!
//! Randomness comes from ChaCha8 with one stream per (split, user, item), so
//! growing a corpus never changes the data of users already generated.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{CorpusManifest, ManifestUser, ManifestVideo};
use super::{write_container, write_labels, FeatureMatrix};
use crate::error::{Error, Result};
use crate::io_util::atomic_write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub d: usize,
    pub num_topics: usize,
    /// Inclusive range of topics per user.
    pub topics_per_user: [usize; 2],
    pub users: SplitSizes,
    pub videos_per_user: usize,
    pub frames_per_video: usize,
    pub history_per_user: usize,
    pub frames_per_segment: usize,
    pub noise_sigma: f64,
    pub positive_fraction: f64,
    /// Inclusive range of shot lengths in frames.
    pub shot_len: [usize; 2],
    /// Probability that a training-split distractor shot repeats one of the
    /// user's topics without being labeled.
    pub near_duplicate_rate: f64,
    /// Probability that a distractor shot is a random direction rather than a topic.
    pub noise_shot_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d: 32,
            num_topics: 12,
            topics_per_user: [2, 5],
            users: SplitSizes {
                train: 60,
                val: 8,
                test: 16,
            },
            videos_per_user: 4,
            frames_per_video: 512,
            history_per_user: 6,
            frames_per_segment: 8,
            noise_sigma: 0.05,
            positive_fraction: 0.02,
            shot_len: [4, 12],
            near_duplicate_rate: 0.1,
            noise_shot_rate: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn code(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

/// What the generator emitted, for callers that want counts without re-reading.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynthSummary {
    pub frames: usize,
    pub positives: usize,
    pub near_duplicates: usize,
}

struct GeneratedVideo {
    features: FeatureMatrix,
    labels: Vec<bool>,
    oracle: Vec<bool>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d < 2 {
            return fail(format!("d must be at least 2, got {}", self.d));
        }
        let [lo, hi] = self.topics_per_user;
        if lo == 0 || lo > hi {
            return fail(format!("topics_per_user range {lo}..={hi} is empty"));
        }
        if hi > self.num_topics {
            return fail(format!(
                "topics_per_user max {hi} exceeds num_topics {}",
                self.num_topics
            ));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction <= 0.5) {
            return fail(format!("positive_fraction {} not in (0, 0.5]", self.positive_fraction));
        }
        let [s_lo, s_hi] = self.shot_len;
        if s_lo == 0 || s_lo > s_hi {
            return fail(format!("shot_len range {s_lo}..={s_hi} is empty"));
        }
        if self.frames_per_video == 0 || self.frames_per_segment == 0 {
            return fail("frame counts must be positive".into());
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return fail(format!(
                "noise_sigma {} must be finite and nonnegative",
                self.noise_sigma
            ));
        }
        for (name, p) in [
            ("near_duplicate_rate", self.near_duplicate_rate),
            ("noise_shot_rate", self.noise_shot_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} {p} not in [0, 1]"));
            }
        }
        if self.near_duplicate_rate + self.noise_shot_rate > 1.0 {
            return fail("near_duplicate_rate + noise_shot_rate exceeds 1".into());
        }
        Ok(())
    }

    fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }

    fn item_stream(&self, split: Split, user: usize, item: usize) -> ChaCha8Rng {
        self.stream(1 + ((split.code() << 56) | ((user as u64) << 24) | item as u64))
    }

    /// The corpus-wide topic centres (unit vectors).
    pub fn topic_centers(&self) -> Vec<Vec<f64>> {
        let mut rng = self.stream(0);
        (0..self.num_topics).map(|_| unit_vector(&mut rng, self.d)).collect()
    }

    /// Topic indices owned by `user` of `split`.
    pub fn user_topics(&self, split: Split, user: usize) -> Vec<usize> {
        let mut rng = self.item_stream(split, user, 0);
        draw_user_topics(self, &mut rng)
    }

    fn noisy(&self, rng: &mut ChaCha8Rng, center: &[f64]) -> Vec<f32> {
        let v: Vec<f64> = center
            .iter()
            .map(|&c| c + self.noise_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let n = norm(&v);
        v.iter().map(|&x| (x / n) as f32).collect()
    }

    fn history(&self, rng: &mut ChaCha8Rng, topics: &[usize], centers: &[Vec<f64>]) -> Vec<FeatureMatrix> {
        let mut order = topics.to_vec();
        order.shuffle(rng);
        (0..self.history_per_user)
            .map(|j| {
                let c = &centers[order[j % order.len()]];
                let frames: Vec<Vec<f32>> = (0..self.frames_per_segment).map(|_| self.noisy(rng, c)).collect();
                FeatureMatrix::from_frames(&frames).expect("nonempty segment")
            })
            .collect()
    }

    fn shot_lengths(&self, rng: &mut ChaCha8Rng, mut total: usize) -> Vec<usize> {
        let mut out = Vec::new();
        while total > 0 {
            let len = rng.random_range(self.shot_len[0]..=self.shot_len[1]).min(total);
            out.push(len);
            total -= len;
        }
        out
    }

    fn video(&self, rng: &mut ChaCha8Rng, split: Split, topics: &[usize], centers: &[Vec<f64>]) -> GeneratedVideo {
        let t = self.frames_per_video;
        let budget = ((self.positive_fraction * t as f64).round() as usize).clamp(1, t);
        // (length, is_positive)
        let mut shots: Vec<(usize, bool)> = self.shot_lengths(rng, budget).into_iter().map(|l| (l, true)).collect();
        shots.extend(self.shot_lengths(rng, t - budget).into_iter().map(|l| (l, false)));
        shots.shuffle(rng);

        let others: Vec<usize> = (0..self.num_topics).filter(|k| !topics.contains(k)).collect();
        let near_dup = if split == Split::Train {
            self.near_duplicate_rate
        } else {
            0.0
        };

        let mut frames = Vec::with_capacity(t);
        let mut labels = Vec::with_capacity(t);
        let mut oracle = Vec::with_capacity(t);
        for (len, positive) in shots {
            let (center, label, near) = if positive {
                (centers[topics[rng.random_range(0..topics.len())]].clone(), true, true)
            } else {
                let r: f64 = rng.random();
                if r < near_dup {
                    (centers[topics[rng.random_range(0..topics.len())]].clone(), false, true)
                } else if r < near_dup + self.noise_shot_rate || others.is_empty() {
                    (unit_vector(rng, self.d), false, false)
                } else {
                    (centers[others[rng.random_range(0..others.len())]].clone(), false, false)
                }
            };
            for _ in 0..len {
                frames.push(self.noisy(rng, &center));
                labels.push(label);
                oracle.push(near);
            }
        }
        GeneratedVideo {
            features: FeatureMatrix::from_frames(&frames).expect("nonempty video"),
            labels,
            oracle,
        }
    }
}

fn draw_user_topics(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = rng.random_range(cfg.topics_per_user[0]..=cfg.topics_per_user[1]);
    let mut pool: Vec<usize> = (0..cfg.num_topics).collect();
    pool.shuffle(rng);
    pool.truncate(k);
    pool
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Writes a full train/val/test corpus under `out`.
///
/// Layout: `out/config.json`, `out/<split>/manifest.json`, and per user
/// `out/<split>/<id>/{history_NNN.prft, video_NNN.prft, video_NNN.labels.prlb,
/// video_NNN.oracle.prlb}`. The oracle sidecar marks every frame drawn from one
/// of the user's topics, labeled or not.
pub fn generate_synthetic(cfg: &SynthConfig, out: &Path) -> Result<SynthSummary> {
    cfg.validate()?;
    let centers = cfg.topic_centers();
    let mut config_bytes = serde_json::to_vec_pretty(cfg)?;
    config_bytes.push(b'\n');
    atomic_write(&out.join("config.json"), &config_bytes)?;

    let mut summary = SynthSummary::default();
    for split in Split::ALL {
        let n_users = match split {
            Split::Train => cfg.users.train,
            Split::Val => cfg.users.val,
            Split::Test => cfg.users.test,
        };
        let split_dir = out.join(split.name());
        let results: Vec<Result<(ManifestUser, SynthSummary)>> = (0..n_users)
            .into_par_iter()
            .map(|u| write_user(cfg, split, u, &centers, &split_dir))
            .collect();
        let mut users = Vec::with_capacity(n_users);
        for r in results {
            let (entry, s) = r?;
            summary.frames += s.frames;
            summary.positives += s.positives;
            summary.near_duplicates += s.near_duplicates;
            users.push(entry);
        }
        CorpusManifest {
            d: cfg.d,
            split: split.name().to_string(),
            users,
        }
        .write(&split_dir.join("manifest.json"))?;
    }
    Ok(summary)
}

fn write_user(
    cfg: &SynthConfig,
    split: Split,
    user: usize,
    centers: &[Vec<f64>],
    split_dir: &Path,
) -> Result<(ManifestUser, SynthSummary)> {
    let id = format!("u{user:04}");
    let dir = split_dir.join(&id);
    let rel = |name: String| PathBuf::from(&id).join(name);

    let mut rng = cfg.item_stream(split, user, 0);
    let topics = draw_user_topics(cfg, &mut rng);
    let mut history = Vec::new();
    for (j, seg) in cfg.history(&mut rng, &topics, centers).iter().enumerate() {
        let name = format!("history_{j:03}.prft");
        write_container(seg, &dir.join(&name))?;
        history.push(rel(name));
    }

    let mut summary = SynthSummary::default();
    let mut videos = Vec::new();
    for v in 0..cfg.videos_per_user {
        let mut vrng = cfg.item_stream(split, user, v + 1);
        let video = cfg.video(&mut vrng, split, &topics, centers);
        let stem = format!("video_{v:03}");
        write_container(&video.features, &dir.join(format!("{stem}.prft")))?;
        write_labels(&video.labels, &dir.join(format!("{stem}.labels.prlb")))?;
        write_labels(&video.oracle, &dir.join(format!("{stem}.oracle.prlb")))?;
        summary.frames += video.labels.len();
        summary.positives += video.labels.iter().filter(|&&l| l).count();
        summary.near_duplicates += video
            .labels
            .iter()
            .zip(&video.oracle)
            .filter(|(&l, &o)| o && !l)
            .count();
        videos.push(ManifestVideo {
            features: rel(format!("{stem}.prft")),
            labels: rel(format!("{stem}.labels.prlb")),
        });
    }
    Ok((ManifestUser { id, history, videos }, summary))
}

/// Path of the topic-oracle sidecar that accompanies a label file.
pub fn oracle_path(labels: &Path) -> PathBuf {
    let name = labels
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    labels.with_file_name(name.replace(".labels.prlb", ".oracle.prlb"))
}
