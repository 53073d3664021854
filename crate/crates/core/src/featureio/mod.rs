//! Feature containers, dataset manifests, and the synthetic corpus generator.

mod container;
mod manifest;
mod synth;

pub use container::{
    decode_labels, decode_matrix, encode_labels, encode_matrix, read_container, read_labels, write_container,
    write_labels, LABEL_MAGIC, MATRIX_MAGIC,
};
pub use manifest::{load_split, resolve_manifest, CorpusManifest, ManifestUser, ManifestVideo};
pub use synth::{generate_synthetic, oracle_path, Split, SplitSizes, SynthConfig, SynthSummary};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `d × T` per-frame features. Stored frame-major: frame `i` occupies
/// `values[i*d .. (i+1)*d]`, the same order as the on-disk payload.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    d: usize,
    t: usize,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(d: usize, t: usize, values: Vec<f32>) -> Result<Self> {
        if d == 0 || t == 0 {
            return Err(Error::shape("feature matrix", format!("d={d}, T={t} must be positive")));
        }
        if values.len() != d * t {
            return Err(Error::shape(
                "feature matrix",
                format!("d={d}, T={t} needs {} values, got {}", d * t, values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("feature matrix".into()));
        }
        Ok(Self { d, t, values })
    }

    /// Builds from per-frame vectors (all of length `d`).
    pub fn from_frames(frames: &[Vec<f32>]) -> Result<Self> {
        let d = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != d) {
            return Err(Error::shape("feature matrix", "frames of unequal length"));
        }
        Self::new(d, frames.len(), frames.concat())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn frames(&self) -> usize {
        self.t
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    /// Frames `[start, start + len)` as a new matrix.
    pub fn window(&self, start: usize, len: usize) -> FeatureMatrix {
        FeatureMatrix {
            d: self.d,
            t: len,
            values: self.values[start * self.d..(start + len) * self.d].to_vec(),
        }
    }

    /// Channel-major `[d, T]` tensor (row `c` holds channel `c` over time).
    pub fn to_tensor<F: Real>(&self) -> Tensor<F> {
        let mut data = vec![F::zero(); self.d * self.t];
        for i in 0..self.t {
            for c in 0..self.d {
                data[c * self.t + i] = F::of(self.values[i * self.d + c] as f64);
            }
        }
        Tensor::new(vec![self.d, self.t], data).expect("positive extents")
    }
}

/// A clip the user previously highlighted.
#[derive(Debug, Clone, PartialEq)]
pub struct HistorySegment(pub FeatureMatrix);

/// Frame-wise mean of a segment's features (the un-encoded history embedding).
pub fn mean_embed(segment: &HistorySegment) -> Vec<f64> {
    let m = &segment.0;
    let mut acc = vec![0.0f64; m.d()];
    for i in 0..m.frames() {
        for (a, &v) in acc.iter_mut().zip(m.frame(i)) {
            *a += v as f64;
        }
    }
    let n = m.frames() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// A video with per-frame highlight labels (1 = annotated highlight).
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedVideo {
    pub id: String,
    pub features: FeatureMatrix,
    pub labels: Vec<bool>,
}

impl AnnotatedVideo {
    pub fn new(id: impl Into<String>, features: FeatureMatrix, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != features.frames() {
            return Err(Error::shape(
                "annotated video",
                format!("{} labels for {} frames", labels.len(), features.frames()),
            ));
        }
        Ok(Self {
            id: id.into(),
            features,
            labels,
        })
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// One user's history (chronological) and annotated videos.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub user_id: String,
    pub history: Vec<HistorySegment>,
    pub videos: Vec<AnnotatedVideo>,
}

impl UserRecord {
    /// Keeps only the `cap` most recent history segments.
    pub fn cap_history(&mut self, cap: Option<usize>) {
        if let Some(cap) = cap {
            if self.history.len() > cap {
                self.history.drain(..self.history.len() - cap);
            }
        }
    }
}
