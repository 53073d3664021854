//! `PRCK` checkpoint container.
//!
//! Layout: magic `PRCK` | `u32` version | `u64` header length | UTF-8 JSON header |
//! tensor payloads (little-endian, dtype per header entry). Offsets in the
//! header are relative to the start of the payload section.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::{EpochMetrics, TrainConfig};
use crate::error::{Error, Result};
use crate::io_util::{atomic_write, read_file};
use crate::model::ModelParams;
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializable position of the training RNG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte key, hex encoded.
    pub seed: String,
    pub stream: u64,
    /// 128-bit word position, decimal.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Checkpoint(format!("malformed rng state {self:?}"));
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let word_pos: u128 = self.word_pos.parse().map_err(|_| bad())?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

/// Complete resumable training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub params: ModelParams<F>,
    pub adam: AdamState<F>,
    pub rng: RngState,
    pub best_val: Option<f64>,
    pub best_epoch: Option<usize>,
    pub metrics: Vec<EpochMetrics>,
    pub step_losses: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    d: usize,
    epoch: usize,
    step: u64,
    adam_t: u64,
    rng: RngState,
    best_val: Option<f64>,
    best_epoch: Option<usize>,
    metrics: Vec<EpochMetrics>,
    step_losses: Vec<f64>,
    tensors: Vec<TensorEntry>,
}

const PREFIXES: [&str; 3] = ["param", "adam.m", "adam.v"];

impl<F: Real> Checkpoint<F> {
    fn groups(&self) -> [Vec<(String, &Tensor<F>)>; 3] {
        let named = self.params.named_tensors();
        let mut m = Vec::with_capacity(named.len());
        let mut v = Vec::with_capacity(named.len());
        for (i, (n, _)) in named.iter().enumerate() {
            m.push((n.clone(), &self.adam.m[i]));
            v.push((n.clone(), &self.adam.v[i]));
        }
        [named, m, v]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        for (prefix, group) in PREFIXES.iter().zip(self.groups()) {
            for (name, t) in group {
                let offset = payload.len() as u64;
                for &x in t.data() {
                    x.put_le(&mut payload);
                }
                tensors.push(TensorEntry {
                    name: format!("{prefix}/{name}"),
                    shape: t.shape().to_vec(),
                    dtype: F::DTYPE.to_string(),
                    offset,
                    len: payload.len() as u64 - offset,
                });
            }
        }
        let header = Header {
            config: self.config.clone(),
            d: self.params.d(),
            epoch: self.epoch,
            step: self.step,
            adam_t: self.adam.t,
            rng: self.rng.clone(),
            best_val: self.best_val,
            best_epoch: self.best_epoch,
            metrics: self.metrics.clone(),
            step_losses: self.step_losses.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Decodes a checkpoint stored in either precision; values are converted to `F`
    /// (exact when the stored dtype is `F` or narrower).
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Truncated {
                expected: 16,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic,
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let hend = usize::try_from(hlen)
            .ok()
            .and_then(|h| h.checked_add(16))
            .filter(|&e| e <= bytes.len())
            .ok_or(Error::Truncated {
                expected: 16usize.saturating_add(hlen as usize),
                found: bytes.len(),
            })?;
        let header: Header =
            serde_json::from_slice(&bytes[16..hend]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let payload = &bytes[hend..];

        let mut groups: [Vec<(String, Tensor<F>)>; 3] = Default::default();
        let mut end = 0u64;
        for entry in &header.tensors {
            let width = match entry.dtype.as_str() {
                "f32" => 4,
                "f64" => 8,
                other => return Err(Error::Checkpoint(format!("unknown dtype {other:?}"))),
            };
            let count: usize = entry.shape.iter().product();
            if entry.len != (count * width) as u64 {
                return Err(Error::Checkpoint(format!("tensor {} length mismatch", entry.name)));
            }
            let stop = entry
                .offset
                .checked_add(entry.len)
                .filter(|&s| s <= payload.len() as u64)
                .ok_or(Error::Truncated {
                    expected: (entry.offset + entry.len) as usize,
                    found: payload.len(),
                })?;
            end = end.max(stop);
            let raw = &payload[entry.offset as usize..stop as usize];
            let data: Vec<F> = raw
                .chunks_exact(width)
                .map(|c| {
                    if width == 4 {
                        F::of(f32::get_le(c) as f64)
                    } else {
                        F::of(f64::get_le(c))
                    }
                })
                .collect();
            let (prefix, name) = entry
                .name
                .split_once('/')
                .ok_or_else(|| Error::Checkpoint(format!("bad tensor name {:?}", entry.name)))?;
            let g = PREFIXES
                .iter()
                .position(|&p| p == prefix)
                .ok_or_else(|| Error::Checkpoint(format!("bad tensor name {:?}", entry.name)))?;
            groups[g].push((name.to_string(), Tensor::new(entry.shape.clone(), data)?));
        }
        if end != payload.len() as u64 {
            return Err(Error::TrailingBytes {
                expected: end as usize,
                found: payload.len(),
            });
        }
        let [p, m, v] = groups;
        let params = ModelParams::from_named(header.d, header.config.lambda, p)?;
        // moments are reordered to match the parameter order
        let order = |ts: Vec<(String, Tensor<F>)>| -> Result<Vec<Tensor<F>>> {
            let rebuilt = ModelParams::from_named(header.d, header.config.lambda, ts)?;
            Ok(rebuilt.named_tensors().into_iter().map(|(_, t)| t.clone()).collect())
        };
        let adam = AdamState {
            m: order(m)?,
            v: order(v)?,
            t: header.adam_t,
        };
        Ok(Self {
            config: header.config,
            epoch: header.epoch,
            step: header.step,
            params,
            adam,
            rng: header.rng,
            best_val: header.best_val,
            best_epoch: header.best_epoch,
            metrics: header.metrics,
            step_losses: header.step_losses,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Loads only the model from a checkpoint file.
pub fn load_model<F: Real>(path: &Path) -> Result<(ModelParams<F>, TrainConfig)> {
    let c = Checkpoint::<F>::load(path)?;
    Ok((c.params, c.config))
}
