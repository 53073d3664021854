//! Temporal context encoder: a three-level U-shaped 1-D convolutional network
//! mapping `[d, T]` frame features to `[d, T]` contextual embeddings.
//!
//! Per level: two kernel-3 convolutions with relu, then a stride-2 kernel-3
//! convolution down. The bottleneck repeats the two-convolution block. On the
//! way up each level doubles the length by nearest-neighbour repetition, applies
//! a kernel-3 convolution, concatenates the skip features (2d channels), and
//! projects back to d with a kernel-1 convolution. Relu follows every
//! projection except the last, so the output stays signed.
//!
//! Inputs are right-padded by edge replication to a multiple of 8 and the
//! output is cropped back to `T`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::featureio::FeatureMatrix;
use crate::tensor::{Graph, Real, Tensor, Var};

/// Number of down/up-sampling levels.
pub const LEVELS: usize = 3;
/// Inputs are padded to a multiple of `2^LEVELS`.
pub const LENGTH_MULTIPLE: usize = 1 << LEVELS;

/// Kernel `[c_out, c_in, k]` and bias `[c_out]` of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSlot<T> {
    pub weight: T,
    pub bias: T,
}

/// Layer layout shared by parameter tensors (`Unet<Tensor<F>>`) and their
/// graph handles (`Unet<Var>`).
#[derive(Debug, Clone, PartialEq)]
pub struct Unet<T> {
    /// Two per level, plus two for the bottleneck (indices `2*LEVELS`, `2*LEVELS+1`).
    pub blocks: Vec<ConvSlot<T>>,
    pub down: Vec<ConvSlot<T>>,
    /// `up[l]` lifts level `l+1` features to level `l`.
    pub up: Vec<ConvSlot<T>>,
    pub project: Vec<ConvSlot<T>>,
}

pub type EncoderParams<F> = Unet<Tensor<F>>;

impl<T> Unet<T> {
    /// Slots with stable names, in canonical order.
    pub fn slots(&self) -> Vec<(String, &ConvSlot<T>)> {
        let mut out = Vec::with_capacity(5 * LEVELS + 2);
        for l in 0..LEVELS {
            out.push((format!("enc{l}.a"), &self.blocks[2 * l]));
            out.push((format!("enc{l}.b"), &self.blocks[2 * l + 1]));
            out.push((format!("down{l}"), &self.down[l]));
        }
        out.push(("mid.a".to_string(), &self.blocks[2 * LEVELS]));
        out.push(("mid.b".to_string(), &self.blocks[2 * LEVELS + 1]));
        for l in (0..LEVELS).rev() {
            out.push((format!("up{l}"), &self.up[l]));
            out.push((format!("proj{l}"), &self.project[l]));
        }
        out
    }

    pub fn slots_mut(&mut self) -> Vec<&mut ConvSlot<T>> {
        let mut blocks: Vec<Option<&mut ConvSlot<T>>> = self.blocks.iter_mut().map(Some).collect();
        let mut down: Vec<Option<&mut ConvSlot<T>>> = self.down.iter_mut().map(Some).collect();
        let mut up: Vec<Option<&mut ConvSlot<T>>> = self.up.iter_mut().map(Some).collect();
        let mut project: Vec<Option<&mut ConvSlot<T>>> = self.project.iter_mut().map(Some).collect();
        let mut out = Vec::with_capacity(5 * LEVELS + 2);
        for l in 0..LEVELS {
            out.push(blocks[2 * l].take().expect("slot"));
            out.push(blocks[2 * l + 1].take().expect("slot"));
            out.push(down[l].take().expect("slot"));
        }
        out.push(blocks[2 * LEVELS].take().expect("slot"));
        out.push(blocks[2 * LEVELS + 1].take().expect("slot"));
        for l in (0..LEVELS).rev() {
            out.push(up[l].take().expect("slot"));
            out.push(project[l].take().expect("slot"));
        }
        out
    }

    /// Maps every tensor in canonical order (weight before bias within a slot).
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Unet<U> {
        let mut slot = |s: &ConvSlot<T>| ConvSlot {
            weight: f(&s.weight),
            bias: f(&s.bias),
        };
        let mut blocks: Vec<Option<ConvSlot<U>>> = (0..self.blocks.len()).map(|_| None).collect();
        let mut down: Vec<Option<ConvSlot<U>>> = (0..LEVELS).map(|_| None).collect();
        let mut up: Vec<Option<ConvSlot<U>>> = (0..LEVELS).map(|_| None).collect();
        let mut project: Vec<Option<ConvSlot<U>>> = (0..LEVELS).map(|_| None).collect();
        for l in 0..LEVELS {
            blocks[2 * l] = Some(slot(&self.blocks[2 * l]));
            blocks[2 * l + 1] = Some(slot(&self.blocks[2 * l + 1]));
            down[l] = Some(slot(&self.down[l]));
        }
        blocks[2 * LEVELS] = Some(slot(&self.blocks[2 * LEVELS]));
        blocks[2 * LEVELS + 1] = Some(slot(&self.blocks[2 * LEVELS + 1]));
        for l in (0..LEVELS).rev() {
            up[l] = Some(slot(&self.up[l]));
            project[l] = Some(slot(&self.project[l]));
        }
        let unwrap = |v: Vec<Option<ConvSlot<U>>>| v.into_iter().map(|s| s.expect("filled")).collect();
        Unet {
            blocks: unwrap(blocks),
            down: unwrap(down),
            up: unwrap(up),
            project: unwrap(project),
        }
    }
}

fn init_slot<F: Real>(rng: &mut impl Rng, c_out: usize, c_in: usize, k: usize) -> ConvSlot<Tensor<F>> {
    let a = (6.0 / ((c_in * k + c_out * k) as f64)).sqrt();
    let weight = (0..c_out * c_in * k).map(|_| F::of(rng.random_range(-a..a))).collect();
    ConvSlot {
        weight: Tensor::new(vec![c_out, c_in, k], weight).expect("kernel shape"),
        bias: Tensor::zeros(&[c_out]),
    }
}

impl<F: Real> EncoderParams<F> {
    /// Symmetric-uniform kernels with `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        // drawn in canonical slot order
        let mut blocks = Vec::with_capacity(2 * LEVELS + 2);
        let mut down = Vec::with_capacity(LEVELS);
        for _ in 0..LEVELS {
            blocks.push(init_slot(rng, d, d, 3));
            blocks.push(init_slot(rng, d, d, 3));
            down.push(init_slot(rng, d, d, 3));
        }
        blocks.push(init_slot(rng, d, d, 3));
        blocks.push(init_slot(rng, d, d, 3));
        let mut up = Vec::with_capacity(LEVELS);
        let mut project = Vec::with_capacity(LEVELS);
        for _ in 0..LEVELS {
            up.push(init_slot(rng, d, d, 3));
            project.push(init_slot(rng, d, 2 * d, 1));
        }
        // built deepest-first
        up.reverse();
        project.reverse();
        Unet {
            blocks,
            down,
            up,
            project,
        }
    }

    /// Channel dimension the encoder was built for.
    pub fn d(&self) -> usize {
        self.blocks[0].weight.shape()[0]
    }

    pub fn bind(&self, g: &mut Graph<F>) -> Unet<Var> {
        self.map(|t| g.param(t.clone()))
    }

    pub fn bind_constant(&self, g: &mut Graph<F>) -> Unet<Var> {
        self.map(|t| g.constant(t.clone()))
    }
}

fn conv<F: Real>(g: &mut Graph<F>, s: &ConvSlot<Var>, x: Var, stride: usize) -> Result<Var> {
    let k = g.value(s.weight).shape()[2];
    g.conv1d(x, s.weight, Some(s.bias), stride, k / 2)
}

fn block<F: Real>(g: &mut Graph<F>, p: &Unet<Var>, idx: usize, x: Var) -> Result<Var> {
    let h = conv(g, &p.blocks[2 * idx], x, 1)?;
    let h = g.relu(h);
    let h = conv(g, &p.blocks[2 * idx + 1], h, 1)?;
    Ok(g.relu(h))
}

/// Records the encoder on `g` for an input `x: [d, T]`; returns `[d, T]`.
pub fn encode_graph<F: Real>(g: &mut Graph<F>, p: &Unet<Var>, x: Var) -> Result<Var> {
    let t = g.value(x).cols();
    let padded = t.div_ceil(LENGTH_MULTIPLE) * LENGTH_MULTIPLE;
    let mut h = g.pad_edge(x, padded - t)?;

    let mut skips = Vec::with_capacity(LEVELS);
    for l in 0..LEVELS {
        let s = block(g, p, l, h)?;
        skips.push(s);
        h = conv(g, &p.down[l], s, 2)?;
    }
    h = block(g, p, LEVELS, h)?;
    for l in (0..LEVELS).rev() {
        let u = g.upsample_nearest(h, 2)?;
        let u = conv(g, &p.up[l], u, 1)?;
        let cat = g.concat(&[skips[l], u], 0)?;
        h = conv(g, &p.project[l], cat, 1)?;
        if l > 0 {
            h = g.relu(h);
        }
    }
    if padded == t {
        Ok(h)
    } else {
        g.slice(h, 1, 0, t)
    }
}

/// Contextual embeddings `[d, T]` of a feature matrix (inference).
pub fn encode<F: Real>(params: &EncoderParams<F>, video: &FeatureMatrix) -> Result<Tensor<F>> {
    if video.d() != params.d() {
        return Err(Error::Dimension {
            expected: params.d(),
            found: video.d(),
        });
    }
    let mut g = Graph::new();
    let p = params.bind_constant(&mut g);
    let x = g.constant(video.to_tensor());
    let s = encode_graph(&mut g, &p, x)?;
    Ok(g.value(s).clone())
}

/// Inclusive range of output frames that can change when input frame `j` of a
/// `t`-frame input changes.
pub fn influence_window(j: usize, t: usize) -> (usize, usize) {
    let padded = t.div_ceil(LENGTH_MULTIPLE) * LENGTH_MULTIPLE;
    let clip = |a: isize, b: isize, len: usize| (a.max(0), b.min(len as isize - 1));
    // edge replication copies the last frame into the padding
    let mut iv: (isize, isize) = (j as isize, if j + 1 == t { padded as isize - 1 } else { j as isize });
    let mut len = padded;
    let mut skips = Vec::with_capacity(LEVELS);
    for _ in 0..LEVELS {
        iv = clip(iv.0 - 2, iv.1 + 2, len);
        skips.push(iv);
        // stride-2, kernel 3, pad 1: output o reads inputs 2o-1 ..= 2o+1
        len /= 2;
        iv = clip(iv.0.div_euclid(2), (iv.1 + 1).div_euclid(2), len);
    }
    iv = clip(iv.0 - 2, iv.1 + 2, len);
    for l in (0..LEVELS).rev() {
        len *= 2;
        iv = clip(2 * iv.0 - 1, 2 * iv.1 + 2, len);
        iv = (iv.0.min(skips[l].0), iv.1.max(skips[l].1));
    }
    let (lo, hi) = clip(iv.0, iv.1, t);
    (lo as usize, hi as usize)
}
