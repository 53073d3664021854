//! Full scoring model: encoder plus preference vectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{encode_graph, EncoderParams, Unet};
use crate::error::{Error, Result};
use crate::featureio::{FeatureMatrix, HistorySegment};
use crate::preference::{extract_trace, score_graph, AttentionStrategy, PredictionTrace, PreferenceParams, ScoreVars};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Learnable state of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub encoder: EncoderParams<F>,
    pub preference: PreferenceParams<F>,
}

/// Graph handles for every parameter, in [`ModelParams::named_tensors`] order.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoder: Unet<Var>,
    pub generic: Var,
    pub non_highlight: Var,
}

impl ModelVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for (_, s) in self.encoder.slots() {
            out.push(s.weight);
            out.push(s.bias);
        }
        out.push(self.generic);
        out.push(self.non_highlight);
        out
    }
}

impl<F: Real> ModelParams<F> {
    /// Deterministic initialization from `seed`.
    pub fn init(d: usize, lambda: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init(d, &mut rng);
        let preference = PreferenceParams::init(d, lambda, &mut rng);
        Self { encoder, preference }
    }

    pub fn d(&self) -> usize {
        self.encoder.d()
    }

    pub fn lambda(&self) -> f64 {
        self.preference.lambda
    }

    /// Every tensor with a stable name, in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (name, s) in self.encoder.slots() {
            out.push((format!("encoder.{name}.weight"), &s.weight));
            out.push((format!("encoder.{name}.bias"), &s.bias));
        }
        out.push(("generic".to_string(), &self.preference.generic));
        out.push(("non_highlight".to_string(), &self.preference.non_highlight));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = Vec::new();
        for s in self.encoder.slots_mut() {
            out.push(&mut s.weight);
            out.push(&mut s.bias);
        }
        out.push(&mut self.preference.generic);
        out.push(&mut self.preference.non_highlight);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Rebuilds from named tensors; every expected name must be present with the
    /// shape a `d`-channel model has.
    pub fn from_named(d: usize, lambda: f64, mut tensors: Vec<(String, Tensor<F>)>) -> Result<Self> {
        let mut model = Self::init(d, lambda, 0);
        let names: Vec<(String, Vec<usize>)> = model
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if tensors.len() != names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                tensors.len()
            )));
        }
        for ((name, shape), slot) in names.iter().zip(model.tensors_mut()) {
            let pos = tensors
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            let (_, t) = tensors.swap_remove(pos);
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            *slot = t;
        }
        Ok(model)
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        ModelParams {
            encoder: self.encoder.map(|t| t.cast()),
            preference: PreferenceParams {
                generic: self.preference.generic.cast(),
                non_highlight: self.preference.non_highlight.cast(),
                lambda: self.preference.lambda,
            },
        }
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Registers every tensor as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<F>) -> ModelVars {
        let encoder = self.encoder.bind(g);
        let generic = g.param(self.preference.generic.clone());
        let non_highlight = g.param(self.preference.non_highlight.clone());
        ModelVars {
            encoder,
            generic,
            non_highlight,
        }
    }

    /// Registers every tensor as a constant (inference).
    pub fn bind_constant(&self, g: &mut Graph<F>) -> ModelVars {
        let encoder = self.encoder.bind_constant(g);
        let generic = g.constant(self.preference.generic.clone());
        let non_highlight = g.constant(self.preference.non_highlight.clone());
        ModelVars {
            encoder,
            generic,
            non_highlight,
        }
    }

    /// Scores a video given the user's history.
    pub fn predict(
        &self,
        strategy: AttentionStrategy,
        video: &FeatureMatrix,
        history: &[HistorySegment],
    ) -> Result<PredictionTrace> {
        self.preference.validate()?;
        check_dims(self.d(), video, history)?;
        let mut g = Graph::new();
        let vars = self.bind_constant(&mut g);
        let hist: Vec<Tensor<F>> = history.iter().map(|h| h.0.to_tensor()).collect();
        let sv = forward(&mut g, &vars, strategy, self.lambda(), &video.to_tensor(), &hist)?;
        Ok(extract_trace(&g, &sv, strategy, history.len(), self.lambda()))
    }
}

pub(crate) fn check_dims(d: usize, video: &FeatureMatrix, history: &[HistorySegment]) -> Result<()> {
    for found in std::iter::once(video.d()).chain(history.iter().map(|h| h.0.d())) {
        if found != d {
            return Err(Error::Dimension { expected: d, found });
        }
    }
    Ok(())
}

/// Encodes each history segment and averages it over time; returns `[d, n]`.
pub fn history_embeddings<F: Real>(g: &mut Graph<F>, vars: &ModelVars, history: &[Tensor<F>]) -> Result<Option<Var>> {
    if history.is_empty() {
        return Ok(None);
    }
    let mut cols = Vec::with_capacity(history.len());
    for h in history {
        let x = g.constant(h.clone());
        let e = encode_graph(g, &vars.encoder, x)?;
        cols.push(g.mean(e, 1)?);
    }
    Ok(Some(g.concat(&cols, 1)?))
}

/// Records encoding and scoring of one `[d, T]` video or segment.
pub fn forward<F: Real>(
    g: &mut Graph<F>,
    vars: &ModelVars,
    strategy: AttentionStrategy,
    lambda: f64,
    video: &Tensor<F>,
    history: &[Tensor<F>],
) -> Result<ScoreVars> {
    let x = g.constant(video.clone());
    let s = encode_graph(g, &vars.encoder, x)?;
    let h = if strategy == AttentionStrategy::GenericOnly {
        None
    } else {
        history_embeddings(g, vars, history)?
    };
    score_graph(g, strategy, lambda, s, h, vars.generic, vars.non_highlight)
}
