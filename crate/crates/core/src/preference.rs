//! Attention-guided preference reasoning and frame scoring.
//!
//! For every frame embedding `s_i` the user-specific preference is a softmax
//! (inverse temperature `lambda`) over cosine similarities to the history
//! embeddings. It is blended with a learned generic preference `g` by a second
//! two-way softmax over cosines, and the highlight score is the unnormalized
//! dot product of the frame with that blend. A second learned vector `u`
//! scores non-highlightness.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Inverse temperature used for both attention softmaxes unless configured otherwise.
pub const DEFAULT_LAMBDA: f64 = 9.0;

/// How the comprehensive preference is formed (the ablation variants).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionStrategy {
    /// Attention over history fused with the generic preference.
    Full,
    /// Generic preference only; history is ignored.
    GenericOnly,
    /// Attention over history only.
    UserOnly,
    /// Plain mean of history embeddings.
    MeanHistory,
    /// Mean of history embeddings fused with the generic preference.
    MeanHistoryPlusGeneric,
}

impl AttentionStrategy {
    pub const ALL: [AttentionStrategy; 5] = [
        AttentionStrategy::Full,
        AttentionStrategy::GenericOnly,
        AttentionStrategy::UserOnly,
        AttentionStrategy::MeanHistory,
        AttentionStrategy::MeanHistoryPlusGeneric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionStrategy::Full => "full",
            AttentionStrategy::GenericOnly => "generic_only",
            AttentionStrategy::UserOnly => "user_only",
            AttentionStrategy::MeanHistory => "mean_history",
            AttentionStrategy::MeanHistoryPlusGeneric => "mean_history_plus_generic",
        }
    }

    pub fn requires_history(self) -> bool {
        matches!(self, AttentionStrategy::UserOnly | AttentionStrategy::MeanHistory)
    }
}

impl fmt::Display for AttentionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttentionStrategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// Learned generic preference `g`, non-highlight preference `u` (both `[d, 1]`),
/// and the inverse temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceParams<F> {
    pub generic: Tensor<F>,
    pub non_highlight: Tensor<F>,
    pub lambda: f64,
}

impl<F: Real> PreferenceParams<F> {
    /// Same symmetric-uniform scheme as the encoder, treating each vector as a 1×d kernel.
    pub fn init(d: usize, lambda: f64, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (d as f64 + 1.0)).sqrt();
        let mut draw = || {
            let v = (0..d).map(|_| F::of(rng.random_range(-a..a))).collect();
            Tensor::new(vec![d, 1], v).expect("vector shape")
        };
        let generic = draw();
        let non_highlight = draw();
        Self {
            generic,
            non_highlight,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !self.generic.is_finite() || !self.non_highlight.is_finite() {
            return Err(Error::NonFiniteInput("preference embeddings".into()));
        }
        Ok(())
    }
}

/// Per-frame record of a scoring pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTrace {
    pub i: usize,
    /// Highlight score.
    pub l: f64,
    /// Non-highlight score.
    pub b: f64,
    /// Attention over history segments (empty when history is unused).
    pub a: Vec<f64>,
    /// Unnormalized fusion weight of the user-specific preference.
    pub qc1: f64,
    /// Unnormalized fusion weight of the generic preference.
    pub qc2: f64,
}

impl FrameTrace {
    /// `(qc1, qc2) / (qc1 + qc2)`.
    pub fn fusion_weights(&self) -> (f64, f64) {
        let z = self.qc1 + self.qc2;
        if z > 0.0 {
            (self.qc1 / z, self.qc2 / z)
        } else {
            (0.0, 0.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionTrace {
    pub frames: Vec<FrameTrace>,
}

impl PredictionTrace {
    pub fn highlight_scores(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.l).collect()
    }

    pub fn non_highlight_scores(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.b).collect()
    }

    /// One JSON object per line: `{"i","l","b","a","qc1","qc2"}`.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for f in &self.frames {
            out.push_str(&serde_json::to_string(f)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let frames = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { frames })
    }
}

/// Cosine similarity; a zero-norm operand yields 0 and a warning.
pub fn cosine(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        log::warn!("cosine of a zero-norm vector; using similarity 0");
        return 0.0;
    }
    dot / (nx * ny)
}

/// Graph handles produced by [`score_graph`].
#[derive(Debug, Clone, Copy)]
pub struct ScoreVars {
    /// `[1, T]` highlight scores.
    pub l: Var,
    /// `[1, T]` non-highlight scores.
    pub b: Var,
    /// `[T, n]` attention over history, when the strategy attends.
    pub attention: Option<Var>,
    /// `[1, T]` cosines of each frame with the user-side and generic preference.
    pub fusion_cosines: Option<(Var, Var)>,
}

fn ones<F: Real>(g: &mut Graph<F>, rows: usize, cols: usize) -> Var {
    g.constant(Tensor::full(&[rows, cols], F::one()))
}

/// `[1, cols]` reciprocal column norms (0 for zero columns).
fn inv_col_norms<F: Real>(g: &mut Graph<F>, x: Var) -> Result<Var> {
    let n = g.l2norm(x, 0)?;
    Ok(g.safe_recip(n))
}

/// Repeats a `[d, 1]` column `t` times.
fn repeat_col<F: Real>(g: &mut Graph<F>, v: Var, t: usize) -> Result<Var> {
    let o = ones(g, 1, t);
    g.matmul(v, o)
}

/// User-specific preference per frame: returns (`[d, T]` preferences, `[T, n]` weights).
pub fn attend<F: Real>(g: &mut Graph<F>, s: Var, history: Var, lambda: f64) -> Result<(Var, Var)> {
    let st = g.transpose(s)?;
    let raw = g.matmul(st, history)?;
    let rs = inv_col_norms(g, s)?;
    let rst = g.transpose(rs)?;
    let rh = inv_col_norms(g, history)?;
    let denom = g.matmul(rst, rh)?;
    let cos = g.mul(raw, denom)?;
    let logits = g.scale(cos, F::of(lambda));
    let a = g.softmax(logits, 1)?;
    let at = g.transpose(a)?;
    let pu = g.matmul(history, at)?;
    Ok((pu, a))
}

/// Column-wise cosines of `s` with `p` (same shape), as `[1, T]`.
fn paired_cosines<F: Real>(g: &mut Graph<F>, s: Var, p: Var, rs: Var) -> Result<Var> {
    let prod = g.mul(s, p)?;
    let dots = g.sum(prod, 0)?;
    let rp = inv_col_norms(g, p)?;
    let c = g.mul(dots, rs)?;
    g.mul(c, rp)
}

/// Cosines of each column of `s` with one `[d, 1]` vector, as `[1, T]`.
fn vector_cosines<F: Real>(g: &mut Graph<F>, s: Var, v: Var, rs: Var) -> Result<Var> {
    let t = g.value(s).cols();
    let vt = g.transpose(v)?;
    let dots = g.matmul(vt, s)?;
    let rv = inv_col_norms(g, v)?;
    let o = ones(g, 1, t);
    let rv_row = g.matmul(rv, o)?;
    let c = g.mul(dots, rs)?;
    g.mul(c, rv_row)
}

/// Blends `[d, T]` user-side preferences with the generic vector.
/// Returns (`[d, T]` comprehensive preference, user cosines, generic cosines).
pub fn fuse<F: Real>(g: &mut Graph<F>, s: Var, pu: Var, generic: Var, lambda: f64) -> Result<(Var, Var, Var)> {
    let (d, t) = (g.value(s).rows(), g.value(s).cols());
    let rs = inv_col_norms(g, s)?;
    let c1 = paired_cosines(g, s, pu, rs)?;
    let c2 = vector_cosines(g, s, generic, rs)?;
    let both = g.concat(&[c1, c2], 0)?;
    let logits = g.scale(both, F::of(lambda));
    let w = g.softmax(logits, 0)?;
    let w1 = g.slice(w, 0, 0, 1)?;
    let w2 = g.slice(w, 0, 1, 1)?;
    let od = ones(g, d, 1);
    let w1_full = g.matmul(od, w1)?;
    let user_part = g.mul(pu, w1_full)?;
    let generic_part = g.matmul(generic, w2)?;
    let pc = g.add(user_part, generic_part)?;
    debug_assert_eq!(g.value(pc).cols(), t);
    Ok((pc, c1, c2))
}

/// Records highlight and non-highlight scoring of `s: [d, T]`.
///
/// `history` is `[d, n]` encoded history embeddings, or `None` when the user
/// has none; `Full` and `MeanHistoryPlusGeneric` then fall back to the generic
/// preference, while `UserOnly` and `MeanHistory` are rejected.
pub fn score_graph<F: Real>(
    g: &mut Graph<F>,
    strategy: AttentionStrategy,
    lambda: f64,
    s: Var,
    history: Option<Var>,
    generic: Var,
    non_highlight: Var,
) -> Result<ScoreVars> {
    let (d, t) = (g.value(s).rows(), g.value(s).cols());
    for (what, v) in [
        ("generic preference", generic),
        ("non-highlight preference", non_highlight),
    ] {
        if g.value(v).shape() != [d, 1] {
            return Err(Error::shape(
                "score",
                format!("{what} {:?} for embeddings {:?}", g.value(v).shape(), [d, t]),
            ));
        }
    }
    if let Some(h) = history {
        if g.value(h).rows() != d {
            return Err(Error::Dimension {
                expected: d,
                found: g.value(h).rows(),
            });
        }
    }
    if history.is_none() && strategy.requires_history() {
        return Err(Error::NoHistory(strategy.name()));
    }

    let mut attention = None;
    let mut fusion_cosines = None;
    let pc = match (strategy, history) {
        (AttentionStrategy::GenericOnly, _)
        | (AttentionStrategy::Full, None)
        | (AttentionStrategy::MeanHistoryPlusGeneric, None) => repeat_col(g, generic, t)?,
        (AttentionStrategy::Full, Some(h)) => {
            let (pu, a) = attend(g, s, h, lambda)?;
            attention = Some(a);
            let (pc, c1, c2) = fuse(g, s, pu, generic, lambda)?;
            fusion_cosines = Some((c1, c2));
            pc
        }
        (AttentionStrategy::UserOnly, Some(h)) => {
            let (pu, a) = attend(g, s, h, lambda)?;
            attention = Some(a);
            pu
        }
        (AttentionStrategy::MeanHistory, Some(h)) => {
            let m = g.mean(h, 1)?;
            repeat_col(g, m, t)?
        }
        (AttentionStrategy::MeanHistoryPlusGeneric, Some(h)) => {
            let m = g.mean(h, 1)?;
            let pu = repeat_col(g, m, t)?;
            let (pc, c1, c2) = fuse(g, s, pu, generic, lambda)?;
            fusion_cosines = Some((c1, c2));
            pc
        }
        (AttentionStrategy::UserOnly | AttentionStrategy::MeanHistory, None) => unreachable!("checked above"),
    };
    let prod = g.mul(s, pc)?;
    let l = g.sum(prod, 0)?;
    let ut = g.transpose(non_highlight)?;
    let b = g.matmul(ut, s)?;
    Ok(ScoreVars {
        l,
        b,
        attention,
        fusion_cosines,
    })
}

/// Reads a trace off a scored graph.
pub fn extract_trace<F: Real>(
    g: &Graph<F>,
    vars: &ScoreVars,
    strategy: AttentionStrategy,
    n_history: usize,
    lambda: f64,
) -> PredictionTrace {
    let l = g.value(vars.l).to_f64();
    let b = g.value(vars.b).to_f64();
    let attn = vars.attention.map(|a| g.value(a).to_f64());
    let cos = vars
        .fusion_cosines
        .map(|(c1, c2)| (g.value(c1).to_f64(), g.value(c2).to_f64()));
    let frames = (0..l.len())
        .map(|i| {
            let a = match (&attn, strategy) {
                (Some(a), _) => a[i * n_history..(i + 1) * n_history].to_vec(),
                (None, AttentionStrategy::MeanHistory | AttentionStrategy::MeanHistoryPlusGeneric) if n_history > 0 => {
                    vec![1.0 / n_history as f64; n_history]
                }
                _ => Vec::new(),
            };
            let (qc1, qc2) = match (&cos, strategy) {
                (Some((c1, c2)), _) => ((lambda * c1[i]).exp(), (lambda * c2[i]).exp()),
                (None, AttentionStrategy::UserOnly | AttentionStrategy::MeanHistory) => (1.0, 0.0),
                _ => (0.0, 1.0),
            };
            FrameTrace {
                i,
                l: l[i],
                b: b[i],
                a,
                qc1,
                qc2,
            }
        })
        .collect();
    PredictionTrace { frames }
}

/// Column-stacks embeddings into a `[d, n]` tensor.
pub fn stack_columns<F: Real>(columns: &[Vec<F>]) -> Result<Tensor<F>> {
    let d = columns.first().map_or(0, Vec::len);
    let n = columns.len();
    if columns.iter().any(|c| c.len() != d) {
        return Err(Error::shape("stack", "columns of unequal length"));
    }
    let mut data = vec![F::zero(); d * n];
    for (j, c) in columns.iter().enumerate() {
        for (r, &v) in c.iter().enumerate() {
            data[r * n + j] = v;
        }
    }
    Tensor::new(vec![d, n], data)
}

/// Scores already-encoded frames `s: [d, T]` against encoded history embeddings.
pub fn score_frames<F: Real>(
    params: &PreferenceParams<F>,
    strategy: AttentionStrategy,
    s: &Tensor<F>,
    history: &[Vec<F>],
) -> Result<PredictionTrace> {
    params.validate()?;
    if !s.is_finite() {
        return Err(Error::NonFiniteInput("frame embeddings".into()));
    }
    let mut g = Graph::new();
    let sv = g.constant(s.clone());
    let hv = if history.is_empty() {
        None
    } else {
        Some(g.constant(stack_columns(history)?))
    };
    let gv = g.constant(params.generic.clone());
    let uv = g.constant(params.non_highlight.clone());
    let vars = score_graph(&mut g, strategy, params.lambda, sv, hv, gv, uv)?;
    warn_on_degenerate(s);
    Ok(extract_trace(&g, &vars, strategy, history.len(), params.lambda))
}

fn warn_on_degenerate<F: Real>(s: &Tensor<F>) {
    let (d, t) = (s.rows(), s.cols());
    let zero_frames = (0..t).filter(|&i| (0..d).all(|c| s.at(c, i) == F::zero())).count();
    if zero_frames > 0 {
        log::warn!("{zero_frames} zero-norm frame embeddings scored with cosine 0");
    }
}

/// User-specific preference of one frame: `(p^u, attention weights)`.
pub fn user_preference(s: &[f64], history: &[Vec<f64>], lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if history.is_empty() {
        return Err(Error::NoHistory("user preference"));
    }
    let mut g = Graph::<f64>::new();
    let sv = g.constant(Tensor::new(vec![s.len(), 1], s.to_vec())?);
    let hv = g.constant(stack_columns(history)?);
    let (pu, a) = attend(&mut g, sv, hv, lambda)?;
    Ok((g.value(pu).to_f64(), g.value(a).to_f64()))
}

/// Comprehensive preference of one frame: `(p^c, qc1, qc2)`. Without a
/// user-side preference the generic vector is returned with weights `(0, 1)`.
pub fn comprehensive_preference(
    s: &[f64],
    user: Option<&[f64]>,
    generic: &[f64],
    lambda: f64,
) -> Result<(Vec<f64>, f64, f64)> {
    let Some(pu) = user else {
        return Ok((generic.to_vec(), 0.0, 1.0));
    };
    let d = s.len();
    let mut g = Graph::<f64>::new();
    let sv = g.constant(Tensor::new(vec![d, 1], s.to_vec())?);
    let pv = g.constant(Tensor::new(vec![d, 1], pu.to_vec())?);
    let gv = g.constant(Tensor::new(vec![d, 1], generic.to_vec())?);
    let (pc, c1, c2) = fuse(&mut g, sv, pv, gv, lambda)?;
    let q1 = (lambda * g.value(c1).data()[0]).exp();
    let q2 = (lambda * g.value(c2).data()[0]).exp();
    Ok((g.value(pc).to_f64(), q1, q2))
}
