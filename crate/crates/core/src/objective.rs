//! Bi-directional contrastive loss with top-K hard-negative mining.
//!
//! ```text
//! L = Σ_{y∈Ω} log(l̃_y + b̃_y) + Σ_{x∈℧} log(l̃_x + b̃_x) − (Σ_{y∈Ω} l̃_y + Σ_{x∈℧} b̃_x)
//! ```
//!
//! `l̃` and `b̃` are softmaxes of the highlight and non-highlight scores over
//! the segment, `Ω` the labeled positives and `℧` the `K` unlabeled frames with
//! the highest non-highlight score. The loss is minimized. Mined indices are
//! constants for differentiation.

use crate::error::{Error, Result};
use crate::tensor::{kernels, Graph, Real, Tensor, Var};

/// Hard negatives mined per positive.
pub const DEFAULT_K_FACTOR: usize = 5;

/// Added inside each log.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// Positive frame indices, ascending.
    pub omega: Vec<usize>,
    /// Mined hard negatives in rank order (highest `b` first).
    pub mined: Vec<usize>,
    pub l_rel: Vec<f64>,
    pub b_rel: Vec<f64>,
}

/// Softmaxes of `l` and `b` over the segment.
pub fn relative_degrees(l: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (kernels::softmax(l), kernels::softmax(b))
}

/// Positive frame indices.
pub fn positives(labels: &[bool]) -> Vec<usize> {
    labels.iter().enumerate().filter(|(_, &y)| y).map(|(i, _)| i).collect()
}

/// Top `min(k_factor·|Ω|, #unlabeled)` unlabeled frames by `b`, ties to the lower index.
pub fn mine_hard_negatives<F: Real>(b: &[F], labels: &[bool], k_factor: usize) -> Result<Vec<usize>> {
    if b.len() != labels.len() {
        return Err(Error::shape(
            "mine",
            format!("{} scores for {} labels", b.len(), labels.len()),
        ));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut unlabeled: Vec<usize> = (0..b.len()).filter(|&i| !labels[i]).collect();
    let k = (k_factor * n_pos).min(unlabeled.len());
    let order = |&i: &usize, &j: &usize| b[j].partial_cmp(&b[i]).expect("finite scores").then(i.cmp(&j));
    if k < unlabeled.len() && k > 0 {
        unlabeled.select_nth_unstable_by(k - 1, order);
        unlabeled.truncate(k);
    } else {
        unlabeled.truncate(k);
    }
    unlabeled.sort_by(order);
    Ok(unlabeled)
}

/// Records the loss on a graph given `[1, T]` score rows and fixed index sets.
pub fn contrastive_loss_graph<F: Real>(
    g: &mut Graph<F>,
    l: Var,
    b: Var,
    omega: &[usize],
    mined: &[usize],
) -> Result<Var> {
    let lr = g.softmax(l, 1)?;
    let br = g.softmax(b, 1)?;
    let selected: Vec<usize> = omega.iter().chain(mined).copied().collect();
    let ls = g.gather(lr, 1, &selected)?;
    let bs = g.gather(br, 1, &selected)?;
    let both = g.add(ls, bs)?;
    let eps = g.constant(Tensor::full(&[1, selected.len()], F::of(LOG_EPS)));
    let guarded = g.add(both, eps)?;
    let logs = g.log(guarded)?;
    let log_sum = g.sum_all(logs);

    let lp = g.gather(lr, 1, omega)?;
    let pull = g.sum_all(lp);
    let total_pull = if mined.is_empty() {
        pull
    } else {
        let bm = g.gather(br, 1, mined)?;
        let push = g.sum_all(bm);
        g.add(pull, push)?
    };
    g.sub(log_sum, total_pull)
}

/// Loss over explicit relative degrees and index sets (no softmax).
pub fn loss_from_degrees(l_rel: &[f64], b_rel: &[f64], omega: &[usize], mined: &[usize]) -> f64 {
    let log_term: f64 = omega
        .iter()
        .chain(mined)
        .map(|&i| (l_rel[i] + b_rel[i] + LOG_EPS).ln())
        .sum();
    let pull: f64 = omega.iter().map(|&i| l_rel[i]).sum::<f64>() + mined.iter().map(|&i| b_rel[i]).sum::<f64>();
    log_term - pull
}

/// Evaluates the loss for one segment.
pub fn bidirectional_contrastive_loss(l: &[f64], b: &[f64], labels: &[bool], k_factor: usize) -> Result<LossReport> {
    if l.len() != labels.len() || b.len() != labels.len() {
        return Err(Error::shape(
            "contrastive loss",
            format!("l={}, b={}, labels={}", l.len(), b.len(), labels.len()),
        ));
    }
    if l.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("scores".into()));
    }
    let omega = positives(labels);
    let mined = mine_hard_negatives(b, labels, k_factor)?;
    let t = l.len();
    let mut g = Graph::<f64>::new();
    let lv = g.constant(Tensor::new(vec![1, t], l.to_vec())?);
    let bv = g.constant(Tensor::new(vec![1, t], b.to_vec())?);
    let loss = contrastive_loss_graph(&mut g, lv, bv, &omega, &mined)?;
    let (l_rel, b_rel) = relative_degrees(l, b);
    Ok(LossReport {
        loss: g.value(loss).data()[0],
        omega,
        mined,
        l_rel,
        b_rel,
    })
}
