//! Straight-line scalar re-implementations, written without the tensor engine.

#![allow(clippy::needless_range_loop)]

/// Max-subtracted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for &v in x {
        if v > m {
            m = v;
        }
    }
    let mut e = Vec::with_capacity(x.len());
    let mut z = 0.0;
    for &v in x {
        let w = (v - m).exp();
        e.push(w);
        z += w;
    }
    for w in e.iter_mut() {
        *w /= z;
    }
    e
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Column mean of frames given frame-major.
pub fn mean_frames(frames: &[Vec<f64>]) -> Vec<f64> {
    let d = frames[0].len();
    let mut out = vec![0.0; d];
    for f in frames {
        for c in 0..d {
            out[c] += f[c];
        }
    }
    for v in out.iter_mut() {
        *v /= frames.len() as f64;
    }
    out
}

/// Everything computed for one frame under the full strategy.
#[derive(Debug, Clone)]
pub struct FrameOracle {
    pub attention: Vec<f64>,
    pub user_pref: Vec<f64>,
    pub q1: f64,
    pub q2: f64,
    pub comprehensive: Vec<f64>,
    pub l: f64,
    pub b: f64,
}

pub fn score_frame(s: &[f64], history: &[Vec<f64>], g: &[f64], u: &[f64], lambda: f64) -> FrameOracle {
    let d = s.len();
    let logits: Vec<f64> = history.iter().map(|h| lambda * cosine(s, h)).collect();
    let attention = softmax(&logits);
    let mut user_pref = vec![0.0; d];
    for (j, h) in history.iter().enumerate() {
        for c in 0..d {
            user_pref[c] += attention[j] * h[c];
        }
    }
    let q1 = (lambda * cosine(s, &user_pref)).exp();
    let q2 = (lambda * cosine(s, g)).exp();
    let comprehensive: Vec<f64> = (0..d).map(|c| (q1 * user_pref[c] + q2 * g[c]) / (q1 + q2)).collect();
    FrameOracle {
        l: dot(s, &comprehensive),
        b: dot(s, u),
        attention,
        user_pref,
        q1,
        q2,
        comprehensive,
    }
}

/// Unlabeled indices ordered by descending `b`, ties by index, first `k·|Ω|`.
pub fn mine(b: &[f64], labels: &[bool], k_factor: usize) -> Vec<usize> {
    let positives = labels.iter().filter(|&&y| y).count();
    let mut idx: Vec<usize> = (0..b.len()).filter(|&i| !labels[i]).collect();
    // insertion sort: simple and obviously stable
    for a in 1..idx.len() {
        let mut j = a;
        while j > 0 {
            let (p, q) = (idx[j - 1], idx[j]);
            let swap = b[q] > b[p] || (b[q] == b[p] && q < p);
            if !swap {
                break;
            }
            idx.swap(j - 1, j);
            j -= 1;
        }
    }
    idx.truncate((k_factor * positives).min(idx.len()));
    idx
}

/// Loss from raw scores; returns `(loss, mined, l̃, b̃)`.
pub fn contrastive_loss(
    l: &[f64],
    b: &[f64],
    labels: &[bool],
    k_factor: usize,
) -> (f64, Vec<usize>, Vec<f64>, Vec<f64>) {
    let lt = softmax(l);
    let bt = softmax(b);
    let mined = mine(b, labels, k_factor);
    let mut loss = 0.0;
    for i in 0..l.len() {
        if labels[i] {
            loss += (lt[i] + bt[i] + 1e-12).ln();
        }
    }
    for &x in &mined {
        loss += (lt[x] + bt[x] + 1e-12).ln();
    }
    let mut pull = 0.0;
    for i in 0..l.len() {
        if labels[i] {
            pull += lt[i];
        }
    }
    for &x in &mined {
        pull += bt[x];
    }
    (loss - pull, mined, lt, bt)
}

/// Average precision by explicit counting: each positive's rank is the number
/// of frames ranked strictly ahead of it plus one, and the precision there is
/// the number of positives at or ahead of that rank over the rank.
pub fn average_precision_quadratic(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n = scores.len();
    let ahead = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let mut per_positive: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        if !labels[i] {
            continue;
        }
        let mut rank = 1;
        let mut hits = 1;
        for j in 0..n {
            if j != i && ahead(j, i) {
                rank += 1;
                if labels[j] {
                    hits += 1;
                }
            }
        }
        per_positive.push((rank, hits));
    }
    if per_positive.is_empty() {
        return None;
    }
    per_positive.sort();
    let mut sum = 0.0;
    for &(rank, hits) in &per_positive {
        sum += hits as f64 / rank as f64;
    }
    Some(sum / per_positive.len() as f64)
}

/// Fourth-order central difference of `f` at `x` along coordinate `i`.
pub fn five_point(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut y = x.to_vec();
    let mut at = |delta: f64| {
        y[i] = x[i] + delta;
        f(&y)
    };
    let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
    (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
