use proptest::collection::vec;
use proptest::prelude::*;
use vhd::eval::average_precision;
use vhd::objective::contrastive_loss_graph;
use vhd::objective::{
    bidirectional_contrastive_loss, loss_from_degrees, mine_hard_negatives, positives, relative_degrees,
};
use vhd::preference::user_preference;
use vhd::tensor::{Graph, Tensor};

/// The engine's autodiff gradient in `(l, b)`.
fn engine_grad(x: &[f64], t: usize, omega: &[usize], mined: &[usize]) -> Vec<f64> {
    let mut g = Graph::<f64>::new();
    let l = g.param(Tensor::new(vec![1, t], x[..t].to_vec()).unwrap());
    let b = g.param(Tensor::new(vec![1, t], x[t..].to_vec()).unwrap());
    let loss = contrastive_loss_graph(&mut g, l, b, omega, mined).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut out = grads.get(l).into_data();
    out.extend(grads.get(b).into_data());
    out
}

/// Scores in `[-3, 3]` with labels, at least one positive.
fn segment(max_t: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
    (1..=max_t).prop_flat_map(|t| {
        (vec(-3.0..3.0f64, t), vec(-3.0..3.0f64, t), vec(any::<bool>(), t), 0..t).prop_map(|(l, b, mut y, p)| {
            y[p] = true;
            (l, b, y)
        })
    })
}

fn sort_oracle(b: &[f64], labels: &[bool], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..b.len()).filter(|&i| !labels[i]).collect();
    idx.sort_by(|&x, &y| b[y].total_cmp(&b[x]).then(x.cmp(&y)));
    let n_pos = labels.iter().filter(|&&y| y).count();
    idx.truncate((k * n_pos).min(idx.len()));
    idx
}

fn loss_fixed(x: &[f64], t: usize, omega: &[usize], mined: &[usize]) -> f64 {
    let (lr, br) = relative_degrees(&x[..t], &x[t..]);
    loss_from_degrees(&lr, &br, omega, mined)
}

/// Analytic gradient of the loss in `(l, b)` with fixed index sets.
fn loss_grad(x: &[f64], t: usize, omega: &[usize], mined: &[usize]) -> Vec<f64> {
    let (lr, br) = relative_degrees(&x[..t], &x[t..]);
    // dL/dl̃_i and dL/db̃_i
    let mut gl = vec![0.0; t];
    let mut gb = vec![0.0; t];
    for &i in omega.iter().chain(mined) {
        let w = 1.0 / (lr[i] + br[i] + 1e-12);
        gl[i] += w;
        gb[i] += w;
    }
    for &i in omega {
        gl[i] -= 1.0;
    }
    for &i in mined {
        gb[i] -= 1.0;
    }
    // softmax Jacobian
    let back = |p: &[f64], g: &[f64]| -> Vec<f64> {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)).collect()
    };
    let mut out = back(&lr, &gl);
    out.extend(back(&br, &gb));
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn loss_ignores_score_shifts((l, b, y) in segment(24), cl in -50.0..50.0f64, cb in -50.0..50.0f64) {
        let base = bidirectional_contrastive_loss(&l, &b, &y, 5).unwrap();
        let l2: Vec<f64> = l.iter().map(|v| v + cl).collect();
        let b2: Vec<f64> = b.iter().map(|v| v + cb).collect();
        let shifted = bidirectional_contrastive_loss(&l2, &b2, &y, 5).unwrap();
        prop_assert!((base.loss - shifted.loss).abs() < 1e-9);
        prop_assert_eq!(base.mined, shifted.mined);
    }

    #[test]
    fn mining_matches_sort((_, b, y) in segment(40), k in 1usize..7) {
        prop_assert_eq!(mine_hard_negatives(&b, &y, k).unwrap(), sort_oracle(&b, &y, k));
    }

    #[test]
    fn mining_with_ties_prefers_lower_index(levels in vec(0u8..3, 1..30), p in 0usize..30) {
        let b: Vec<f64> = levels.iter().map(|&v| v as f64).collect();
        let mut y = vec![false; b.len()];
        y[p % b.len()] = true;
        prop_assert_eq!(mine_hard_negatives(&b, &y, 2).unwrap(), sort_oracle(&b, &y, 2));
    }

    #[test]
    fn degrees_are_distributions((l, b, _) in segment(32), scale in 0.1..200.0f64) {
        let l: Vec<f64> = l.iter().map(|v| v * scale).collect();
        let (lr, br) = relative_degrees(&l, &b);
        for r in [&lr, &br] {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|v| *v >= 0.0 && *v <= 1.0));
        }
    }

    #[test]
    fn ap_invariant_under_monotone_maps(raw in vec(-100i32..100, 1..50), y in vec(any::<bool>(), 50)) {
        let y = &y[..raw.len()];
        let s: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
        let mapped: Vec<f64> = raw.iter().map(|&v| 3.0 * v as f64 - 7.0).collect();
        prop_assert_eq!(average_precision(&s, y), average_precision(&mapped, y));
        if let Some(ap) = average_precision(&s, y) {
            prop_assert!(ap > 0.0 && ap <= 1.0);
        }
    }

    #[test]
    fn ap_is_one_when_positives_lead(y in vec(any::<bool>(), 1..50)) {
        prop_assume!(y.iter().any(|&v| v));
        let s: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        prop_assert_eq!(average_precision(&s, &y), Some(1.0));
    }

    #[test]
    fn attention_is_convex(
        (s, hist) in (2usize..8, 1usize..6).prop_flat_map(|(d, n)| (vec(-1.0..1.0f64, d), vec(vec(-1.0..1.0f64, d), n))),
        lambda in 0.0..50.0f64,
    ) {
        let (pu, a) = user_preference(&s, &hist, lambda).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for c in 0..s.len() {
            let lo = hist.iter().map(|h| h[c]).fold(f64::INFINITY, f64::min);
            let hi = hist.iter().map(|h| h[c]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(pu[c] >= lo - 1e-9 && pu[c] <= hi + 1e-9);
        }
    }

    #[test]
    fn loss_gradient_matches_differences(x in vec(-2.0..2.0f64, 16), y in vec(any::<bool>(), 8), p in 0usize..8) {
        let mut y = y;
        y[p] = true;
        let t = 8;
        let omega = positives(&y);
        let mined = mine_hard_negatives(&x[t..], &y, 5).unwrap();
        let g = loss_grad(&x, t, &omega, &mined);
        let auto = engine_grad(&x, t, &omega, &mined);
        let h = 1e-4;
        for i in 0..2 * t {
            let at = |d: f64| {
                let mut z = x.clone();
                z[i] += d;
                loss_fixed(&z, t, &omega, &mined)
            };
            let fd = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
            prop_assert!((g[i] - fd).abs() <= 1e-6 * g[i].abs().max(1.0), "entry {}: {} vs {}", i, g[i], fd);
            prop_assert!((g[i] - auto[i]).abs() <= 1e-10 * g[i].abs().max(1.0), "entry {}: {} vs {}", i, g[i], auto[i]);
        }
    }

    #[test]
    fn descent_direction_lowers_loss(x in vec(-2.0..2.0f64, 16), y in vec(any::<bool>(), 8), p in 0usize..8) {
        let mut y = y;
        y[p] = true;
        let t = 8;
        let omega = positives(&y);
        let mined = mine_hard_negatives(&x[t..], &y, 5).unwrap();
        let g = loss_grad(&x, t, &omega, &mined);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-6);
        let step: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - 1e-5 * gi / norm).collect();
        prop_assert!(loss_fixed(&step, t, &omega, &mined) < loss_fixed(&x, t, &omega, &mined));
    }
}
