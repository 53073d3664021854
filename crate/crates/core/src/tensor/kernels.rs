//! Raw slice kernels shared by the forward and backward passes.
//!
//! Accumulation order is fixed everywhere so that identical inputs give
//! bit-identical outputs regardless of thread count.

use super::Real;

pub fn transpose<F: Real>(src: &[F], rows: usize, cols: usize, dst: &mut [F]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// `out += a (m×k) · b (k×n)`. Each output element accumulates in ascending `k`.
pub fn matmul_acc<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += aᵀ · b` where `a` is `k×m` and `b` is `k×n`.
pub fn matmul_tn_acc<F: Real>(a: &[F], b: &[F], k: usize, m: usize, n: usize, out: &mut [F]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == F::zero() {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` where `a` is `m×k` and `b` is `n×k`.
pub fn matmul_nt_acc<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Dot product with eight independent partial sums, combined in a fixed order.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = F::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Geometry of a zero-padded 1-D convolution over a `[channels, time]` input.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Output positions `t` for which input index `t*stride + tap - pad` is in range.
    #[inline]
    fn valid_range(&self, tap: usize) -> (usize, usize) {
        let off = tap as isize - self.pad as isize;
        let s = self.stride as isize;
        // smallest t with t*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest t with t*s + off <= t_in - 1
        let last = self.t_in as isize - 1 - off;
        let hi = if last < 0 {
            0
        } else {
            (last / s + 1).min(self.t_out as isize)
        };
        let lo = lo.min(hi);
        (lo as usize, hi as usize)
    }

    #[inline]
    fn src(&self, t: usize, tap: usize) -> usize {
        (t * self.stride + tap) - self.pad
    }
}

pub fn conv1d_forward<F: Real>(x: &[F], w: &[F], bias: Option<&[F]>, g: &ConvGeom, out: &mut [F]) {
    for co in 0..g.c_out {
        let orow = &mut out[co * g.t_out..(co + 1) * g.t_out];
        if let Some(b) = bias {
            orow.iter_mut().for_each(|o| *o = b[co]);
        }
        for ci in 0..g.c_in {
            let xrow = &x[ci * g.t_in..(ci + 1) * g.t_in];
            for tap in 0..g.k {
                let wv = w[(co * g.c_in + ci) * g.k + tap];
                let (lo, hi) = g.valid_range(tap);
                if lo >= hi {
                    continue;
                }
                if g.stride == 1 {
                    let s0 = g.src(lo, tap);
                    let xs = &xrow[s0..s0 + (hi - lo)];
                    for (o, &xv) in orow[lo..hi].iter_mut().zip(xs) {
                        *o += wv * xv;
                    }
                } else {
                    for t in lo..hi {
                        orow[t] += wv * xrow[g.src(t, tap)];
                    }
                }
            }
        }
    }
}

/// Accumulates input, weight, and bias gradients of a convolution.
pub fn conv1d_backward<F: Real>(
    x: &[F],
    w: &[F],
    dy: &[F],
    g: &ConvGeom,
    dx: Option<&mut [F]>,
    dw: Option<&mut [F]>,
    db: Option<&mut [F]>,
) {
    if let Some(db) = db {
        for co in 0..g.c_out {
            db[co] += dy[co * g.t_out..(co + 1) * g.t_out].iter().copied().sum::<F>();
        }
    }
    if let Some(dw) = dw {
        for co in 0..g.c_out {
            let dyrow = &dy[co * g.t_out..(co + 1) * g.t_out];
            for ci in 0..g.c_in {
                let xrow = &x[ci * g.t_in..(ci + 1) * g.t_in];
                for tap in 0..g.k {
                    let (lo, hi) = g.valid_range(tap);
                    if lo >= hi {
                        continue;
                    }
                    let acc = if g.stride == 1 {
                        let s0 = g.src(lo, tap);
                        dot(&dyrow[lo..hi], &xrow[s0..s0 + (hi - lo)])
                    } else {
                        let mut a = F::zero();
                        for t in lo..hi {
                            a += dyrow[t] * xrow[g.src(t, tap)];
                        }
                        a
                    };
                    dw[(co * g.c_in + ci) * g.k + tap] += acc;
                }
            }
        }
    }
    if let Some(dx) = dx {
        for co in 0..g.c_out {
            let dyrow = &dy[co * g.t_out..(co + 1) * g.t_out];
            for ci in 0..g.c_in {
                let dxrow = &mut dx[ci * g.t_in..(ci + 1) * g.t_in];
                for tap in 0..g.k {
                    let wv = w[(co * g.c_in + ci) * g.k + tap];
                    let (lo, hi) = g.valid_range(tap);
                    if lo >= hi {
                        continue;
                    }
                    if g.stride == 1 {
                        let s0 = g.src(lo, tap);
                        for (d, &dyv) in dxrow[s0..s0 + (hi - lo)].iter_mut().zip(&dyrow[lo..hi]) {
                            *d += wv * dyv;
                        }
                    } else {
                        for t in lo..hi {
                            dxrow[g.src(t, tap)] += wv * dyrow[t];
                        }
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax of a strided lane, in place.
pub fn softmax_lane<F: Real>(data: &mut [F], start: usize, len: usize, step: usize) {
    let mut max = F::neg_infinity();
    for i in 0..len {
        max = max.max(data[start + i * step]);
    }
    let mut sum = F::zero();
    for i in 0..len {
        let e = (data[start + i * step] - max).exp();
        data[start + i * step] = e;
        sum += e;
    }
    for i in 0..len {
        data[start + i * step] /= sum;
    }
}

/// Softmax of a plain slice into a new vector.
pub fn softmax<F: Real>(values: &[F]) -> Vec<F> {
    let mut out = values.to_vec();
    let n = out.len();
    softmax_lane(&mut out, 0, n, 1);
    out
}
