use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Relu(Var),
    Softmax(Var, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, F),
    Mul(Var, Var),
    Concat(Vec<Var>, usize),
    Mean(Var, usize),
    Sum(Var, usize),
    SumAll(Var),
    Dot(Var, Var),
    L2Norm(Var, usize),
    SafeRecip(Var),
    Exp(Var),
    Log(Var),
    Upsample(Var, usize),
    Gather(Var, usize, Vec<usize>),
    PadEdge(Var, usize),
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Append-only record of tensor operations. Creation order is a topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

/// Gradients of a scalar with respect to every node of the graph.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient for `v`; zeros if `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Tensor<F> {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<F> {
        let shape = self.shapes[v.0].clone();
        match self.grads[v.0].take() {
            Some(g) => Tensor::new(shape, g).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

fn rank2<F: Real>(op: &'static str, t: &Tensor<F>) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::shape(op, format!("expected rank-2 input, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn check_axis(op: &'static str, axis: usize) -> Result<()> {
    if axis > 1 {
        return Err(Error::shape(op, format!("axis {axis} out of range for rank 2")));
    }
    Ok(())
}

fn same_shape<F: Real>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Registers an input tensor.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, op: Op<F>, f: impl Fn(F) -> F) -> Var {
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("unary shape");
        self.push(value, op, &[x])
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, op: Op<F>, f: impl Fn(F, F) -> F) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_shape(op_name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    /// `a (m×k) · b (k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = rank2("matmul", self.value(a))?;
        let (k2, n) = rank2("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} · {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut out = vec![F::zero(); m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        rank2("transpose", self.value(x))?;
        let value = self.value(x).transposed();
        Ok(self.push(value, Op::Transpose(x), &[x]))
    }

    /// 1-D convolution of `x: [c_in, T]` with `w: [c_out, c_in, k]` and optional
    /// bias `b: [c_out]`, zero padding `pad` on both ends.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (c_in, t_in) = rank2("conv1d", self.value(x))?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 3 || ws[1] != c_in {
            return Err(Error::shape(
                "conv1d",
                format!("input {:?} with kernel {ws:?}", self.value(x).shape()),
            ));
        }
        let (c_out, k) = (ws[0], ws[2]);
        if stride == 0 || t_in + 2 * pad < k {
            return Err(Error::shape(
                "conv1d",
                format!("length {t_in} too short for kernel {k} (pad {pad}, stride {stride})"),
            ));
        }
        if let Some(b) = b {
            if self.value(b).len() != c_out {
                return Err(Error::shape(
                    "conv1d",
                    format!("bias {:?} for {c_out} output channels", self.value(b).shape()),
                ));
            }
        }
        let t_out = (t_in + 2 * pad - k) / stride + 1;
        let geom = ConvGeom {
            c_in,
            c_out,
            k,
            t_in,
            t_out,
            stride,
            pad,
        };
        let mut out = vec![F::zero(); c_out * t_out];
        kernels::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
            &mut out,
        );
        let value = Tensor::new(vec![c_out, t_out], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Conv1d { x, w, b, geom }, &inputs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > F::zero() { v } else { F::zero() })
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        check_axis("softmax", axis)?;
        let (r, c) = rank2("softmax", self.value(x))?;
        let mut data = self.value(x).data().to_vec();
        if axis == 1 {
            for i in 0..r {
                kernels::softmax_lane(&mut data, i * c, c, 1);
            }
        } else {
            for j in 0..c {
                kernels::softmax_lane(&mut data, j, r, c);
            }
        }
        let value = Tensor::new(vec![r, c], data)?;
        Ok(self.push(value, Op::Softmax(x, axis), &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    /// Concatenates rank-2 tensors along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        check_axis("concat", axis)?;
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let shapes: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| rank2("concat", self.value(p)))
            .collect::<Result<_>>()?;
        let keep = if axis == 0 { shapes[0].1 } else { shapes[0].0 };
        if shapes
            .iter()
            .any(|&(r, c)| if axis == 0 { c != keep } else { r != keep })
        {
            return Err(Error::shape(
                "concat",
                format!("incompatible shapes {shapes:?} on axis {axis}"),
            ));
        }
        let value = if axis == 0 {
            let rows = shapes.iter().map(|s| s.0).sum();
            let mut data = Vec::with_capacity(rows * keep);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::new(vec![rows, keep], data)?
        } else {
            let cols: usize = shapes.iter().map(|s| s.1).sum();
            let mut data = Vec::with_capacity(keep * cols);
            for r in 0..keep {
                for (&p, &(_, c)) in parts.iter().zip(&shapes) {
                    data.extend_from_slice(&self.value(p).data()[r * c..(r + 1) * c]);
                }
            }
            Tensor::new(vec![keep, cols], data)?
        };
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), parts))
    }

    fn reduce(&mut self, op_name: &'static str, x: Var, axis: usize, op: Op<F>, mean: bool) -> Result<Var> {
        check_axis(op_name, axis)?;
        let (r, c) = rank2(op_name, self.value(x))?;
        let src = self.value(x).data();
        let value = if axis == 0 {
            let mut out = vec![F::zero(); c];
            for i in 0..r {
                for (o, &v) in out.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                    *o += v;
                }
            }
            if mean {
                let n = F::of(r as f64);
                out.iter_mut().for_each(|o| *o /= n);
            }
            Tensor::new(vec![1, c], out)?
        } else {
            let mut out = vec![F::zero(); r];
            for (i, o) in out.iter_mut().enumerate() {
                let mut acc = F::zero();
                for &v in &src[i * c..(i + 1) * c] {
                    acc += v;
                }
                *o = if mean { acc / F::of(c as f64) } else { acc };
            }
            Tensor::new(vec![r, 1], out)?
        };
        Ok(self.push(value, op, &[x]))
    }

    /// Mean over `axis`, keeping it as extent 1.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce("mean", x, axis, Op::Mean(x, axis), true)
    }

    /// Sum over `axis`, keeping it as extent 1.
    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce("sum", x, axis, Op::Sum(x, axis), false)
    }

    /// Sum of all elements as a `[1, 1]` scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut acc = F::zero();
        for &v in self.value(x).data() {
            acc += v;
        }
        self.push(Tensor::scalar(acc), Op::SumAll(x), &[x])
    }

    /// Inner product of two same-shaped tensors as a `[1, 1]` scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("dot", self.value(a), self.value(b))?;
        let mut acc = F::zero();
        for (&x, &y) in self.value(a).data().iter().zip(self.value(b).data()) {
            acc += x * y;
        }
        Ok(self.push(Tensor::scalar(acc), Op::Dot(a, b), &[a, b]))
    }

    /// Euclidean norm over `axis`, keeping it as extent 1.
    pub fn l2norm(&mut self, x: Var, axis: usize) -> Result<Var> {
        check_axis("l2norm", axis)?;
        let (r, c) = rank2("l2norm", self.value(x))?;
        let src = self.value(x).data();
        let value = if axis == 0 {
            let mut out = vec![F::zero(); c];
            for i in 0..r {
                for (o, &v) in out.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                    *o += v * v;
                }
            }
            out.iter_mut().for_each(|o| *o = o.sqrt());
            Tensor::new(vec![1, c], out)?
        } else {
            let out = (0..r)
                .map(|i| {
                    let mut acc = F::zero();
                    for &v in &src[i * c..(i + 1) * c] {
                        acc += v * v;
                    }
                    acc.sqrt()
                })
                .collect();
            Tensor::new(vec![r, 1], out)?
        };
        Ok(self.push(value, Op::L2Norm(x, axis), &[x]))
    }

    /// Elementwise `1/x`, defined as 0 where `x == 0`.
    pub fn safe_recip(&mut self, x: Var) -> Var {
        self.unary(
            x,
            Op::SafeRecip(x),
            |v| if v == F::zero() { F::zero() } else { v.recip() },
        )
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), |v| v.exp())
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some((i, v)) = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| v.is_nan() || **v <= F::zero())
        {
            return Err(Error::LogDomain {
                index: i,
                value: v.f64(),
            });
        }
        Ok(self.unary(x, Op::Log(x), |v| v.ln()))
    }

    /// Nearest-neighbour upsampling along the time axis (axis 1).
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (r, c) = rank2("upsample", self.value(x))?;
        if factor == 0 {
            return Err(Error::shape("upsample", "factor must be positive"));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * c * factor);
        for i in 0..r {
            for &v in &src[i * c..(i + 1) * c] {
                for _ in 0..factor {
                    data.push(v);
                }
            }
        }
        let value = Tensor::new(vec![r, c * factor], data)?;
        Ok(self.push(value, Op::Upsample(x, factor), &[x]))
    }

    /// Selects `indices` along `axis`, in the given order.
    pub fn gather(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        check_axis("gather", axis)?;
        let (r, c) = rank2("gather", self.value(x))?;
        let extent = if axis == 0 { r } else { c };
        if indices.is_empty() || indices.iter().any(|&i| i >= extent) {
            return Err(Error::shape(
                "gather",
                format!("indices {indices:?} invalid for extent {extent}"),
            ));
        }
        let src = self.value(x).data();
        let value = if axis == 0 {
            let mut data = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                data.extend_from_slice(&src[i * c..(i + 1) * c]);
            }
            Tensor::new(vec![indices.len(), c], data)?
        } else {
            let mut data = Vec::with_capacity(r * indices.len());
            for i in 0..r {
                for &j in indices {
                    data.push(src[i * c + j]);
                }
            }
            Tensor::new(vec![r, indices.len()], data)?
        };
        Ok(self.push(value, Op::Gather(x, axis, indices.to_vec()), &[x]))
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (r, c) = rank2("slice", self.value(x))?;
        check_axis("slice", axis)?;
        let extent = if axis == 0 { r } else { c };
        if len == 0 || start + len > extent {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} outside extent {extent}", start + len),
            ));
        }
        let indices: Vec<usize> = (start..start + len).collect();
        let src = self.value(x).data();
        let value = if axis == 0 {
            Tensor::new(vec![len, c], src[start * c..(start + len) * c].to_vec())?
        } else {
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&src[i * c + start..i * c + start + len]);
            }
            Tensor::new(vec![r, len], data)?
        };
        Ok(self.push(value, Op::Gather(x, axis, indices), &[x]))
    }

    /// Appends `extra` copies of the last column (edge replication along time).
    pub fn pad_edge(&mut self, x: Var, extra: usize) -> Result<Var> {
        let (r, c) = rank2("pad_edge", self.value(x))?;
        if extra == 0 {
            return Ok(x);
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * (c + extra));
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            data.extend_from_slice(row);
            data.extend(std::iter::repeat_n(row[c - 1], extra));
        }
        let value = Tensor::new(vec![r, c + extra], data)?;
        Ok(self.push(value, Op::PadEdge(x, extra), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Sign pattern (`input > 0`) of every relu in creation order.
    ///
    /// Finite-difference checks compare this before and after a perturbation to
    /// make sure the probe stayed on one linear piece.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.nodes[x.0].value.data().iter().map(|&v| v > F::zero()));
            }
        }
        out
    }

    /// Reverse-mode pass from a scalar `loss`.
    ///
    /// Nodes are visited exactly once, in reverse creation order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<F>>> = vec![None; n];
        grads[loss.0] = Some(vec![F::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.propagate(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| if node.needs_grad { g } else { None })
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, dy: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;

        // Returns the accumulator for `v`, creating a zero buffer on first use.
        fn acc<F: Real>(grads: &mut [Option<Vec<F>>], v: Var, len: usize) -> &mut Vec<F> {
            grads[v.0].get_or_insert_with(|| vec![F::zero(); len])
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                if wants(*a) {
                    let g = acc(grads, *a, m * k);
                    kernels::matmul_nt_acc(dy, val(*b).data(), m, n, k, g);
                }
                if wants(*b) {
                    let g = acc(grads, *b, k * n);
                    kernels::matmul_tn_acc(val(*a).data(), dy, m, k, n, g);
                }
            }
            Op::Transpose(x) => {
                if wants(*x) {
                    let (r, c) = (val(*x).rows(), val(*x).cols());
                    let mut t = vec![F::zero(); r * c];
                    kernels::transpose(dy, c, r, &mut t);
                    let g = acc(grads, *x, r * c);
                    g.iter_mut().zip(t).for_each(|(g, d)| *g += d);
                }
            }
            Op::Conv1d { x, w, b, geom } => {
                let mut dx = wants(*x).then(|| grads[x.0].take().unwrap_or_else(|| vec![F::zero(); val(*x).len()]));
                let mut dw = wants(*w).then(|| grads[w.0].take().unwrap_or_else(|| vec![F::zero(); val(*w).len()]));
                let mut db = b
                    .filter(|b| wants(*b))
                    .map(|b| grads[b.0].take().unwrap_or_else(|| vec![F::zero(); val(b).len()]));
                kernels::conv1d_backward(
                    val(*x).data(),
                    val(*w).data(),
                    dy,
                    geom,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(d) = dx {
                    grads[x.0] = Some(d);
                }
                if let Some(d) = dw {
                    grads[w.0] = Some(d);
                }
                if let (Some(b), Some(d)) = (b, db) {
                    grads[b.0] = Some(d);
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    let xs = val(*x).data();
                    let g = acc(grads, *x, xs.len());
                    for ((g, &d), &xv) in g.iter_mut().zip(dy).zip(xs) {
                        if xv > F::zero() {
                            *g += d;
                        }
                    }
                }
            }
            Op::Softmax(x, axis) => {
                if wants(*x) {
                    let (r, c) = (y.rows(), y.cols());
                    let ys = y.data();
                    let g = acc(grads, *x, r * c);
                    let (lanes, len, lane_stride, step) = if *axis == 1 { (r, c, c, 1) } else { (c, r, 1, c) };
                    for lane in 0..lanes {
                        let start = lane * lane_stride;
                        let mut inner = F::zero();
                        for i in 0..len {
                            let p = start + i * step;
                            inner += dy[p] * ys[p];
                        }
                        for i in 0..len {
                            let p = start + i * step;
                            g[p] += ys[p] * (dy[p] - inner);
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -F::one()
                } else {
                    F::one()
                };
                if wants(*a) {
                    let g = acc(grads, *a, dy.len());
                    g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d);
                }
                if wants(*b) {
                    let g = acc(grads, *b, dy.len());
                    g.iter_mut().zip(dy).for_each(|(g, &d)| *g += sign * d);
                }
            }
            Op::Scale(x, c) => {
                if wants(*x) {
                    let g = acc(grads, *x, dy.len());
                    g.iter_mut().zip(dy).for_each(|(g, &d)| *g += *c * d);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bs = val(*b).data();
                    let g = acc(grads, *a, dy.len());
                    for ((g, &d), &bv) in g.iter_mut().zip(dy).zip(bs) {
                        *g += d * bv;
                    }
                }
                if wants(*b) {
                    let as_ = val(*a).data();
                    let g = acc(grads, *b, dy.len());
                    for ((g, &d), &av) in g.iter_mut().zip(dy).zip(as_) {
                        *g += d * av;
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let total_cols = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = (val(p).rows(), val(p).cols());
                    if wants(p) {
                        let g = acc(grads, p, r * c);
                        if *axis == 0 {
                            let src = &dy[offset * total_cols..(offset + r) * total_cols];
                            g.iter_mut().zip(src).for_each(|(g, &d)| *g += d);
                        } else {
                            for i in 0..r {
                                for j in 0..c {
                                    g[i * c + j] += dy[i * total_cols + offset + j];
                                }
                            }
                        }
                    }
                    offset += if *axis == 0 { r } else { c };
                }
            }
            Op::Mean(x, axis) | Op::Sum(x, axis) => {
                if wants(*x) {
                    let (r, c) = (val(*x).rows(), val(*x).cols());
                    let scale = match node.op {
                        Op::Mean(..) => F::one() / F::of(if *axis == 0 { r } else { c } as f64),
                        _ => F::one(),
                    };
                    let g = acc(grads, *x, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            let d = if *axis == 0 { dy[j] } else { dy[i] };
                            g[i * c + j] += d * scale;
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if wants(*x) {
                    let g = acc(grads, *x, val(*x).len());
                    g.iter_mut().for_each(|g| *g += dy[0]);
                }
            }
            Op::Dot(a, b) => {
                if wants(*a) {
                    let bs = val(*b).data();
                    let g = acc(grads, *a, bs.len());
                    g.iter_mut().zip(bs).for_each(|(g, &bv)| *g += dy[0] * bv);
                }
                if wants(*b) {
                    let as_ = val(*a).data();
                    let g = acc(grads, *b, as_.len());
                    g.iter_mut().zip(as_).for_each(|(g, &av)| *g += dy[0] * av);
                }
            }
            Op::L2Norm(x, axis) => {
                if wants(*x) {
                    let xs = val(*x).data();
                    let (r, c) = (val(*x).rows(), val(*x).cols());
                    let norms = y.data();
                    let g = acc(grads, *x, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            let k = if *axis == 0 { j } else { i };
                            if norms[k] > F::zero() {
                                g[i * c + j] += dy[k] * xs[i * c + j] / norms[k];
                            }
                        }
                    }
                }
            }
            Op::SafeRecip(x) => {
                if wants(*x) {
                    let xs = val(*x).data();
                    let g = acc(grads, *x, xs.len());
                    for ((g, &d), &xv) in g.iter_mut().zip(dy).zip(xs) {
                        if xv != F::zero() {
                            *g -= d / (xv * xv);
                        }
                    }
                }
            }
            Op::Exp(x) => {
                if wants(*x) {
                    let g = acc(grads, *x, dy.len());
                    for ((g, &d), &yv) in g.iter_mut().zip(dy).zip(y.data()) {
                        *g += d * yv;
                    }
                }
            }
            Op::Log(x) => {
                if wants(*x) {
                    let xs = val(*x).data();
                    let g = acc(grads, *x, xs.len());
                    for ((g, &d), &xv) in g.iter_mut().zip(dy).zip(xs) {
                        *g += d / xv;
                    }
                }
            }
            Op::Upsample(x, factor) => {
                if wants(*x) {
                    let (r, c) = (val(*x).rows(), val(*x).cols());
                    let g = acc(grads, *x, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            let base = i * c * factor + j * factor;
                            let mut s = F::zero();
                            for f in 0..*factor {
                                s += dy[base + f];
                            }
                            g[i * c + j] += s;
                        }
                    }
                }
            }
            Op::Gather(x, axis, indices) => {
                if wants(*x) {
                    let (r, c) = (val(*x).rows(), val(*x).cols());
                    let g = acc(grads, *x, r * c);
                    let k = indices.len();
                    if *axis == 0 {
                        for (o, &i) in indices.iter().enumerate() {
                            for j in 0..c {
                                g[i * c + j] += dy[o * c + j];
                            }
                        }
                    } else {
                        for i in 0..r {
                            for (o, &j) in indices.iter().enumerate() {
                                g[i * c + j] += dy[i * k + o];
                            }
                        }
                    }
                }
            }
            Op::PadEdge(x, extra) => {
                if wants(*x) {
                    let (r, c) = (val(*x).rows(), val(*x).cols());
                    let w = c + extra;
                    let g = acc(grads, *x, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += dy[i * w + j];
                        }
                        for j in c..w {
                            g[i * c + c - 1] += dy[i * w + j];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if wants(*x) {
                    let g = acc(grads, *x, dy.len());
                    g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d);
                }
            }
        }
    }
}
