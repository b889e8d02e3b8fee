use serde::{Deserialize, Serialize};

use super::conv::{self, ConvGeom};
use super::tensor::strides;
use super::{AutogradError, Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Mish,
    Softplus,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Mean,
    Max,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    Reduce {
        input: Var,
        kind: ReduceKind,
        count: usize,
        /// For max: input offset that won each output element.
        winners: Vec<usize>,
        /// Output shape with reduced axes kept as size 1.
        kept: Vec<usize>,
    },
    Binary {
        lhs: Var,
        rhs: Var,
        kind: BinaryKind,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Concat {
        inputs: Vec<Var>,
    },
    GatherCells {
        input: Var,
        cells: Vec<(usize, usize)>,
    },
    NormalizeRows {
        input: Var,
        norms: Vec<T>,
    },
    MatMulNT {
        lhs: Var,
        rhs: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Tape of a single differentiable computation.
///
/// Nodes are appended in creation order, which is a topological order, so
/// [`Graph::backward`] simply walks the tape in reverse.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is accumulated by [`Graph::backward`].
    pub fn parameter(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a parameter leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Same-padded 2-D convolution of an `H x W x Cin` input with a
    /// `k x k x Cin x Cout` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var, AutogradError> {
        let x = self.value(input);
        let w = self.value(kernel);
        let b = self.value(bias);
        expect_rank("conv2d", "input", x, 3)?;
        expect_rank("conv2d", "kernel", w, 4)?;
        let (k, cin, cout) = check_kernel("conv2d", w)?;
        check_stride("conv2d", stride)?;
        expect_dim("conv2d", "input channels", cin, x.shape()[2])?;
        expect_dim("conv2d", "bias length", cout, b.numel())?;
        let geom = ConvGeom::same(x.shape()[0], x.shape()[1], cin, cout, k, stride);

        let mut out = bias_rows(b.data(), geom.patches());
        conv::conv_forward(x.data(), w.data(), &geom, &mut out);
        let value = Tensor::new(vec![geom.out_h, geom.out_w, cout], out)?;
        let rg = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Transposed convolution: the adjoint of a same-padded strided [`Graph::conv2d`].
    ///
    /// `input` is `h x w x Cin`, `kernel` is `k x k x Cout x Cin`; the output is
    /// `(h*stride) x (w*stride) x Cout`.
    pub fn conv2d_transpose(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var, AutogradError> {
        let x = self.value(input);
        let w = self.value(kernel);
        let b = self.value(bias);
        expect_rank("conv2d_transpose", "input", x, 3)?;
        expect_rank("conv2d_transpose", "kernel", w, 4)?;
        let (k, cout, cin) = check_kernel("conv2d_transpose", w)?;
        check_stride("conv2d_transpose", stride)?;
        expect_dim("conv2d_transpose", "input channels", cin, x.shape()[2])?;
        expect_dim("conv2d_transpose", "bias length", cout, b.numel())?;
        let (h, wd) = (x.shape()[0], x.shape()[1]);
        // Geometry of the forward convolution this op is the adjoint of.
        let geom = ConvGeom::same(h * stride, wd * stride, cout, cin, k, stride);

        let mut out = vec![T::zero(); geom.in_h * geom.in_w * cout];
        conv::conv_backward_data(x.data(), w.data(), &geom, &mut out);
        for px in out.chunks_exact_mut(cout) {
            for (o, &bv) in px.iter_mut().zip(b.data()) {
                *o = *o + bv;
            }
        }
        let value = Tensor::new(vec![geom.in_h, geom.in_w, cout], out)?;
        let rg = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| activate(kind, v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("shape preserved");
        let rg = self.any_grad(&[input]);
        self.push(value, Op::Activation { input, kind }, rg)
    }

    /// Reduction over `axes`, keeping reduced axes with size 1.
    pub fn reduce(&mut self, input: Var, kind: ReduceKind, axes: &[usize]) -> Result<Var, AutogradError> {
        let x = self.value(input);
        if axes.is_empty() {
            return Err(AutogradError::EmptyAxes);
        }
        let mut out_shape = x.shape().to_vec();
        for &a in axes {
            if a >= x.rank() {
                return Err(AutogradError::InvalidAxis { axis: a, rank: x.rank() });
            }
            out_shape[a] = 1;
        }
        let count = x.numel() / out_shape.iter().product::<usize>().max(1);
        if count == 0 {
            return Err(AutogradError::EmptyAxes);
        }
        let out_len: usize = out_shape.iter().product();
        let mut winners = Vec::new();
        let data = match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                let mut acc = vec![T::zero(); out_len];
                for (&v, o) in x.data().iter().zip(broadcast_offsets(x.shape(), &out_shape)) {
                    acc[o] = acc[o] + v;
                }
                if kind == ReduceKind::Mean {
                    let c = T::lit(count as f64);
                    acc.iter_mut().for_each(|a| *a = *a / c);
                }
                acc
            }
            ReduceKind::Max => {
                let mut best = vec![T::neg_infinity(); out_len];
                winners = vec![usize::MAX; out_len];
                for (i, (&v, o)) in x.data().iter().zip(broadcast_offsets(x.shape(), &out_shape)).enumerate() {
                    // strict comparison keeps the lowest linear index on ties
                    if winners[o] == usize::MAX || v > best[o] {
                        best[o] = v;
                        winners[o] = i;
                    }
                }
                best
            }
        };
        let value = Tensor::new(out_shape.clone(), data)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            value,
            Op::Reduce {
                input,
                kind,
                count,
                winners,
                kept: out_shape,
            },
            rg,
        ))
    }

    /// Sum of every element, as a `[1]` tensor.
    pub fn sum_all(&mut self, input: Var) -> Result<Var, AutogradError> {
        let rank = self.value(input).rank();
        let axes: Vec<usize> = (0..rank).collect();
        let r = self.reduce(input, ReduceKind::Sum, &axes)?;
        Ok(self.reshape_scalar(r))
    }

    fn reshape_scalar(&mut self, v: Var) -> Var {
        // a keepdims full reduction is already a single element; expose it as [1]
        let node = &mut self.nodes[v.0];
        node.value = Tensor::new(vec![1], node.value.data().to_vec()).expect("single element");
        v
    }

    /// Elementwise op with broadcasting restricted to equal-rank shapes whose
    /// axes either match or have size 1.
    pub fn binary(&mut self, lhs: Var, rhs: Var, kind: BinaryKind) -> Result<Var, AutogradError> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        let out_shape = broadcast_shape(a.shape(), b.shape())?;
        let f = |x: T, y: T| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let data: Vec<T> = if a.shape() == b.shape() {
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let (oa, ob) = (broadcast_offsets(&out_shape, a.shape()), broadcast_offsets(&out_shape, b.shape()));
            oa.iter().zip(&ob).map(|(&ia, &ib)| f(a.data()[ia], b.data()[ib])).collect()
        };
        let value = Tensor::new(out_shape, data)?;
        let rg = self.any_grad(&[lhs, rhs]);
        Ok(self.push(value, Op::Binary { lhs, rhs, kind }, rg))
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var, AutogradError> {
        self.binary(lhs, rhs, BinaryKind::Add)
    }

    pub fn sub(&mut self, lhs: Var, rhs: Var) -> Result<Var, AutogradError> {
        self.binary(lhs, rhs, BinaryKind::Sub)
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var, AutogradError> {
        self.binary(lhs, rhs, BinaryKind::Mul)
    }

    /// Affine map over the last axis: `x[..., in] * w[in, out] + b[out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, AutogradError> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        expect_rank("dense", "weight", w, 2)?;
        let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
        let last = *x.shape().last().ok_or(AutogradError::ShapeMismatch {
            op: "dense",
            what: "input rank",
            expected: 1,
            got: 0,
        })?;
        expect_dim("dense", "input features", n_in, last)?;
        expect_dim("dense", "bias length", n_out, b.numel())?;
        let rows = x.numel() / n_in;
        let mut out = bias_rows(b.data(), rows);
        conv::matmul(rows, n_in, n_out, x.data(), w.data(), &mut out, true);
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = n_out;
        let value = Tensor::new(shape, out)?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(value, Op::Dense { input, weight, bias }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("shape preserved");
        let rg = self.any_grad(&[input]);
        self.push(value, Op::Scale { input, factor }, rg)
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var, AutogradError> {
        let first = self.value(*inputs.first().ok_or(AutogradError::EmptyAxes)?);
        let lead = &first.shape()[..first.rank() - 1];
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let t = self.value(v);
            if t.rank() != first.rank() || &t.shape()[..t.rank() - 1] != lead {
                return Err(AutogradError::Broadcast {
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            widths.push(*t.shape().last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, &wd) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[r * wd..][..wd]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(value, Op::Concat { inputs: inputs.to_vec() }, rg))
    }

    /// Picks the feature vectors at `(row, col)` cells of an `h x w x D` map,
    /// giving an `N x D` matrix.
    pub fn gather_cells(&mut self, input: Var, cells: &[(usize, usize)]) -> Result<Var, AutogradError> {
        let x = self.value(input);
        expect_rank("gather_cells", "input", x, 3)?;
        let (h, w, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut out = Vec::with_capacity(cells.len() * d);
        for &(r, c) in cells {
            if r >= h || c >= w {
                return Err(AutogradError::CellOutOfRange { row: r, col: c, h, w });
            }
            out.extend_from_slice(&x.data()[(r * w + c) * d..][..d]);
        }
        let value = Tensor::new(vec![cells.len(), d], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            value,
            Op::GatherCells {
                input,
                cells: cells.to_vec(),
            },
            rg,
        ))
    }

    /// Scales every row of an `N x D` matrix to unit Euclidean length.
    pub fn normalize_rows(&mut self, input: Var) -> Result<Var, AutogradError> {
        let x = self.value(input);
        expect_rank("normalize_rows", "input", x, 2)?;
        let d = x.shape()[1];
        let mut norms = Vec::with_capacity(x.shape()[0]);
        let mut out = x.data().to_vec();
        for (i, row) in out.chunks_exact_mut(d).enumerate() {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if n == T::zero() {
                return Err(AutogradError::ZeroVector { row: i });
            }
            row.iter_mut().for_each(|v| *v = *v / n);
            norms.push(n);
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::NormalizeRows { input, norms }, rg))
    }

    /// `a[N x D] * b[M x D]^T`.
    pub fn matmul_nt(&mut self, lhs: Var, rhs: Var) -> Result<Var, AutogradError> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        expect_rank("matmul_nt", "lhs", a, 2)?;
        expect_rank("matmul_nt", "rhs", b, 2)?;
        expect_dim("matmul_nt", "inner dim", a.shape()[1], b.shape()[1])?;
        let (n, d, m) = (a.shape()[0], a.shape()[1], b.shape()[0]);
        let mut out = vec![T::zero(); n * m];
        conv::matmul_nt(n, d, m, a.data(), b.data(), &mut out, false);
        let value = Tensor::new(vec![n, m], out)?;
        let rg = self.any_grad(&[lhs, rhs]);
        Ok(self.push(value, Op::MatMulNT { lhs, rhs }, rg))
    }

    /// Reverse-mode sweep from a single-element `loss`.
    ///
    /// Gradients of parameter leaves accumulate across calls until
    /// [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), AutogradError> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(AutogradError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(dy) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut sink = Sink {
                nodes: &self.nodes,
                adj: &mut adj,
            };
            match &node.op {
                Op::Leaf => leaf_grads.push((i, dy)),
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    geom,
                } => {
                    let cout = geom.out_c;
                    if sink.wants(*bias) {
                        sink.add(*bias, column_sums(&dy, cout));
                    }
                    let w = &self.nodes[kernel.0].value;
                    if sink.wants(*kernel) {
                        let mut dw = vec![T::zero(); w.numel()];
                        conv::conv_backward_kernel(self.nodes[input.0].value.data(), &dy, geom, &mut dw);
                        sink.add(*kernel, dw);
                    }
                    if sink.wants(*input) {
                        let mut dx = vec![T::zero(); geom.in_h * geom.in_w * geom.in_c];
                        conv::conv_backward_data(&dy, w.data(), geom, &mut dx);
                        sink.add(*input, dx);
                    }
                }
                Op::ConvTranspose2d {
                    input,
                    kernel,
                    bias,
                    geom,
                } => {
                    // geom describes the forward conv: in = this op's output
                    let cout = geom.in_c;
                    let cin = geom.out_c;
                    if sink.wants(*bias) {
                        sink.add(*bias, column_sums(&dy, cout));
                    }
                    let w = &self.nodes[kernel.0].value;
                    if sink.wants(*kernel) {
                        let x = self.nodes[input.0].value.data();
                        let mut dw = vec![T::zero(); w.numel()];
                        conv::conv_backward_kernel(&dy, x, geom, &mut dw);
                        sink.add(*kernel, dw);
                    }
                    if sink.wants(*input) {
                        let mut dx = vec![T::zero(); geom.patches() * cin];
                        conv::conv_forward(&dy, w.data(), geom, &mut dx);
                        sink.add(*input, dx);
                    }
                }
                Op::Activation { input, kind } => {
                    let x = self.nodes[input.0].value.data();
                    let y = node.value.data();
                    let dx = dy
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(&g, (&xv, &yv))| g * activate_grad(*kind, xv, yv))
                        .collect();
                    sink.add(*input, dx);
                }
                Op::Reduce {
                    input,
                    kind,
                    count,
                    winners,
                    kept,
                } => {
                    let xs = self.nodes[input.0].value.shape();
                    let mut dx = vec![T::zero(); xs.iter().product()];
                    match kind {
                        ReduceKind::Max => {
                            for (&w, &g) in winners.iter().zip(&dy) {
                                dx[w] = dx[w] + g;
                            }
                        }
                        ReduceKind::Sum | ReduceKind::Mean => {
                            let s = if *kind == ReduceKind::Mean {
                                T::one() / T::lit(*count as f64)
                            } else {
                                T::one()
                            };
                            for (d, o) in dx.iter_mut().zip(broadcast_offsets(xs, kept)) {
                                *d = dy[o] * s;
                            }
                        }
                    }
                    sink.add(*input, dx);
                }
                Op::Binary { lhs, rhs, kind } => {
                    let a = &self.nodes[lhs.0].value;
                    let b = &self.nodes[rhs.0].value;
                    let out_shape = node.value.shape();
                    let want_a = sink.wants(*lhs);
                    let want_b = sink.wants(*rhs);
                    if a.shape() == b.shape() {
                        if want_a {
                            let v = match kind {
                                BinaryKind::Mul => dy.iter().zip(b.data()).map(|(&g, &y)| g * y).collect(),
                                _ => dy.clone(),
                            };
                            sink.add(*lhs, v);
                        }
                        if want_b {
                            let v = match kind {
                                BinaryKind::Add => dy.clone(),
                                BinaryKind::Sub => dy.iter().map(|&g| -g).collect(),
                                BinaryKind::Mul => dy.iter().zip(a.data()).map(|(&g, &x)| g * x).collect(),
                            };
                            sink.add(*rhs, v);
                        }
                        continue;
                    }
                    let mut da = want_a.then(|| vec![T::zero(); a.numel()]);
                    let mut db = want_b.then(|| vec![T::zero(); b.numel()]);
                    let (oa, ob) = (broadcast_offsets(out_shape, a.shape()), broadcast_offsets(out_shape, b.shape()));
                    for (&g, (&ia, &ib)) in dy.iter().zip(oa.iter().zip(&ob)) {
                        let (ga, gb) = match kind {
                            BinaryKind::Add => (g, g),
                            BinaryKind::Sub => (g, -g),
                            BinaryKind::Mul => (g * b.data()[ib], g * a.data()[ia]),
                        };
                        if let Some(da) = da.as_mut() {
                            da[ia] = da[ia] + ga;
                        }
                        if let Some(db) = db.as_mut() {
                            db[ib] = db[ib] + gb;
                        }
                    }
                    if let Some(da) = da {
                        sink.add(*lhs, da);
                    }
                    if let Some(db) = db {
                        sink.add(*rhs, db);
                    }
                }
                Op::Dense { input, weight, bias } => {
                    let x = &self.nodes[input.0].value;
                    let w = &self.nodes[weight.0].value;
                    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
                    let rows = x.numel() / n_in;
                    if sink.wants(*bias) {
                        sink.add(*bias, column_sums(&dy, n_out));
                    }
                    if sink.wants(*weight) {
                        let mut dw = vec![T::zero(); w.numel()];
                        conv::matmul_tn(n_in, rows, n_out, x.data(), &dy, &mut dw, false);
                        sink.add(*weight, dw);
                    }
                    if sink.wants(*input) {
                        let mut dx = vec![T::zero(); x.numel()];
                        conv::matmul_nt(rows, n_out, n_in, &dy, w.data(), &mut dx, false);
                        sink.add(*input, dx);
                    }
                }
                Op::Scale { input, factor } => {
                    sink.add(*input, dy.iter().map(|&g| g * *factor).collect());
                }
                Op::Concat { inputs } => {
                    let total = *node.value.shape().last().unwrap();
                    let rows = node.value.numel() / total;
                    let mut start = 0;
                    for &v in inputs {
                        let wd = *self.nodes[v.0].value.shape().last().unwrap();
                        if sink.wants(v) {
                            let mut dx = Vec::with_capacity(rows * wd);
                            for r in 0..rows {
                                dx.extend_from_slice(&dy[r * total + start..][..wd]);
                            }
                            sink.add(v, dx);
                        }
                        start += wd;
                    }
                }
                Op::GatherCells { input, cells } => {
                    let x = &self.nodes[input.0].value;
                    let (w, d) = (x.shape()[1], x.shape()[2]);
                    let mut dx = vec![T::zero(); x.numel()];
                    for (k, &(r, c)) in cells.iter().enumerate() {
                        let dst = &mut dx[(r * w + c) * d..][..d];
                        for (o, &g) in dst.iter_mut().zip(&dy[k * d..][..d]) {
                            *o = *o + g;
                        }
                    }
                    sink.add(*input, dx);
                }
                Op::NormalizeRows { input, norms } => {
                    let y = node.value.data();
                    let d = node.value.shape()[1];
                    let mut dx = Vec::with_capacity(y.len());
                    for ((yr, gr), &n) in y.chunks_exact(d).zip(dy.chunks_exact(d)).zip(norms) {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        dx.extend(yr.iter().zip(gr).map(|(&yv, &g)| (g - yv * dot) / n));
                    }
                    sink.add(*input, dx);
                }
                Op::MatMulNT { lhs, rhs } => {
                    let a = &self.nodes[lhs.0].value;
                    let b = &self.nodes[rhs.0].value;
                    let (n, d, m) = (a.shape()[0], a.shape()[1], b.shape()[0]);
                    if sink.wants(*lhs) {
                        let mut da = vec![T::zero(); n * d];
                        conv::matmul(n, m, d, &dy, b.data(), &mut da, false);
                        sink.add(*lhs, da);
                    }
                    if sink.wants(*rhs) {
                        let mut db = vec![T::zero(); m * d];
                        conv::matmul_tn(m, n, d, &dy, a.data(), &mut db, false);
                        sink.add(*rhs, db);
                    }
                }
            }
        }

        for (i, g) in leaf_grads {
            let node = &mut self.nodes[i];
            match node.grad.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &v)| *a = *a + v),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }
}

struct Sink<'a, T> {
    nodes: &'a [Node<T>],
    adj: &'a mut [Option<Vec<T>>],
}

impl<T: Scalar> Sink<'_, T> {
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn add(&mut self, v: Var, contribution: Vec<T>) {
        if !self.wants(v) {
            return;
        }
        match self.adj[v.0].as_mut() {
            Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, &c)| *a = *a + c),
            None => self.adj[v.0] = Some(contribution),
        }
    }
}

pub(crate) fn activate<T: Scalar>(kind: Activation, x: T) -> T {
    match kind {
        Activation::Sigmoid => sigmoid(x),
        Activation::Tanh => x.tanh(),
        Activation::Relu => x.max(T::zero()),
        Activation::Softplus => softplus(x),
        Activation::Mish => x * mish_tanh(x).0,
        Activation::Linear => x,
    }
}

fn activate_grad<T: Scalar>(kind: Activation, x: T, y: T) -> T {
    match kind {
        Activation::Sigmoid => y * (T::one() - y),
        Activation::Tanh => T::one() - y * y,
        Activation::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Activation::Softplus => sigmoid(x),
        Activation::Mish => {
            let (t, s) = mish_tanh(x);
            t + x * (T::one() - t * t) * s
        }
        Activation::Linear => T::one(),
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `(tanh(softplus(x)), sigmoid(x))` from a single exponential.
fn mish_tanh<T: Scalar>(x: T) -> (T, T) {
    if x > T::lit(20.0) {
        return (T::one(), T::one());
    }
    let e = x.exp();
    let n = e * (e + T::lit(2.0));
    (n / (n + T::lit(2.0)), e / (T::one() + e))
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn bias_rows<T: Scalar>(bias: &[T], rows: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * bias.len());
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    out
}

fn column_sums<T: Scalar>(m: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for row in m.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    out
}

fn expect_rank<T: Scalar>(op: &'static str, what: &'static str, t: &Tensor<T>, rank: usize) -> Result<(), AutogradError> {
    if t.rank() != rank {
        return Err(AutogradError::Rank {
            op,
            what,
            expected: rank,
            shape: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn expect_dim(op: &'static str, what: &'static str, expected: usize, got: usize) -> Result<(), AutogradError> {
    if expected != got {
        return Err(AutogradError::ShapeMismatch {
            op,
            what,
            expected,
            got,
        });
    }
    Ok(())
}

fn check_kernel<T: Scalar>(op: &'static str, w: &Tensor<T>) -> Result<(usize, usize, usize), AutogradError> {
    let s = w.shape();
    expect_dim(op, "kernel width", s[0], s[1])?;
    if s[0].is_multiple_of(2) {
        return Err(AutogradError::EvenKernel { op, size: s[0] });
    }
    Ok((s[0], s[2], s[3]))
}

fn check_stride(op: &'static str, stride: usize) -> Result<(), AutogradError> {
    if stride == 1 || stride == 2 {
        Ok(())
    } else {
        Err(AutogradError::Stride { op, stride })
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>, AutogradError> {
    let err = || AutogradError::Broadcast {
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() != b.len() {
        return Err(err());
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(err()),
        })
        .collect()
}

/// Walks `shape` in row-major order yielding the linear offset of the
/// matching element in a tensor of `src` shape, where size-1 axes of `src`
/// are broadcast.
/// Offset into a `src`-shaped buffer for every element of `shape`, where `src`
/// has the same rank and each axis either matches or is 1.
fn broadcast_offsets(shape: &[usize], src: &[usize]) -> Vec<usize> {
    let full = strides(src);
    let st: Vec<usize> = shape
        .iter()
        .zip(src.iter().zip(full))
        .map(|(&d, (&s, st))| if s == 1 && d != 1 { 0 } else { st })
        .collect();
    let total: usize = shape.iter().product();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    let rank = shape.len();
    let (last, last_st) = (shape[rank - 1], st[rank - 1]);
    let mut index = vec![0usize; rank.saturating_sub(1)];
    let mut base = 0usize;
    for _ in 0..total / last {
        out.extend((0..last).map(|j| base + j * last_st));
        for ax in (0..rank - 1).rev() {
            index[ax] += 1;
            base += st[ax];
            if index[ax] < shape[ax] {
                break;
            }
            base -= st[ax] * index[ax];
            index[ax] = 0;
        }
    }
    out
}
