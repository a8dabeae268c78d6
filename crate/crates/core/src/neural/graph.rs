//! Single-sample computation tape with reverse-mode differentiation.
//!
//! Parameters are borrowed from [`ParamSet`]s bound to the graph; a set bound
//! as non-trainable still propagates gradients *through* its layers (so a
//! frozen network can sit downstream of a trainable one) but never
//! accumulates gradients for its own weights.

use std::borrow::Cow;

use super::nets::ParamSet;
use super::ops::{col2im, im2col, matmul, ConvGeom};
use super::{NeuralError, Scalar};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Handle to a parameter set bound to a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SetHandle(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Elu => {
                if x > T::zero() {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
        }
    }

    /// Derivative expressed through the output `y`.
    #[inline]
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Elu => {
                if x > T::zero() {
                    T::one()
                } else {
                    y + T::one()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

enum Op<T> {
    Input,
    Param {
        set: usize,
        index: usize,
    },
    Conv {
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeom,
        out_channels: usize,
        cols: Vec<T>,
    },
    ConvTranspose {
        x: usize,
        w: usize,
        b: usize,
        /// Convolution geometry from this op's output back to its input.
        geom: ConvGeom,
        in_channels: usize,
    },
    Dense {
        x: usize,
        w: usize,
        b: usize,
    },
    Act {
        x: usize,
        kind: Activation,
    },
    Affine {
        x: usize,
        scale: T,
    },
    Sum {
        x: usize,
    },
    HalfSquaredNorm {
        x: usize,
    },
    SquaredError {
        x: usize,
        target: T,
    },
}

struct Node<'a, T: Scalar> {
    op: Op<T>,
    shape: Vec<usize>,
    value: Cow<'a, [T]>,
    requires_grad: bool,
}

/// Parameter gradients, one optional buffer per tensor per bound set.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    sets: Vec<Vec<Option<Vec<T>>>>,
    sizes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, set: SetHandle, index: usize) -> Option<&[T]> {
        self.sets[set.0][index].as_deref()
    }

    /// Dense per-tensor gradients for a set, zero where nothing flowed.
    pub fn into_set(mut self, set: SetHandle) -> Vec<Vec<T>> {
        let sizes = std::mem::take(&mut self.sizes[set.0]);
        std::mem::take(&mut self.sets[set.0])
            .into_iter()
            .zip(sizes)
            .map(|(g, n)| g.unwrap_or_else(|| vec![T::zero(); n]))
            .collect()
    }
}

pub struct Graph<'a, T: Scalar> {
    sets: Vec<(&'a ParamSet<T>, bool)>,
    nodes: Vec<Node<'a, T>>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(expected: &[usize], got: &[usize]) -> NeuralError {
    NeuralError::Shape {
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Self {
            sets: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn bind(&mut self, params: &'a ParamSet<T>, trainable: bool) -> SetHandle {
        self.sets.push((params, trainable));
        SetHandle(self.sets.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn push(
        &mut self,
        op: Op<T>,
        shape: Vec<usize>,
        value: Cow<'a, [T]>,
        requires_grad: bool,
        name: &'static str,
    ) -> Result<Var, NeuralError> {
        if !value.iter().all(|v| v.is_finite()) {
            return Err(NeuralError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            op,
            shape,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input; gradients never flow into it.
    pub fn input(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var, NeuralError> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(shape_err(shape, &[data.len()]));
        }
        self.push(Op::Input, shape.to_vec(), Cow::Owned(data), false, "input")
    }

    /// Borrowed variant of [`Graph::input`].
    pub fn input_ref(&mut self, shape: &[usize], data: &'a [T]) -> Result<Var, NeuralError> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(shape_err(shape, &[data.len()]));
        }
        self.push(Op::Input, shape.to_vec(), Cow::Borrowed(data), false, "input")
    }

    pub fn param(&mut self, set: SetHandle, index: usize) -> Var {
        let (params, trainable) = self.sets[set.0];
        let t = &params.tensors[index];
        self.nodes.push(Node {
            op: Op::Param { set: set.0, index },
            shape: t.shape.clone(),
            value: Cow::Borrowed(&t.data),
            requires_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Cross-correlation of `x: [cin, h, w]` with `w: [cout, cin, k, k]`, plus bias.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, NeuralError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] {
            return Err(shape_err(&ws, &xs));
        }
        let out_channels = ws[0];
        if self.shape(b) != [out_channels] {
            return Err(shape_err(&[out_channels], self.shape(b)));
        }
        let geom = ConvGeom::new(xs[0], xs[1], xs[2], ws[2], stride, pad)
            .ok_or_else(|| shape_err(&ws, &xs))?;
        let (k, p) = (geom.patch_len(), geom.positions());
        let mut cols = vec![T::zero(); k * p];
        im2col(self.value(x), &geom, &mut cols);
        let mut out = vec![T::zero(); out_channels * p];
        matmul(out_channels, k, p, self.value(w), false, &cols, false, T::zero(), &mut out);
        let bias = self.value(b);
        for (c, row) in out.chunks_exact_mut(p).enumerate() {
            row.iter_mut().for_each(|v| *v = *v + bias[c]);
        }
        let rg = self.needs(&[x, w, b]);
        self.push(
            Op::Conv {
                x: x.0,
                w: w.0,
                b: b.0,
                geom,
                out_channels,
                cols: if rg { cols } else { Vec::new() },
            },
            vec![out_channels, geom.out_height, geom.out_width],
            Cow::Owned(out),
            rg,
            "conv2d",
        )
    }

    /// Transposed convolution of `x: [cin, h, w]` with `w: [cin, cout, k, k]`;
    /// output side is `(h - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, NeuralError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[0] != xs[0] || ws[2] != ws[3] || stride == 0 {
            return Err(shape_err(&ws, &xs));
        }
        let (cin, cout, k) = (ws[0], ws[1], ws[2]);
        if self.shape(b) != [cout] {
            return Err(shape_err(&[cout], self.shape(b)));
        }
        let full = |n: usize| ((n - 1) * stride + k).checked_sub(2 * pad);
        let (oh, ow) = match (full(xs[1]), full(xs[2])) {
            (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
            _ => return Err(shape_err(&ws, &xs)),
        };
        let geom = ConvGeom::new(cout, oh, ow, k, stride, pad)
            .filter(|g| g.out_height == xs[1] && g.out_width == xs[2])
            .ok_or_else(|| shape_err(&ws, &xs))?;
        let (rows, p) = (geom.patch_len(), geom.positions());
        let mut cols = vec![T::zero(); rows * p];
        matmul(rows, cin, p, self.value(w), true, self.value(x), false, T::zero(), &mut cols);
        let mut out = vec![T::zero(); cout * oh * ow];
        col2im(&cols, &geom, &mut out);
        let bias = self.value(b);
        for (c, plane) in out.chunks_exact_mut(oh * ow).enumerate() {
            plane.iter_mut().for_each(|v| *v = *v + bias[c]);
        }
        let rg = self.needs(&[x, w, b]);
        self.push(
            Op::ConvTranspose {
                x: x.0,
                w: w.0,
                b: b.0,
                geom,
                in_channels: cin,
            },
            vec![cout, oh, ow],
            Cow::Owned(out),
            rg,
            "conv_transpose2d",
        )
    }

    /// `w: [out, in]` applied to `x` flattened.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NeuralError> {
        let ws = self.shape(w).to_vec();
        let n_in = self.value(x).len();
        if ws.len() != 2 || ws[1] != n_in {
            return Err(shape_err(&ws, &[n_in]));
        }
        if self.shape(b) != [ws[0]] {
            return Err(shape_err(&[ws[0]], self.shape(b)));
        }
        let mut out = self.value(b).to_vec();
        matmul(ws[0], n_in, 1, self.value(w), false, self.value(x), false, T::one(), &mut out);
        let rg = self.needs(&[x, w, b]);
        self.push(
            Op::Dense {
                x: x.0,
                w: w.0,
                b: b.0,
            },
            vec![ws[0]],
            Cow::Owned(out),
            rg,
            "dense",
        )
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var, NeuralError> {
        let out: Vec<T> = self.value(x).iter().map(|&v| kind.apply(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x]);
        self.push(Op::Act { x: x.0, kind }, shape, Cow::Owned(out), rg, "activation")
    }

    /// Elementwise `scale * x + shift` with fixed constants.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var, NeuralError> {
        let out: Vec<T> = self.value(x).iter().map(|&v| scale * v + shift).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x]);
        self.push(Op::Affine { x: x.0, scale }, shape, Cow::Owned(out), rg, "affine")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NeuralError> {
        let s = self.value(x).iter().copied().sum::<T>();
        let rg = self.needs(&[x]);
        self.push(Op::Sum { x: x.0 }, vec![1], Cow::Owned(vec![s]), rg, "sum")
    }

    /// `0.5 * sum(x^2)`.
    pub fn half_squared_norm(&mut self, x: Var) -> Result<Var, NeuralError> {
        let s = self.value(x).iter().map(|&v| v * v).sum::<T>() * T::of(0.5);
        let rg = self.needs(&[x]);
        self.push(Op::HalfSquaredNorm { x: x.0 }, vec![1], Cow::Owned(vec![s]), rg, "half_squared_norm")
    }

    /// `(x - target)^2` for a single-element `x`.
    pub fn squared_error(&mut self, x: Var, target: T) -> Result<Var, NeuralError> {
        let v = self.value(x);
        if v.len() != 1 {
            return Err(shape_err(&[1], self.shape(x)));
        }
        let d = v[0] - target;
        let rg = self.needs(&[x]);
        self.push(
            Op::SquaredError { x: x.0, target },
            vec![1],
            Cow::Owned(vec![d * d]),
            rg,
            "squared_error",
        )
    }

    /// Reverse sweep from a scalar `loss`, seeding its gradient with `scale`.
    pub fn backward(&self, loss: Var, scale: T) -> Result<Gradients<T>, NeuralError> {
        let ln = &self.nodes[loss.0];
        if ln.value.len() != 1 {
            return Err(NeuralError::NonScalarLoss(ln.shape.clone()));
        }
        let mut out = Gradients {
            sets: self
                .sets
                .iter()
                .map(|(p, _)| vec![None; p.tensors.len()])
                .collect(),
            sizes: self
                .sets
                .iter()
                .map(|(p, _)| p.tensors.iter().map(|t| t.numel()).collect())
                .collect(),
        };
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![scale]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Input => {}
                Op::Param { set, index } => {
                    let slot = &mut out.sets[*set][*index];
                    match slot {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                        None => *slot = Some(g),
                    }
                }
                Op::Conv {
                    x,
                    w,
                    b,
                    geom,
                    out_channels,
                    cols,
                } => {
                    let (k, p, co) = (geom.patch_len(), geom.positions(), *out_channels);
                    if self.nodes[*w].requires_grad {
                        let dw = accum(&mut grads, *w, co * k);
                        matmul(co, p, k, &g, false, cols, true, T::one(), dw);
                    }
                    if self.nodes[*b].requires_grad {
                        let db = accum(&mut grads, *b, co);
                        for (c, row) in g.chunks_exact(p).enumerate() {
                            db[c] = db[c] + row.iter().copied().sum::<T>();
                        }
                    }
                    if self.nodes[*x].requires_grad {
                        let mut dcols = vec![T::zero(); k * p];
                        matmul(k, co, p, &self.nodes[*w].value, true, &g, false, T::zero(), &mut dcols);
                        let mut dx = vec![T::zero(); self.nodes[*x].value.len()];
                        col2im(&dcols, geom, &mut dx);
                        add_into(accum(&mut grads, *x, dx.len()), &dx);
                    }
                }
                Op::ConvTranspose {
                    x,
                    w,
                    b,
                    geom,
                    in_channels,
                } => {
                    let (rows, p, ci) = (geom.patch_len(), geom.positions(), *in_channels);
                    let plane = geom.height * geom.width;
                    let mut dcols = vec![T::zero(); rows * p];
                    im2col(&g, geom, &mut dcols);
                    if self.nodes[*w].requires_grad {
                        let dw = accum(&mut grads, *w, ci * rows);
                        matmul(ci, p, rows, &self.nodes[*x].value, false, &dcols, true, T::one(), dw);
                    }
                    if self.nodes[*b].requires_grad {
                        let db = accum(&mut grads, *b, geom.channels);
                        for (c, pl) in g.chunks_exact(plane).enumerate() {
                            db[c] = db[c] + pl.iter().copied().sum::<T>();
                        }
                    }
                    if self.nodes[*x].requires_grad {
                        let dx = accum(&mut grads, *x, ci * p);
                        matmul(ci, rows, p, &self.nodes[*w].value, false, &dcols, false, T::one(), dx);
                    }
                }
                Op::Dense { x, w, b } => {
                    let n_out = g.len();
                    let xv = &self.nodes[*x].value;
                    let n_in = xv.len();
                    if self.nodes[*w].requires_grad {
                        let dw = accum(&mut grads, *w, n_out * n_in);
                        for (o, row) in dw.chunks_exact_mut(n_in).enumerate() {
                            let go = g[o];
                            row.iter_mut().zip(xv.iter()).for_each(|(d, &xi)| *d = *d + go * xi);
                        }
                    }
                    if self.nodes[*b].requires_grad {
                        add_into(accum(&mut grads, *b, n_out), &g);
                    }
                    if self.nodes[*x].requires_grad {
                        let dx = accum(&mut grads, *x, n_in);
                        matmul(n_in, n_out, 1, &self.nodes[*w].value, true, &g, false, T::one(), dx);
                    }
                }
                Op::Act { x, kind } => {
                    let xv = &self.nodes[*x].value;
                    let dx = accum(&mut grads, *x, xv.len());
                    for (((d, &gi), &xi), &yi) in dx.iter_mut().zip(&g).zip(xv.iter()).zip(node.value.iter()) {
                        *d = *d + gi * kind.derivative(xi, yi);
                    }
                }
                Op::Affine { x, scale } => {
                    let dx = accum(&mut grads, *x, g.len());
                    dx.iter_mut().zip(&g).for_each(|(d, &gi)| *d = *d + *scale * gi);
                }
                Op::Sum { x } => {
                    let n = self.nodes[*x].value.len();
                    accum(&mut grads, *x, n).iter_mut().for_each(|d| *d = *d + g[0]);
                }
                Op::HalfSquaredNorm { x } => {
                    let xv = &self.nodes[*x].value;
                    let dx = accum(&mut grads, *x, xv.len());
                    dx.iter_mut().zip(xv.iter()).for_each(|(d, &xi)| *d = *d + g[0] * xi);
                }
                Op::SquaredError { x, target } => {
                    let xv = self.nodes[*x].value[0];
                    let dx = accum(&mut grads, *x, 1);
                    dx[0] = dx[0] + g[0] * T::of(2.0) * (xv - *target);
                }
            }
        }
        for set in &out.sets {
            for g in set.iter().flatten() {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(NeuralError::NonFinite { op: "backward" });
                }
            }
        }
        Ok(out)
    }
}

fn accum<T: Scalar>(grads: &mut [Option<Vec<T>>], i: usize, n: usize) -> &mut Vec<T> {
    grads[i].get_or_insert_with(|| vec![T::zero(); n])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d = *d + *s);
}
