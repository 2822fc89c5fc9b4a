//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] records every forward operation as a node holding its value.
//! [`Tape::gradient`] walks the nodes in reverse creation order, so the
//! accumulation order (and therefore every gradient bit) is fixed by the
//! forward program alone.

use std::cell::{Ref, RefCell};

use super::{conv, sigmoid, softplus, Real, Tensor};
use crate::error::{Error, Result};
use crate::physics::laplacian;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Add(usize, usize),
    AddN(Vec<usize>),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, F),
    ScalarMul { scalar: usize, tensor: usize },
    Sigmoid(usize),
    Tanh(usize),
    Softplus(usize),
    Concat(Vec<usize>),
    Slice { src: usize, start: usize, len: usize },
    Reshape(usize),
    Conv2d { input: usize, kernel: usize, bias: Option<usize> },
    Laplacian(usize),
    Sum(usize),
    MeanSquare(usize),
    MeanAbs(usize),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    param: bool,
    /// True when some parameter lies upstream of this node.
    needs_grad: bool,
}

/// Operation graph plus parameter registry for one forward pass.
pub struct Tape<F> {
    nodes: RefCell<Vec<Node<F>>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every registered parameter.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
    params: Vec<bool>,
}

impl<F: Real> Gradients<F> {
    /// Gradient for a parameter; zeros if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Result<&Tensor<F>> {
        match self.params.get(v.0) {
            Some(true) => self.grads[v.0]
                .as_ref()
                .ok_or_else(|| Error::Lookup(format!("no gradient stored for node {}", v.0))),
            _ => Err(Error::Lookup(format!("node {} is not a registered parameter", v.0))),
        }
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf node; registered as a parameter when `t.requires_grad()`.
    pub fn var(&self, t: Tensor<F>) -> Var {
        let param = t.requires_grad();
        self.push(t, Op::Leaf, param)
    }

    pub fn param(&self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn zeros(&self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<F>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn is_param(&self, v: Var) -> bool {
        self.nodes.borrow().get(v.0).is_some_and(|n| n.param)
    }

    fn push(&self, value: Tensor<F>, op: Op<F>, param: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = param || parents(&op).iter().any(|&p| nodes[p].needs_grad);
        nodes.push(Node {
            value,
            op,
            param,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn unary(&self, a: Var, f: impl FnOnce(&Tensor<F>) -> Result<Tensor<F>>, op: Op<F>) -> Result<Var> {
        let value = f(&self.nodes.borrow()[a.0].value)?;
        Ok(self.push(value, op, false))
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        f: impl FnOnce(&Tensor<F>, &Tensor<F>) -> Result<Tensor<F>>,
        op: Op<F>,
    ) -> Result<Var> {
        let value = {
            let n = self.nodes.borrow();
            f(&n[a.0].value, &n[b.0].value)?
        };
        Ok(self.push(value, op, false))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.add(y), Op::Add(a.0, b.0))
    }

    /// Sum of equally shaped tensors.
    pub fn add_n(&self, xs: &[Var]) -> Result<Var> {
        let value = {
            let n = self.nodes.borrow();
            let first = xs.first().ok_or_else(|| Error::shape("add_n of zero tensors"))?;
            let mut acc = n[first.0].value.clone();
            for x in &xs[1..] {
                acc.add_assign(&n[x.0].value)?;
            }
            acc
        };
        Ok(self.push(value, Op::AddN(xs.iter().map(|v| v.0).collect()), false))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.sub(y), Op::Sub(a.0, b.0))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.mul(y), Op::Mul(a.0, b.0))
    }

    pub fn scale(&self, a: Var, c: F) -> Result<Var> {
        self.unary(a, |x| Ok(x.scale(c)), Op::Scale(a.0, c))
    }

    /// `s · t` where `s` is a one-element tensor.
    pub fn scalar_mul(&self, s: Var, t: Var) -> Result<Var> {
        self.binary(
            s,
            t,
            |sv, tv| {
                if !sv.is_scalar() {
                    return Err(Error::shape(format!("scalar_mul needs a scalar, got {:?}", sv.shape())));
                }
                Ok(tv.scale(sv.item()))
            },
            Op::ScalarMul {
                scalar: s.0,
                tensor: t.0,
            },
        )
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.unary(a, |x| Ok(x.sigmoid()), Op::Sigmoid(a.0))
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.unary(a, |x| Ok(x.tanh()), Op::Tanh(a.0))
    }

    pub fn softplus(&self, a: Var) -> Result<Var> {
        self.unary(a, |x| Ok(x.map(softplus)), Op::Softplus(a.0))
    }

    pub fn concat_channels(&self, xs: &[Var]) -> Result<Var> {
        let value = {
            let n = self.nodes.borrow();
            let parts: Vec<&Tensor<F>> = xs.iter().map(|v| &n[v.0].value).collect();
            Tensor::concat_channels(&parts)?
        };
        Ok(self.push(value, Op::Concat(xs.iter().map(|v| v.0).collect()), false))
    }

    pub fn slice_channels(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.unary(
            a,
            |x| x.slice_channels(start, len),
            Op::Slice { src: a.0, start, len },
        )
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        self.unary(a, |x| x.reshape(shape), Op::Reshape(a.0))
    }

    pub fn conv2d(&self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let value = {
            let n = self.nodes.borrow();
            conv::conv2d(
                &n[input.0].value,
                &n[kernel.0].value,
                bias.map(|b| &n[b.0].value),
            )?
        };
        Ok(self.push(
            value,
            Op::Conv2d {
                input: input.0,
                kernel: kernel.0,
                bias: bias.map(|b| b.0),
            },
            false,
        ))
    }

    /// Full-time-extent 3D convolution, see [`conv::conv3d`].
    pub fn conv3d(&self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (fi, fk) = conv::flatten_conv3d(&self.shape(input), &self.shape(kernel))?;
        let x = self.reshape(input, &fi)?;
        let k = self.reshape(kernel, &fk)?;
        self.conv2d(x, k, bias)
    }

    pub fn laplacian(&self, a: Var) -> Result<Var> {
        self.unary(a, laplacian, Op::Laplacian(a.0))
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        self.unary(a, |x| Ok(Tensor::scalar(x.sum())), Op::Sum(a.0))
    }

    pub fn mean_square(&self, a: Var) -> Result<Var> {
        self.unary(
            a,
            |x| {
                let s: F = x.data().iter().map(|&v| v * v).sum();
                Ok(Tensor::scalar(s / F::of(x.len() as f64)))
            },
            Op::MeanSquare(a.0),
        )
    }

    pub fn mean_abs(&self, a: Var) -> Result<Var> {
        self.unary(
            a,
            |x| {
                let s: F = x.data().iter().map(|&v| v.abs()).sum();
                Ok(Tensor::scalar(s / F::of(x.len() as f64)))
            },
            Op::MeanAbs(a.0),
        )
    }

    /// Mean-squared difference of two equally shaped tensors.
    pub fn mse(&self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        self.mean_square(d)
    }

    /// Gradients of `loss` with respect to `params`, in order.
    pub fn gradient(&self, loss: Var, params: &[Var]) -> Result<Vec<Tensor<F>>> {
        let all = self.gradients(loss)?;
        params.iter().map(|&p| all.get(p).cloned()).collect()
    }

    /// Gradients of a scalar `loss` with respect to every parameter on the tape.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<F>> {
        let nodes = self.nodes.borrow();
        let root = nodes
            .get(loss.0)
            .ok_or_else(|| Error::Lookup(format!("node {} is not on this tape", loss.0)))?;
        if !root.value.is_scalar() {
            return Err(Error::contract(format!(
                "gradient needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(root.value.shape(), vec![F::one()])?);
        let mut out: Vec<Option<Tensor<F>>> = (0..nodes.len()).map(|_| None).collect();

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            let Some(g) = grads[id].take() else { continue };
            if node.param {
                out[id] = Some(g);
                continue;
            }
            if !node.needs_grad {
                continue;
            }
            let want = |p: usize| nodes[p].needs_grad;
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if want(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if want(*b) {
                        accumulate(&mut grads, *b, g)?;
                    }
                }
                Op::AddN(xs) => {
                    for &x in xs {
                        if want(x) {
                            accumulate(&mut grads, x, g.clone())?;
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if want(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if want(*b) {
                        accumulate(&mut grads, *b, g.scale(-F::one()))?;
                    }
                }
                Op::Mul(a, b) => {
                    if want(*a) {
                        accumulate(&mut grads, *a, g.mul(&nodes[*b].value)?)?;
                    }
                    if want(*b) {
                        accumulate(&mut grads, *b, g.mul(&nodes[*a].value)?)?;
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c))?,
                Op::ScalarMul { scalar, tensor } => {
                    if want(*scalar) {
                        let t = &nodes[*tensor].value;
                        let s: F = g.data().iter().zip(t.data()).map(|(&a, &b)| a * b).sum();
                        accumulate(&mut grads, *scalar, Tensor::new(nodes[*scalar].value.shape(), vec![s])?)?;
                    }
                    if want(*tensor) {
                        accumulate(&mut grads, *tensor, g.scale(nodes[*scalar].value.item()))?;
                    }
                }
                Op::Sigmoid(a) => {
                    accumulate(&mut grads, *a, g.zip_map(y, |gv, s| gv * s * (F::one() - s))?)?;
                }
                Op::Tanh(a) => {
                    accumulate(&mut grads, *a, g.zip_map(y, |gv, t| gv * (F::one() - t * t))?)?;
                }
                Op::Softplus(a) => {
                    accumulate(&mut grads, *a, g.zip_map(&nodes[*a].value, |gv, x| gv * sigmoid(x))?)?;
                }
                Op::Concat(xs) => {
                    let mut start = 0;
                    for &x in xs {
                        let c = nodes[x].value.channels();
                        if want(x) {
                            accumulate(&mut grads, x, g.slice_channels(start, c)?)?;
                        }
                        start += c;
                    }
                }
                Op::Slice { src, start, len } => {
                    let s = &nodes[*src].value;
                    let c = s.channels();
                    let mut d = Tensor::zeros(s.shape());
                    for (dst, gp) in d.data_mut().chunks_exact_mut(c).zip(g.data().chunks_exact(*len)) {
                        dst[*start..start + len].copy_from_slice(gp);
                    }
                    accumulate(&mut grads, *src, d)?;
                }
                Op::Reshape(a) => accumulate(&mut grads, *a, g.reshape(nodes[*a].value.shape())?)?,
                Op::Conv2d { input, kernel, bias } => {
                    let (x, k) = (&nodes[*input].value, &nodes[*kernel].value);
                    if want(*input) {
                        accumulate(&mut grads, *input, conv::conv2d_grad_input(&g, x, k)?)?;
                    }
                    if want(*kernel) {
                        accumulate(&mut grads, *kernel, conv::conv2d_grad_kernel(&g, x, k)?)?;
                    }
                    if let Some(b) = bias {
                        if want(*b) {
                            accumulate(&mut grads, *b, conv::conv2d_grad_bias(&g))?;
                        }
                    }
                }
                // The replicate-boundary stencil is symmetric, so it is its own adjoint.
                Op::Laplacian(a) => accumulate(&mut grads, *a, laplacian(&g)?)?,
                Op::Sum(a) => {
                    accumulate(&mut grads, *a, Tensor::full(nodes[*a].value.shape(), g.item()))?;
                }
                Op::MeanSquare(a) => {
                    let x = &nodes[*a].value;
                    let c = g.item() * F::of(2.0 / x.len() as f64);
                    accumulate(&mut grads, *a, x.scale(c))?;
                }
                Op::MeanAbs(a) => {
                    let x = &nodes[*a].value;
                    let c = g.item() / F::of(x.len() as f64);
                    let d = x.map(|v| {
                        if v > F::zero() {
                            c
                        } else if v < F::zero() {
                            -c
                        } else {
                            F::zero()
                        }
                    });
                    accumulate(&mut grads, *a, d)?;
                }
            }
        }

        // Parameters the loss does not reach get explicit zeros.
        let params: Vec<bool> = nodes.iter().map(|n| n.param).collect();
        for (id, n) in nodes.iter().enumerate() {
            if n.param && out[id].is_none() {
                out[id] = Some(Tensor::zeros(n.value.shape()));
            }
        }
        Ok(Gradients { grads: out, params })
    }
}

fn parents<F>(op: &Op<F>) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::ScalarMul { scalar, tensor } => vec![*scalar, *tensor],
        Op::AddN(xs) | Op::Concat(xs) => xs.clone(),
        Op::Scale(a, _)
        | Op::Sigmoid(a)
        | Op::Tanh(a)
        | Op::Softplus(a)
        | Op::Reshape(a)
        | Op::Laplacian(a)
        | Op::Sum(a)
        | Op::MeanSquare(a)
        | Op::MeanAbs(a) => vec![*a],
        Op::Slice { src, .. } => vec![*src],
        Op::Conv2d { input, kernel, bias } => {
            let mut v = vec![*input, *kernel];
            v.extend(bias);
            v
        }
    }
}

fn accumulate<F: Real>(grads: &mut [Option<Tensor<F>>], id: usize, g: Tensor<F>) -> Result<()> {
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
