use std::sync::atomic::{AtomicU32, Ordering};

use super::broadcast::{broadcast_dims, expand, reduce_to, zip_broadcast};
use super::kernels::{self, ConvGeometry};
use super::{check_axis, Real, Result, Tensor, TensorError};

/// Stabilizer added under the square root wherever a norm is differentiated.
pub const NORM_EPS: f64 = 1e-7;

static NEXT_GRAPH: AtomicU32 = AtomicU32::new(0);

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    index: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Min(usize, usize),
    Neg(usize),
    Scale(usize, T),
    Offset(usize),
    Exp(usize),
    Log(usize),
    Relu(usize),
    Sigmoid(usize),
    LogSigmoid(usize),
    Sqrt(usize),
    Square(usize),
    SumAxis(usize),
    SumAll(usize),
    MeanAll(usize),
    Softmax(usize, usize),
    Squash(usize, usize),
    Norm(usize),
    Reshape(usize),
    Slice { x: usize, axis: usize, start: usize },
    Expand(usize),
    MatMul(usize, usize),
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        geometry: ConvGeometry,
        cols: Vec<T>,
    },
    Votes(usize, usize),
    WeightedSum(usize, usize),
    Agreement(usize, usize),
    PairDistance(usize, usize),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match *self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Min(a, b) | MatMul(a, b) | Votes(a, b) | WeightedSum(a, b)
            | Agreement(a, b) | PairDistance(a, b) => vec![a, b],
            Neg(x) | Scale(x, _) | Offset(x) | Exp(x) | Log(x) | Relu(x) | Sigmoid(x) | LogSigmoid(x) | Sqrt(x) | Square(x)
            | SumAxis(x) | SumAll(x) | MeanAll(x) | Softmax(x, _) | Squash(x, _) | Norm(x) | Reshape(x)
            | Expand(x) => vec![x],
            Slice { x, .. } => vec![x],
            Conv2d { x, w, b, .. } => vec![x, w, b],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records primitive operations in execution order for reverse-mode
/// differentiation. Node inputs always precede the node itself.
pub struct Graph<T: Real> {
    id: u32,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients<T> {
    graph: u32,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        if var.graph != self.graph {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        if var.graph != self.graph {
            return None;
        }
        self.grads.get_mut(var.index).and_then(Option::take)
    }
}

/// `(outer, len, inner)` decomposition of `dims` around `axis`.
fn axis_split(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

fn keepdim(dims: &[usize], axis: usize) -> Vec<usize> {
    let mut d = dims.to_vec();
    d[axis] = 1;
    d
}

fn sum_axis<T: Real>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = axis_split(x.dims(), axis);
    let mut out = vec![T::zero(); outer * inner];
    let xd = x.data();
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for k in 0..len {
            let src = &xd[(o * len + k) * inner..(o * len + k + 1) * inner];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    Tensor {
        dims: keepdim(x.dims(), axis),
        data: out,
    }
}

fn softmax_axis<T: Real>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = axis_split(x.dims(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).fold(T::neg_infinity(), |m, k| m.max(xd[at(k)]));
            let mut total = T::zero();
            for k in 0..len {
                let e = (xd[at(k)] - max).exp();
                out[at(k)] = e;
                total += e;
            }
            for k in 0..len {
                out[at(k)] = out[at(k)] / total;
            }
        }
    }
    Tensor {
        dims: x.dims().to_vec(),
        data: out,
    }
}

/// Per-vector squared norms along `axis`, with keepdim layout.
fn sq_norms<T: Real>(x: &Tensor<T>, axis: usize) -> Vec<T> {
    let (outer, len, inner) = axis_split(x.dims(), axis);
    let xd = x.data();
    let mut n2 = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for k in 0..len {
            for i in 0..inner {
                let v = xd[(o * len + k) * inner + i];
                n2[o * inner + i] += v * v;
            }
        }
    }
    n2
}

/// Scale applied by squash to a vector with squared norm `n2`:
/// `sqrt(n2 + eps) / (1 + n2)`, and its derivative in `n2`.
fn squash_scale<T: Real>(n2: T) -> (T, T) {
    let eps = T::of(NORM_EPS);
    let one = T::one();
    let root = (n2 + eps).sqrt();
    let denom = one + n2;
    let scale = root / denom;
    let dscale = (T::of(0.5) / root * denom - root) / (denom * denom);
    (scale, dscale)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        // Nodes that no gradient flows through do not need their caches.
        let op = match op {
            Op::Conv2d { x, w, b, geometry, .. } if !requires_grad => Op::Conv2d {
                x,
                w,
                b,
                geometry,
                cols: Vec::new(),
            },
            op => op,
        };
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var { graph: self.id, index })
    }

    /// Records an input tensor. Gradients are collected for it when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var { graph: self.id, index })
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let i = self.idx(v).expect("var belongs to this graph");
        &self.nodes[i].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.value(v).dims()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: fn(usize, usize) -> Op<T>,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let value = zip_broadcast(name, &self.nodes[ia].value, &self.nodes[ib].value, f)?;
        self.push(value, op(ia, ib), name)
    }

    fn unary(&mut self, x: Var, name: &'static str, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let ix = self.idx(x)?;
        let value = self.nodes[ix].value.map(f);
        self.push(value, op, name)
    }

    /// Elementwise sum with same-rank broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div)
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "min", |x, y| if x <= y { x } else { y }, Op::Min)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        self.unary(x, "neg", |v| -v, Op::Neg(i))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let i = self.idx(x)?;
        let c = T::of(c);
        self.unary(x, "scale", |v| v * c, Op::Scale(i, c))
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var> {
        let i = self.idx(x)?;
        let c = T::of(c);
        self.unary(x, "offset", |v| v + c, Op::Offset(i))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        self.unary(x, "exp", |v| v.exp(), Op::Exp(i))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        self.unary(x, "log", |v| v.ln(), Op::Log(i))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        self.unary(x, "relu", |v| v.max(T::zero()), Op::Relu(i))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        self.unary(x, "sigmoid", |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(i))
    }

    /// `ln(sigmoid(x))` without underflow for very negative `x`.
    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        self.unary(
            x,
            "log_sigmoid",
            |v| v.min(T::zero()) - (T::one() + (-v.abs()).exp()).ln(),
            Op::LogSigmoid(i),
        )
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        self.unary(x, "sqrt", |v| v.sqrt(), Op::Sqrt(i))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        self.unary(x, "square", |v| v * v, Op::Square(i))
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let i = self.idx(x)?;
        check_axis(axis, self.nodes[i].value.rank())?;
        let value = sum_axis(&self.nodes[i].value, axis);
        self.push(value, Op::SumAxis(i), "sum_axis")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let value = Tensor::scalar(self.nodes[i].value.sum());
        self.push(value, Op::SumAll(i), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let v = &self.nodes[i].value;
        if v.is_empty() {
            return Err(TensorError::Invalid("mean of an empty tensor".into()));
        }
        let value = Tensor::scalar(v.sum() / T::of(v.len() as f64));
        self.push(value, Op::MeanAll(i), "mean")
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let i = self.idx(x)?;
        check_axis(axis, self.nodes[i].value.rank())?;
        let value = softmax_axis(&self.nodes[i].value, axis);
        self.push(value, Op::Softmax(i, axis), "softmax")
    }

    /// Capsule squash along `axis`: keeps direction, maps the norm to
    /// `|s|^2 / (1 + |s|^2)`. Evaluated as `s * sqrt(|s|^2 + eps) / (1 + |s|^2)`
    /// so the zero vector maps to zero with a finite gradient.
    pub fn squash(&mut self, x: Var, axis: usize) -> Result<Var> {
        let i = self.idx(x)?;
        let xv = &self.nodes[i].value;
        check_axis(axis, xv.rank())?;
        let (outer, len, inner) = axis_split(xv.dims(), axis);
        let n2 = sq_norms(xv, axis);
        let mut out = xv.data().to_vec();
        for o in 0..outer {
            for k in 0..len {
                for j in 0..inner {
                    let (scale, _) = squash_scale(n2[o * inner + j]);
                    out[(o * len + k) * inner + j] *= scale;
                }
            }
        }
        let value = Tensor {
            dims: xv.dims().to_vec(),
            data: out,
        };
        self.push(value, Op::Squash(i, axis), "squash")
    }

    /// `sqrt(sum(x^2) + eps)` along `axis`, keepdim.
    pub fn norm(&mut self, x: Var, axis: usize) -> Result<Var> {
        let i = self.idx(x)?;
        let xv = &self.nodes[i].value;
        check_axis(axis, xv.rank())?;
        let eps = T::of(NORM_EPS);
        let data = sq_norms(xv, axis).into_iter().map(|v| (v + eps).sqrt()).collect();
        let value = Tensor {
            dims: keepdim(xv.dims(), axis),
            data,
        };
        self.push(value, Op::Norm(i), "norm")
    }

    pub fn reshape(&mut self, x: Var, dims: impl Into<Vec<usize>>) -> Result<Var> {
        let i = self.idx(x)?;
        let value = self.nodes[i].value.clone().reshape(dims)?;
        self.push(value, Op::Reshape(i), "reshape")
    }

    /// Contiguous window `[start, start + len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let i = self.idx(x)?;
        let xv = &self.nodes[i].value;
        check_axis(axis, xv.rank())?;
        if start + len > xv.dims()[axis] {
            return Err(TensorError::Invalid(format!(
                "slice {start}..{} exceeds extent {} on axis {axis}",
                start + len,
                xv.dims()[axis]
            )));
        }
        let (outer, full, inner) = axis_split(xv.dims(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            data.extend_from_slice(&xv.data()[from..from + len * inner]);
        }
        let mut dims = xv.dims().to_vec();
        dims[axis] = len;
        let value = Tensor { dims, data };
        self.push(value, Op::Slice { x: i, axis, start }, "slice")
    }

    /// Stretches extent-1 axes to `dims`.
    pub fn expand(&mut self, x: Var, dims: impl Into<Vec<usize>>) -> Result<Var> {
        let i = self.idx(x)?;
        let dims = dims.into();
        let xv = &self.nodes[i].value;
        let out = broadcast_dims("expand", xv.dims(), &dims)?;
        if out != dims {
            return Err(TensorError::ShapeMismatch {
                op: "expand",
                lhs: xv.dims().to_vec(),
                rhs: dims,
            });
        }
        let value = expand(xv, &dims);
        self.push(value, Op::Expand(i), "expand")
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let value = kernels::matmul(&self.nodes[ia].value, &self.nodes[ib].value, false, false)?;
        self.push(value, Op::MatMul(ia, ib), "matmul")
    }

    /// Valid-padding convolution of `B x H x W x Cin` input with
    /// `k x k x Cin x Cout` kernels plus a per-channel bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (ix, iw, ib) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (xv, wv, bv) = (&self.nodes[ix].value, &self.nodes[iw].value, &self.nodes[ib].value);
        let geometry = ConvGeometry::new(xv.dims(), wv.dims(), stride)?;
        let (value, cols) = kernels::conv2d_forward(xv, wv, bv, stride)?;
        self.push(
            value,
            Op::Conv2d {
                x: ix,
                w: iw,
                b: ib,
                geometry,
                cols,
            },
            "conv2d",
        )
    }

    /// Votes of `B x N x d_in` poses through `N x M x d_out x d_in`
    /// transformation matrices, giving `B x N x M x d_out`.
    pub fn capsule_votes(&mut self, poses: Var, weights: Var) -> Result<Var> {
        let (iu, iw) = (self.idx(poses)?, self.idx(weights)?);
        let value = kernels::capsule_votes(&self.nodes[iu].value, &self.nodes[iw].value)?;
        self.push(value, Op::Votes(iu, iw), "capsule_votes")
    }

    /// `sum_i c_ij * u_j|i` for couplings `B x N x M x 1` and votes
    /// `B x N x M x d`, giving `B x 1 x M x d`.
    pub fn weighted_sum(&mut self, couplings: Var, votes: Var) -> Result<Var> {
        let (ic, iu) = (self.idx(couplings)?, self.idx(votes)?);
        let value = kernels::weighted_sum(&self.nodes[ic].value, &self.nodes[iu].value)?;
        self.push(value, Op::WeightedSum(ic, iu), "weighted_sum")
    }

    /// Dot product of every vote `B x N x M x d` with its parent pose
    /// `B x 1 x M x d`, giving `B x N x M x 1`.
    pub fn agreement(&mut self, votes: Var, parents: Var) -> Result<Var> {
        let (iu, iv) = (self.idx(votes)?, self.idx(parents)?);
        let value = kernels::agreement(&self.nodes[iu].value, &self.nodes[iv].value)?;
        self.push(value, Op::Agreement(iu, iv), "agreement")
    }

    /// Stabilized Euclidean distance `sqrt(|u_j|i - v_j|^2 + eps)` between
    /// every vote and its parent pose, giving `B x N x M x 1`.
    pub fn pair_distance(&mut self, votes: Var, parents: Var) -> Result<Var> {
        let (iu, iv) = (self.idx(votes)?, self.idx(parents)?);
        let value = kernels::pair_distance(&self.nodes[iu].value, &self.nodes[iv].value, T::of(NORM_EPS))?;
        self.push(value, Op::PairDistance(iu, iv), "pair_distance")
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.idx(loss)?;
        let lv = &self.nodes[root].value;
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.dims().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::full(lv.dims().to_vec(), T::one()));
        for n in (0..=root).rev() {
            let node = &self.nodes[n];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[n].take() else { continue };
            for (input, grad) in self.node_backward(n, &g) {
                if !self.nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => {
                        for (a, &v) in acc.data_mut().iter_mut().zip(grad.data()) {
                            *a += v;
                        }
                    }
                    slot => *slot = Some(grad),
                }
            }
        }
        for (n, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[n] = None;
            }
        }
        Ok(Gradients { graph: self.id, grads })
    }

    fn node_backward(&self, n: usize, g: &Tensor<T>) -> Vec<(usize, Tensor<T>)> {
        let val = |i: usize| &self.nodes[i].value;
        let y = &self.nodes[n].value;
        let zip = |a: &Tensor<T>, b: &Tensor<T>, f: &dyn Fn(T, T) -> T| {
            zip_broadcast("backward", a, b, f).expect("shapes validated in forward")
        };
        match self.nodes[n].op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(a, reduce_to(g, val(a).dims())), (b, reduce_to(g, val(b).dims()))],
            Op::Sub(a, b) => vec![
                (a, reduce_to(g, val(a).dims())),
                (b, reduce_to(&g.map(|v| -v), val(b).dims())),
            ],
            Op::Mul(a, b) => vec![
                (a, reduce_to(&zip(g, val(b), &|gv, bv| gv * bv), val(a).dims())),
                (b, reduce_to(&zip(g, val(a), &|gv, av| gv * av), val(b).dims())),
            ],
            Op::Div(a, b) => {
                let ga = zip(g, val(b), &|gv, bv| gv / bv);
                let gy = zip(g, y, &|gv, yv| -gv * yv);
                let gb = zip(&gy, val(b), &|v, bv| v / bv);
                vec![(a, reduce_to(&ga, val(a).dims())), (b, reduce_to(&gb, val(b).dims()))]
            }
            Op::Min(a, b) => {
                // y == a exactly wherever a was selected.
                let from_a = zip(y, val(a), &|yv, av| if yv == av { T::one() } else { T::zero() });
                let ga = zip(g, &from_a, &|gv, m| gv * m);
                let gb = zip(g, &from_a, &|gv, m| gv * (T::one() - m));
                vec![(a, reduce_to(&ga, val(a).dims())), (b, reduce_to(&gb, val(b).dims()))]
            }
            Op::Neg(x) => vec![(x, g.map(|v| -v))],
            Op::Scale(x, c) => vec![(x, g.map(|v| v * c))],
            Op::Offset(x) => vec![(x, g.clone())],
            Op::Exp(x) => vec![(x, zip(g, y, &|gv, yv| gv * yv))],
            Op::Log(x) => vec![(x, zip(g, val(x), &|gv, xv| gv / xv))],
            Op::Relu(x) => vec![(x, zip(g, val(x), &|gv, xv| if xv > T::zero() { gv } else { T::zero() }))],
            Op::Sigmoid(x) => vec![(x, zip(g, y, &|gv, yv| gv * yv * (T::one() - yv)))],
            Op::LogSigmoid(x) => vec![(
                x,
                zip(g, val(x), &|gv, xv| gv / (T::one() + xv.exp())),
            )],
            Op::Sqrt(x) => vec![(x, zip(g, y, &|gv, yv| gv * T::of(0.5) / yv))],
            Op::Square(x) => vec![(x, zip(g, val(x), &|gv, xv| gv * T::of(2.0) * xv))],
            Op::SumAxis(x) => vec![(x, expand(g, val(x).dims()))],
            Op::SumAll(x) => vec![(x, Tensor::full(val(x).dims().to_vec(), g.item()))],
            Op::MeanAll(x) => {
                let n = T::of(val(x).len() as f64);
                vec![(x, Tensor::full(val(x).dims().to_vec(), g.item() / n))]
            }
            Op::Softmax(x, axis) => {
                let gy = zip(g, y, &|gv, yv| gv * yv);
                let dot = sum_axis(&gy, axis);
                let centered = zip(g, &dot, &|gv, d| gv - d);
                vec![(x, zip(&centered, y, &|c, yv| c * yv))]
            }
            Op::Squash(x, axis) => {
                let xv = val(x);
                let (outer, len, inner) = axis_split(xv.dims(), axis);
                let n2 = sq_norms(xv, axis);
                let (xd, gd) = (xv.data(), g.data());
                let mut dx = vec![T::zero(); xd.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + j;
                        let (scale, dscale) = squash_scale(n2[o * inner + j]);
                        let sdot = (0..len).fold(T::zero(), |acc, k| acc + xd[at(k)] * gd[at(k)]);
                        let coef = T::of(2.0) * dscale * sdot;
                        for k in 0..len {
                            dx[at(k)] = gd[at(k)] * scale + xd[at(k)] * coef;
                        }
                    }
                }
                vec![(
                    x,
                    Tensor {
                        dims: xv.dims().to_vec(),
                        data: dx,
                    },
                )]
            }
            Op::Norm(x) => {
                let gy = zip(g, y, &|gv, yv| gv / yv);
                vec![(x, zip(val(x), &gy, &|xv, r| xv * r))]
            }
            Op::Reshape(x) => vec![(x, g.clone().reshape(val(x).dims().to_vec()).expect("same size"))],
            Op::Slice { x, axis, start } => {
                let dims = val(x).dims();
                let (outer, full, inner) = axis_split(dims, axis);
                let len = g.dims()[axis];
                let mut dx = vec![T::zero(); val(x).len()];
                for o in 0..outer {
                    let to = (o * full + start) * inner;
                    let from = o * len * inner;
                    dx[to..to + len * inner].copy_from_slice(&g.data()[from..from + len * inner]);
                }
                vec![(
                    x,
                    Tensor {
                        dims: dims.to_vec(),
                        data: dx,
                    },
                )]
            }
            Op::Expand(x) => vec![(x, reduce_to(g, val(x).dims()))],
            Op::MatMul(a, b) => {
                let ga = kernels::matmul(g, val(b), false, true).expect("validated");
                let gb = kernels::matmul(val(a), g, true, false).expect("validated");
                vec![(a, ga), (b, gb)]
            }
            Op::Conv2d {
                x,
                w,
                b,
                ref geometry,
                ref cols,
            } => {
                let want_x = self.nodes[x].requires_grad;
                let (dx, dw, db) = kernels::conv2d_backward(geometry, cols, val(w), g, want_x);
                let mut out = vec![(w, dw), (b, db)];
                if let Some(dx) = dx {
                    out.push((x, dx));
                }
                out
            }
            Op::Votes(u, w) => {
                let (du, dw) = kernels::capsule_votes_backward(
                    val(u),
                    val(w),
                    g,
                    self.nodes[u].requires_grad,
                    self.nodes[w].requires_grad,
                );
                du.map(|d| (u, d)).into_iter().chain(dw.map(|d| (w, d))).collect()
            }
            Op::WeightedSum(c, u) => {
                let (dc, du) = kernels::weighted_sum_backward(val(c), val(u), g);
                vec![(c, dc), (u, du)]
            }
            Op::Agreement(u, v) => {
                let (du, dv) = kernels::agreement_backward(val(u), val(v), g);
                vec![(u, du), (v, dv)]
            }
            Op::PairDistance(u, v) => {
                let (du, dv) = kernels::pair_distance_backward(val(u), val(v), y, g);
                vec![(u, du), (v, dv)]
            }
        }
    }
}
