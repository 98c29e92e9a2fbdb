//! Reverse-mode automatic differentiation over a per-pass tape.
//!
//! A `Tape` records every operation applied to its `Var`s. Calling
//! [`Tape::backward`] on a scalar walks the record in reverse and returns the
//! gradient of every node that transitively depends on a leaf created with
//! `requires_grad = true`. Nodes hold their values behind `Arc`, so binding
//! network parameters as leaves never copies weights.

use std::cell::RefCell;
use std::sync::Arc;

use crate::kernels::{self, ConvGeom};
use crate::tensor::{Real, Tensor};

enum Op<R: Real> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, R),
    AddScalar(usize),
    Sum(usize),
    Mean(usize),
    Abs(usize),
    Relu(usize),
    LeakyRelu(usize, R),
    Tanh(usize),
    Reshape(usize),
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
        cols: Option<Vec<R>>,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Upsample2x(usize),
    AvgPool(usize),
    Resize(usize),
    AdaIn {
        x: usize,
        scale: usize,
        shift: usize,
        eps: R,
        mean: Vec<R>,
        std: Vec<R>,
    },
    Narrow {
        x: usize,
        start: usize,
    },
    GlobalAvgPool(usize),
    NormalizeRows {
        x: usize,
        norms: Vec<R>,
    },
    RowDot(usize, usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<R>,
    },
}

struct Node<R: Real> {
    value: Arc<Tensor<R>>,
    op: Op<R>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<R: Real> {
    nodes: RefCell<Vec<Node<R>>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t, R: Real> {
    tape: &'t Tape<R>,
    id: usize,
}

/// Gradients indexed by node.
pub struct Grads<R: Real> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Grads<R> {
    pub fn get(&self, v: Var<'_, R>) -> Option<&Tensor<R>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like it when nothing flowed there.
    pub fn get_or_zeros(&self, v: Var<'_, R>) -> Tensor<R> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.value().shape()))
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn leaf(&self, value: impl Into<Arc<Tensor<R>>>, requires_grad: bool) -> Var<'_, R> {
        self.push(value.into(), Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: impl Into<Arc<Tensor<R>>>) -> Var<'_, R> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: R) -> Var<'_, R> {
        self.constant(Tensor::scalar(value))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Arc<Tensor<R>>, op: Op<R>, requires_grad: bool) -> Var<'_, R> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Arc<Tensor<R>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Gradients of the scalar `root` with respect to every node on the tape.
    pub fn backward(&self, root: Var<'_, R>) -> Grads<R> {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.id].value.len(),
            1,
            "backward needs a scalar root"
        );
        let mut grads: Vec<Option<Tensor<R>>> = (0..=root.id).map(|_| None).collect();
        grads[root.id] = Some(Tensor::from_vec(
            nodes[root.id].value.shape(),
            vec![R::one()],
        ));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[id].take() else { continue };
            let needs = |i: usize| nodes[i].requires_grad;
            let val = |i: usize| &*nodes[i].value;
            let mut acc = |i: usize, g: Tensor<R>| match &mut grads[i] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                &Op::Add(a, b) => {
                    if needs(a) {
                        acc(a, gy.clone());
                    }
                    if needs(b) {
                        acc(b, gy);
                    }
                }
                &Op::Sub(a, b) => {
                    if needs(a) {
                        acc(a, gy.clone());
                    }
                    if needs(b) {
                        acc(b, gy.map(|g| -g));
                    }
                }
                &Op::Mul(a, b) => {
                    if needs(a) {
                        acc(a, gy.zip_map(val(b), |g, y| g * y));
                    }
                    if needs(b) {
                        acc(b, gy.zip_map(val(a), |g, x| g * x));
                    }
                }
                &Op::Scale(a, c) => acc(a, gy.map(|g| g * c)),
                &Op::AddScalar(a) => acc(a, gy),
                &Op::Sum(a) => {
                    let g = gy.data()[0];
                    acc(a, Tensor::full(val(a).shape(), g));
                }
                &Op::Mean(a) => {
                    let g = gy.data()[0] / R::of(val(a).len() as f64);
                    acc(a, Tensor::full(val(a).shape(), g));
                }
                &Op::Abs(a) => acc(a, gy.zip_map(val(a), |g, x| g * sign(x))),
                &Op::Relu(a) => acc(
                    a,
                    gy.zip_map(val(a), |g, x| if x > R::zero() { g } else { R::zero() }),
                ),
                &Op::LeakyRelu(a, slope) => acc(
                    a,
                    gy.zip_map(val(a), |g, x| if x > R::zero() { g } else { g * slope }),
                ),
                &Op::Tanh(a) => acc(a, gy.zip_map(&node.value, |g, y| g * (R::one() - y * y))),
                &Op::Reshape(a) => acc(a, gy.reshape(val(a).shape())),
                Op::Conv2d {
                    x,
                    w,
                    b,
                    geom,
                    cols,
                } => {
                    let grads = kernels::conv2d_backward(
                        &gy,
                        cols.as_deref(),
                        val(*w),
                        geom,
                        needs(*x),
                        b.is_some_and(needs),
                    );
                    if let Some(dx) = grads.dx {
                        acc(*x, dx);
                    }
                    if let Some(dw) = grads.dw {
                        acc(*w, dw);
                    }
                    if let (Some(b), Some(db)) = (b, grads.db) {
                        acc(*b, db);
                    }
                }
                &Op::Linear { x, w, b } => {
                    let (n, out) = gy.dims2();
                    let inp = val(x).shape()[1];
                    if needs(x) {
                        let mut dx = Tensor::zeros(&[n, inp]);
                        R::gemm(
                            n,
                            out,
                            inp,
                            R::one(),
                            gy.data(),
                            out as isize,
                            1,
                            val(w).data(),
                            inp as isize,
                            1,
                            R::zero(),
                            dx.data_mut(),
                            inp as isize,
                            1,
                        );
                        acc(x, dx);
                    }
                    if needs(w) {
                        let mut dw = Tensor::zeros(&[out, inp]);
                        R::gemm(
                            out,
                            n,
                            inp,
                            R::one(),
                            gy.data(),
                            1,
                            out as isize,
                            val(x).data(),
                            inp as isize,
                            1,
                            R::zero(),
                            dw.data_mut(),
                            inp as isize,
                            1,
                        );
                        acc(w, dw);
                    }
                    if let Some(b) = b.filter(|&b| needs(b)) {
                        let mut db = vec![R::zero(); out];
                        for row in gy.data().chunks(out) {
                            for (d, &g) in db.iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                        acc(b, Tensor::from_vec(&[out], db));
                    }
                }
                &Op::Upsample2x(a) => acc(a, kernels::upsample2x_backward(&gy)),
                &Op::AvgPool(a) => acc(a, kernels::avg_pool_backward(&gy, val(a).shape())),
                &Op::Resize(a) => acc(a, kernels::resize_bilinear_backward(&gy, val(a).shape())),
                Op::AdaIn {
                    x,
                    scale,
                    shift,
                    eps,
                    mean,
                    std,
                } => {
                    let (dx, dscale, dshift) =
                        adain_backward(&gy, val(*x), val(*scale), mean, std, *eps);
                    if needs(*x) {
                        acc(*x, dx);
                    }
                    if needs(*scale) {
                        acc(*scale, dscale);
                    }
                    if needs(*shift) {
                        acc(*shift, dshift);
                    }
                }
                &Op::Narrow { x, start } => {
                    let (n, full) = val(x).dims2();
                    let len = gy.shape()[1];
                    let mut dx = Tensor::zeros(&[n, full]);
                    for r in 0..n {
                        dx.data_mut()[r * full + start..r * full + start + len]
                            .copy_from_slice(&gy.data()[r * len..(r + 1) * len]);
                    }
                    acc(x, dx);
                }
                &Op::GlobalAvgPool(a) => {
                    let (n, c, h, w) = val(a).dims4();
                    let inv = R::of(1.0 / (h * w) as f64);
                    let mut dx = Vec::with_capacity(n * c * h * w);
                    for &g in gy.data() {
                        dx.extend(std::iter::repeat(g * inv).take(h * w));
                    }
                    acc(a, Tensor::from_vec(&[n, c, h, w], dx));
                }
                Op::NormalizeRows { x, norms } => {
                    let (n, d) = gy.dims2();
                    let y = &node.value;
                    let mut dx = Tensor::zeros(&[n, d]);
                    for r in 0..n {
                        let gr = &gy.data()[r * d..(r + 1) * d];
                        let yr = &y.data()[r * d..(r + 1) * d];
                        let dot: R = gr.iter().zip(yr).map(|(&g, &v)| g * v).sum();
                        let inv = R::one() / norms[r];
                        for j in 0..d {
                            dx.data_mut()[r * d + j] = (gr[j] - dot * yr[j]) * inv;
                        }
                    }
                    acc(*x, dx);
                }
                &Op::RowDot(a, b) => {
                    let (n, d) = val(a).dims2();
                    let scale_rows = |other: &Tensor<R>| {
                        let mut out = other.clone();
                        for r in 0..n {
                            let g = gy.data()[r];
                            out.data_mut()[r * d..(r + 1) * d]
                                .iter_mut()
                                .for_each(|v| *v *= g);
                        }
                        out
                    };
                    if needs(a) {
                        acc(a, scale_rows(val(b)));
                    }
                    if needs(b) {
                        acc(b, scale_rows(val(a)));
                    }
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let (n, k) = val(*logits).dims2();
                    let g = gy.data()[0] / R::of(n as f64);
                    let mut d = probs.clone();
                    for (r, &label) in labels.iter().enumerate() {
                        d[r * k + label] -= R::one();
                    }
                    d.iter_mut().for_each(|v| *v *= g);
                    acc(*logits, Tensor::from_vec(&[n, k], d));
                }
            }
        }
        Grads { grads }
    }
}

fn sign<R: Real>(x: R) -> R {
    if x > R::zero() {
        R::one()
    } else if x < R::zero() {
        -R::one()
    } else {
        R::zero()
    }
}

fn adain_forward<R: Real>(
    x: &Tensor<R>,
    scale: &Tensor<R>,
    shift: &Tensor<R>,
    eps: R,
) -> (Tensor<R>, Vec<R>, Vec<R>) {
    let (n, c, h, w) = x.dims4();
    assert_eq!(scale.shape(), &[n, c], "AdaIN scale must be [N, C]");
    assert_eq!(shift.shape(), &[n, c], "AdaIN shift must be [N, C]");
    let (mean, std) = kernels::instance_stats(x);
    let hw = h * w;
    let mut out = x.clone();
    for (p, plane) in out.data_mut().chunks_mut(hw).enumerate() {
        let k = scale.data()[p] / (std[p] + eps);
        let (m, b) = (mean[p], shift.data()[p]);
        plane.iter_mut().for_each(|v| *v = (*v - m) * k + b);
    }
    (out, mean, std)
}

fn adain_backward<R: Real>(
    gy: &Tensor<R>,
    x: &Tensor<R>,
    scale: &Tensor<R>,
    mean: &[R],
    std: &[R],
    eps: R,
) -> (Tensor<R>, Tensor<R>, Tensor<R>) {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let inv_n = R::of(1.0 / hw as f64);
    let mut dx = Tensor::zeros(x.shape());
    let mut dscale = Tensor::zeros(&[n, c]);
    let mut dshift = Tensor::zeros(&[n, c]);
    for p in 0..n * c {
        let xs = &x.data()[p * hw..(p + 1) * hw];
        let gs = &gy.data()[p * hw..(p + 1) * hw];
        let (m, s) = (mean[p], std[p]);
        let d = s + eps;
        let mut sum_g = R::zero();
        let mut sum_g_xc = R::zero();
        for (&xv, &g) in xs.iter().zip(gs) {
            sum_g += g;
            sum_g_xc += g * (xv - m);
        }
        dshift.data_mut()[p] = sum_g;
        dscale.data_mut()[p] = sum_g_xc / d;
        // y = a * xc / d + b; d depends on xc through the population std.
        let a = scale.data()[p];
        let dd = -a * sum_g_xc / (d * d);
        let dstd_coef = if s > R::zero() {
            dd * inv_n / s
        } else {
            R::zero()
        };
        let dxs = &mut dx.data_mut()[p * hw..(p + 1) * hw];
        let mut mean_dxc = R::zero();
        for ((o, &xv), &g) in dxs.iter_mut().zip(xs).zip(gs) {
            *o = a * g / d + dstd_coef * (xv - m);
            mean_dxc += *o;
        }
        mean_dxc = mean_dxc * inv_n;
        dxs.iter_mut().for_each(|o| *o -= mean_dxc);
    }
    (dx, dscale, dshift)
}

impl<'t, R: Real> Var<'t, R> {
    pub fn value(&self) -> Arc<Tensor<R>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    /// Scalar value of a single-element node.
    pub fn item(&self) -> R {
        self.value().data()[0]
    }

    pub fn tape(&self) -> &'t Tape<R> {
        self.tape
    }

    /// A constant leaf holding this node's value; no gradient flows back.
    pub fn detach(&self) -> Var<'t, R> {
        self.tape.constant(self.value())
    }

    fn unary(&self, value: Tensor<R>, op: Op<R>) -> Var<'t, R> {
        self.tape.push(Arc::new(value), op, self.requires_grad())
    }

    fn binary(&self, other: &Var<'t, R>, value: Tensor<R>, op: Op<R>) -> Var<'t, R> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(Arc::new(value), op, rg)
    }

    pub fn add(&self, other: &Var<'t, R>) -> Var<'t, R> {
        let v = self.value().zip_map(&other.value(), |a, b| a + b);
        self.binary(other, v, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'t, R>) -> Var<'t, R> {
        let v = self.value().zip_map(&other.value(), |a, b| a - b);
        self.binary(other, v, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'t, R>) -> Var<'t, R> {
        let v = self.value().zip_map(&other.value(), |a, b| a * b);
        self.binary(other, v, Op::Mul(self.id, other.id))
    }

    pub fn scale(&self, c: f64) -> Var<'t, R> {
        let c = R::of(c);
        self.unary(self.value().map(|x| x * c), Op::Scale(self.id, c))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t, R> {
        let c = R::of(c);
        self.unary(self.value().map(|x| x + c), Op::AddScalar(self.id))
    }

    pub fn sum(&self) -> Var<'t, R> {
        self.unary(Tensor::scalar(self.value().sum()), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t, R> {
        self.unary(Tensor::scalar(self.value().mean()), Op::Mean(self.id))
    }

    pub fn abs(&self) -> Var<'t, R> {
        self.unary(self.value().map(|x| x.abs()), Op::Abs(self.id))
    }

    pub fn relu(&self) -> Var<'t, R> {
        self.unary(self.value().map(|x| x.max(R::zero())), Op::Relu(self.id))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t, R> {
        let s = R::of(slope);
        let v = self.value().map(|x| if x > R::zero() { x } else { x * s });
        self.unary(v, Op::LeakyRelu(self.id, s))
    }

    pub fn tanh(&self) -> Var<'t, R> {
        self.unary(self.value().map(|x| x.tanh()), Op::Tanh(self.id))
    }

    pub fn square(&self) -> Var<'t, R> {
        self.mul(self)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'t, R> {
        let v = (*self.value()).clone().reshape(shape);
        self.unary(v, Op::Reshape(self.id))
    }

    /// 2-D convolution of `[N, Cin, H, W]` by `[Cout, Cin, k, k]`.
    pub fn conv2d(
        &self,
        w: &Var<'t, R>,
        b: Option<&Var<'t, R>>,
        stride: usize,
        pad: usize,
    ) -> Var<'t, R> {
        let x = self.value();
        let wv = w.value();
        let bv = b.map(|b| b.value());
        let (y, cols, geom) = kernels::conv2d_forward(&x, &wv, bv.as_deref(), stride, pad);
        let rg = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        let cols = w.requires_grad().then_some(cols);
        let op = Op::Conv2d {
            x: self.id,
            w: w.id,
            b: b.map(|b| b.id),
            geom,
            cols,
        };
        self.tape.push(Arc::new(y), op, rg)
    }

    /// `[N, in] x [out, in]^T + b`
    pub fn linear(&self, w: &Var<'t, R>, b: Option<&Var<'t, R>>) -> Var<'t, R> {
        let x = self.value();
        let wv = w.value();
        let (n, inp) = x.dims2();
        let (out, inp2) = wv.dims2();
        assert_eq!(
            inp, inp2,
            "linear input width {inp} does not match weight {inp2}"
        );
        let mut y = Tensor::zeros(&[n, out]);
        R::gemm(
            n,
            inp,
            out,
            R::one(),
            x.data(),
            inp as isize,
            1,
            wv.data(),
            1,
            inp as isize,
            R::zero(),
            y.data_mut(),
            out as isize,
            1,
        );
        if let Some(b) = b {
            let bv = b.value();
            for row in y.data_mut().chunks_mut(out) {
                row.iter_mut().zip(bv.data()).for_each(|(v, &bb)| *v += bb);
            }
        }
        let rg = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        self.tape.push(
            Arc::new(y),
            Op::Linear {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
            },
            rg,
        )
    }

    pub fn upsample2x(&self) -> Var<'t, R> {
        self.unary(kernels::upsample2x(&self.value()), Op::Upsample2x(self.id))
    }

    pub fn avg_pool(&self) -> Var<'t, R> {
        self.unary(kernels::avg_pool(&self.value()), Op::AvgPool(self.id))
    }

    pub fn resize(&self, h: usize, w: usize) -> Var<'t, R> {
        let shape = self.shape();
        if shape[2] == h && shape[3] == w {
            return *self;
        }
        self.unary(
            kernels::resize_bilinear(&self.value(), h, w),
            Op::Resize(self.id),
        )
    }

    /// Adaptive instance normalization: each `(sample, channel)` plane is
    /// standardized with its own mean and population std (`eps` added to
    /// the std), then scaled and shifted by the `[N, C]` conditioning inputs.
    pub fn adain(&self, scale: &Var<'t, R>, shift: &Var<'t, R>, eps: f64) -> Var<'t, R> {
        let eps = R::of(eps);
        let (y, mean, std) = adain_forward(&self.value(), &scale.value(), &shift.value(), eps);
        let rg = self.requires_grad() || scale.requires_grad() || shift.requires_grad();
        let op = Op::AdaIn {
            x: self.id,
            scale: scale.id,
            shift: shift.id,
            eps,
            mean,
            std,
        };
        self.tape.push(Arc::new(y), op, rg)
    }

    /// Columns `start..start+len` of a `[N, D]` matrix.
    pub fn narrow(&self, start: usize, len: usize) -> Var<'t, R> {
        let x = self.value();
        let (n, d) = x.dims2();
        assert!(start + len <= d, "narrow out of range");
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&x.data()[r * d + start..r * d + start + len]);
        }
        self.unary(
            Tensor::from_vec(&[n, len], out),
            Op::Narrow { x: self.id, start },
        )
    }

    /// `[N, C, H, W] -> [N, C]`
    pub fn global_avg_pool(&self) -> Var<'t, R> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let inv = R::of(1.0 / (h * w) as f64);
        let v = x
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<R>() * inv)
            .collect();
        self.unary(Tensor::from_vec(&[n, c], v), Op::GlobalAvgPool(self.id))
    }

    /// Scales every row of a `[N, D]` matrix to unit L2 norm. Zero rows stay
    /// zero.
    pub fn normalize_rows(&self) -> Var<'t, R> {
        let x = self.value();
        let (n, d) = x.dims2();
        let mut out = (*x).clone();
        let mut norms = Vec::with_capacity(n);
        for row in out.data_mut().chunks_mut(d) {
            let norm = row.iter().map(|&v| v * v).sum::<R>().sqrt();
            let safe = if norm > R::zero() { norm } else { R::one() };
            row.iter_mut().for_each(|v| *v = *v / safe);
            norms.push(safe);
        }
        self.unary(out, Op::NormalizeRows { x: self.id, norms })
    }

    /// Row-wise dot product of two `[N, D]` matrices, giving `[N]`.
    pub fn row_dot(&self, other: &Var<'t, R>) -> Var<'t, R> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "row_dot shape mismatch");
        let (n, d) = a.dims2();
        let v = (0..n)
            .map(|r| {
                (0..d)
                    .map(|j| a.data()[r * d + j] * b.data()[r * d + j])
                    .sum()
            })
            .collect();
        self.binary(
            other,
            Tensor::from_vec(&[n], v),
            Op::RowDot(self.id, other.id),
        )
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against class labels.
    pub fn cross_entropy(&self, labels: &[usize]) -> Var<'t, R> {
        let x = self.value();
        let (n, k) = x.dims2();
        assert_eq!(labels.len(), n, "one label per row");
        let mut probs = Vec::with_capacity(n * k);
        let mut loss = R::zero();
        for (row, &label) in x.data().chunks(k).zip(labels) {
            let max = row.iter().copied().fold(R::neg_infinity(), R::max);
            let exps: Vec<R> = row.iter().map(|&v| (v - max).exp()).collect();
            let z: R = exps.iter().copied().sum();
            loss += z.ln() + max - row[label];
            probs.extend(exps.iter().map(|&e| e / z));
        }
        let v = Tensor::scalar(loss / R::of(n as f64));
        self.unary(
            v,
            Op::CrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
        )
    }
}
