//! Parameter storage and the two parametric layers every network is built
//! from.

use std::sync::Arc;

use rand::Rng;

use crate::autograd::{Grads, Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named, ordered parameter tensors of one network.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<R: Real> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<R>>>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<R>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(Arc::new(t));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<R> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        Arc::make_mut(&mut self.tensors[id.0])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter().map(|t| &**t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<R>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter_mut().map(Arc::make_mut))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<R>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &*self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Registers every parameter as a leaf of `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<R>, trainable: bool) -> Bound<'t, R> {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| tape.leaf(t.clone(), trainable))
                .collect(),
        }
    }

    /// Same parameter names and shapes, converted element type.
    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
        }
    }

    /// Bitwise equality of every tensor.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}

/// Parameters of one network bound to a tape for a single pass.
pub struct Bound<'t, R: Real> {
    vars: Vec<Var<'t, R>>,
}

impl<'t, R: Real> Bound<'t, R> {
    pub fn var(&self, id: ParamId) -> Var<'t, R> {
        self.vars[id.0]
    }

    /// Gradient for every parameter, zeros where none flowed.
    pub fn grads(&self, grads: &Grads<R>) -> Vec<Tensor<R>> {
        self.vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    }
}

/// He-normal initialization for a layer followed by a leaky rectifier.
fn he_std(fan_in: usize, slope: f64) -> f64 {
    (2.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt()
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let std = he_std(cin * k * k, 0.2);
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::randn(&[cout, cin, k, k], std, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward<'t, R: Real>(&self, p: &Bound<'t, R>, x: &Var<'t, R>) -> Var<'t, R> {
        let b = self.bias.map(|b| p.var(b));
        x.conv2d(&p.var(self.weight), b.as_ref(), self.stride, self.pad)
    }

    /// The convolution without its bias; the linear part of the layer.
    pub fn forward_linear<'t, R: Real>(&self, p: &Bound<'t, R>, x: &Var<'t, R>) -> Var<'t, R> {
        x.conv2d(&p.var(self.weight), None, self.stride, self.pad)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        inp: usize,
        out: usize,
        std: f64,
        bias_init: Option<Tensor<R>>,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::randn(&[out, inp], std, rng),
        );
        let bias = bias_init.map(|b| {
            assert_eq!(b.shape(), &[out]);
            store.add(format!("{name}.bias"), b)
        });
        Self { weight, bias }
    }

    pub fn forward<'t, R: Real>(&self, p: &Bound<'t, R>, x: &Var<'t, R>) -> Var<'t, R> {
        let b = self.bias.map(|b| p.var(b));
        x.linear(&p.var(self.weight), b.as_ref())
    }
}
