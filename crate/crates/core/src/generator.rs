//! Encoder -> identity injection -> decoder.
//!
//! The encoder maps the target image to a `C x H/8 x W/8` feature, a stack of
//! residual ID-blocks rewrites that feature conditioned on the source identity
//! vector through AdaIN, and the decoder restores an image in `[-1, 1]`.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::config::{TrainConfig, ENCODER_DEPTH};
use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv, Linear, ParamStore};
use crate::tensor::{Real, Tensor};
use crate::types::{FeatureMap, IdentityVector, ImageTensor};

/// Added to the per-channel std in the AdaIN denominator.
pub const ADAIN_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.2;
/// Initial weight scale of the last conv in each ID-block branch, so a deep
/// stack starts close to the identity map.
pub const BRANCH_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorArch {
    /// Encoder output channels per stride-2 stage; the last entry is the
    /// bottleneck width `C`. The decoder mirrors them.
    pub widths: [usize; 3],
    pub n_id_blocks: usize,
    pub id_dim: usize,
}

impl GeneratorArch {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            widths: [64, 128, 256],
            n_id_blocks: cfg.n_id_blocks,
            id_dim: cfg.id_dim,
        }
    }

    pub fn channels(&self) -> usize {
        self.widths[2]
    }
}

/// One residual block whose normalizations are AdaIN sites driven by the
/// identity vector.
#[derive(Clone, Debug)]
pub struct IdBlock {
    pub conv1: Conv,
    pub conv2: Conv,
    /// Each head maps the identity vector to `[scale (C), shift (C)]`.
    pub head1: Linear,
    pub head2: Linear,
    pub channels: usize,
}

#[derive(Clone, Debug)]
pub struct Generator<R: Real = f32> {
    arch: GeneratorArch,
    params: ParamStore<R>,
    encoder: Vec<Conv>,
    blocks: Vec<IdBlock>,
    decoder: Vec<Conv>,
}

fn head_bias<R: Real>(c: usize) -> Tensor<R> {
    let mut b = vec![R::zero(); 2 * c];
    b[..c].iter_mut().for_each(|v| *v = R::one());
    Tensor::from_vec(&[2 * c], b)
}

impl<R: Real> Generator<R> {
    pub fn new(arch: GeneratorArch, rng: &mut impl Rng) -> Self {
        assert!(arch.n_id_blocks >= 1, "at least one ID-block");
        let mut params = ParamStore::new();
        let [w0, w1, w2] = arch.widths;
        let encoder = vec![
            Conv::new(&mut params, "enc.0", 3, w0, 3, 2, 1, true, rng),
            Conv::new(&mut params, "enc.1", w0, w1, 3, 2, 1, true, rng),
            Conv::new(&mut params, "enc.2", w1, w2, 3, 2, 1, true, rng),
        ];
        let head_std = 0.2;
        let blocks = (0..arch.n_id_blocks)
            .map(|i| IdBlock {
                conv1: Conv::new(
                    &mut params,
                    &format!("iim.{i}.conv1"),
                    w2,
                    w2,
                    3,
                    1,
                    1,
                    false,
                    rng,
                ),
                conv2: Conv::new(
                    &mut params,
                    &format!("iim.{i}.conv2"),
                    w2,
                    w2,
                    3,
                    1,
                    1,
                    false,
                    rng,
                ),
                head1: Linear::new(
                    &mut params,
                    &format!("iim.{i}.head1"),
                    arch.id_dim,
                    2 * w2,
                    head_std,
                    Some(head_bias(w2)),
                    rng,
                ),
                head2: Linear::new(
                    &mut params,
                    &format!("iim.{i}.head2"),
                    arch.id_dim,
                    2 * w2,
                    head_std,
                    Some(head_bias(w2)),
                    rng,
                ),
                channels: w2,
            })
            .collect::<Vec<IdBlock>>();
        let scale = R::from_f64(BRANCH_INIT_SCALE).unwrap();
        for block in &blocks {
            let w = params.get_mut(block.conv2.weight);
            w.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        let decoder = vec![
            Conv::new(&mut params, "dec.0", w2, w1, 3, 1, 1, true, rng),
            Conv::new(&mut params, "dec.1", w1, w0, 3, 1, 1, true, rng),
            Conv::new(&mut params, "dec.2", w0, 3, 3, 1, 1, true, rng),
        ];
        Self {
            arch,
            params,
            encoder,
            blocks,
            decoder,
        }
    }

    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore<R> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<R> {
        &mut self.params
    }

    pub fn blocks(&self) -> &[IdBlock] {
        &self.blocks
    }

    /// Same architecture and weights in another element type.
    pub fn cast<S: Real>(&self) -> Generator<S> {
        Generator {
            arch: self.arch.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            blocks: self.blocks.clone(),
            decoder: self.decoder.clone(),
        }
    }

    /// Replaces the parameters with ones of identical names and shapes.
    pub fn load_params(&mut self, params: ParamStore<R>) -> Result<()> {
        check_same_layout(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    pub fn check_size(&self, h: usize, w: usize) -> Result<()> {
        let unit = 1 << ENCODER_DEPTH;
        if h == 0 || w == 0 || h % unit != 0 || w % unit != 0 {
            return Err(Error::shape(
                format!("height and width divisible by {unit}"),
                format!("{h}x{w}"),
            ));
        }
        Ok(())
    }

    pub fn encode_var<'t>(&self, p: &Bound<'t, R>, x: &Var<'t, R>) -> Var<'t, R> {
        self.encoder
            .iter()
            .fold(*x, |h, conv| conv.forward(p, &h).leaky_relu(LEAKY_SLOPE))
    }

    /// `fea + conv2(act(adain(conv1(act(adain(fea, head1(v)))), head2(v))))`
    pub fn id_block_var<'t>(
        &self,
        p: &Bound<'t, R>,
        index: usize,
        fea: &Var<'t, R>,
        id: &Var<'t, R>,
    ) -> Var<'t, R> {
        let block = &self.blocks[index];
        let c = block.channels;
        let h1 = block.head1.forward(p, id);
        let x = fea
            .adain(&h1.narrow(0, c), &h1.narrow(c, c), ADAIN_EPS)
            .leaky_relu(LEAKY_SLOPE);
        let x = block.conv1.forward(p, &x);
        let h2 = block.head2.forward(p, id);
        let x = x
            .adain(&h2.narrow(0, c), &h2.narrow(c, c), ADAIN_EPS)
            .leaky_relu(LEAKY_SLOPE);
        let x = block.conv2.forward(p, &x);
        fea.add(&x)
    }

    pub fn inject_var<'t>(
        &self,
        p: &Bound<'t, R>,
        fea: &Var<'t, R>,
        id: &Var<'t, R>,
    ) -> Var<'t, R> {
        (0..self.blocks.len()).fold(*fea, |h, i| self.id_block_var(p, i, &h, id))
    }

    pub fn decode_var<'t>(&self, p: &Bound<'t, R>, fea: &Var<'t, R>) -> Var<'t, R> {
        let last = self.decoder.len() - 1;
        self.decoder.iter().enumerate().fold(*fea, |h, (i, conv)| {
            let y = conv.forward(p, &h.upsample2x());
            if i == last {
                y.tanh()
            } else {
                y.leaky_relu(LEAKY_SLOPE)
            }
        })
    }

    /// Full pipeline on `[N, 3, H, W]` targets and `[N, d]` identity vectors.
    pub fn forward_var<'t>(
        &self,
        p: &Bound<'t, R>,
        target: &Var<'t, R>,
        id: &Var<'t, R>,
    ) -> Var<'t, R> {
        let fea = self.encode_var(p, target);
        let fea = self.inject_var(p, &fea, id);
        self.decode_var(p, &fea)
    }

    pub fn encode(&self, image: &ImageTensor) -> Result<FeatureMap<R>> {
        self.check_size(image.height(), image.width())?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let x = tape.constant(image.to_tensor::<R>());
        FeatureMap::new((*self.encode_var(&p, &x).value()).clone())
    }

    fn check_feature(&self, fea: &FeatureMap<R>) -> Result<()> {
        let (c, _, _) = fea.dims();
        if c != self.arch.channels() {
            return Err(Error::shape(
                format!("{} channels", self.arch.channels()),
                format!("{c} channels"),
            ));
        }
        Ok(())
    }

    fn check_identity(&self, v: &IdentityVector) -> Result<()> {
        if v.dim() != self.arch.id_dim {
            return Err(Error::shape(
                format!("identity dim {}", self.arch.id_dim),
                format!("dim {}", v.dim()),
            ));
        }
        Ok(())
    }

    pub fn id_block(
        &self,
        index: usize,
        fea: &FeatureMap<R>,
        v: &IdentityVector,
    ) -> Result<FeatureMap<R>> {
        if index >= self.blocks.len() {
            return Err(Error::InvalidInput(format!("no ID-block {index}")));
        }
        self.check_feature(fea)?;
        self.check_identity(v)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let x = tape.constant(fea.batched());
        let id = tape.constant(IdentityVector::batch::<R>(&[v]));
        FeatureMap::new((*self.id_block_var(&p, index, &x, &id).value()).clone())
    }

    pub fn inject_identity(
        &self,
        fea: &FeatureMap<R>,
        v: &IdentityVector,
    ) -> Result<FeatureMap<R>> {
        self.check_feature(fea)?;
        self.check_identity(v)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let x = tape.constant(fea.batched());
        let id = tape.constant(IdentityVector::batch::<R>(&[v]));
        FeatureMap::new((*self.inject_var(&p, &x, &id).value()).clone())
    }

    pub fn decode(&self, fea: &FeatureMap<R>) -> Result<ImageTensor> {
        self.check_feature(fea)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let x = tape.constant(fea.batched());
        let out = self.decode_var(&p, &x).value();
        Ok(ImageTensor::unbatch(&out)?.remove(0))
    }

    /// Source identity rendered onto the target.
    pub fn generate(
        &self,
        embedder: &Embedder<R>,
        source: &ImageTensor,
        target: &ImageTensor,
    ) -> Result<ImageTensor> {
        let v = embedder.embed(source)?;
        self.swap_with_identity(&v, target)
    }

    pub fn swap_with_identity(
        &self,
        v: &IdentityVector,
        target: &ImageTensor,
    ) -> Result<ImageTensor> {
        Ok(self.swap_batch(&[v], &[target])?.remove(0))
    }

    /// Batched inference; one identity per target.
    pub fn swap_batch(
        &self,
        ids: &[&IdentityVector],
        targets: &[&ImageTensor],
    ) -> Result<Vec<ImageTensor>> {
        if ids.len() != targets.len() {
            return Err(Error::InvalidInput("one identity vector per target".into()));
        }
        for v in ids {
            self.check_identity(v)?;
        }
        let x = ImageTensor::batch::<R>(targets)?;
        let (_, _, h, w) = x.dims4();
        self.check_size(h, w)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let xv = tape.constant(x);
        let id = tape.constant(IdentityVector::batch::<R>(ids));
        let out = self.forward_var(&p, &xv, &id).value();
        ImageTensor::unbatch(&out)
    }
}

pub(crate) fn check_same_layout<R: Real>(have: &ParamStore<R>, got: &ParamStore<R>) -> Result<()> {
    if have.len() != got.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            have.len(),
            got.len()
        )));
    }
    for ((n1, t1), (n2, t2)) in have.iter().zip(got.iter()) {
        if n1 != n2 || t1.shape() != t2.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor layout mismatch: expected {n1} {:?}, found {n2} {:?}",
                t1.shape(),
                t2.shape()
            )));
        }
    }
    Ok(())
}

/// AdaIN on a single feature map:
/// `sigma_s[c] * (fea_c - mean(fea_c)) / (std(fea_c) + eps) + mu_s[c]`
/// with the population std over the spatial extent.
pub fn adain<R: Real>(
    fea: &FeatureMap<R>,
    sigma_s: &[R],
    mu_s: &[R],
    eps: f64,
) -> Result<FeatureMap<R>> {
    let (c, _, _) = fea.dims();
    if sigma_s.len() != c || mu_s.len() != c {
        return Err(Error::shape(
            format!("{c} scale and shift values"),
            format!("{} and {}", sigma_s.len(), mu_s.len()),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("eps must be positive".into()));
    }
    let tape = Tape::new();
    let x = tape.constant(fea.batched());
    let s = tape.constant(Tensor::from_vec(&[1, c], sigma_s.to_vec()));
    let m = tape.constant(Tensor::from_vec(&[1, c], mu_s.to_vec()));
    FeatureMap::new((*x.adain(&s, &m, eps).value()).clone())
}
