//! Multi-scale patch discriminators.
//!
//! Scale `s` (1-based) sees the input average-pooled `s - 1` times and runs its
//! own five-layer network: four stride-2 4x4 convolutions with leaky
//! rectifiers, then a 3x3 convolution producing a one-channel score map. The
//! outputs of all five layers are exposed as features for feature matching.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::config::{TrainConfig, DISC_LAYERS};
use crate::error::{Error, Result};
use crate::generator::check_same_layout;
use crate::losses::Critic;
use crate::nn::{Bound, Conv, ParamStore};
use crate::tensor::{Real, Tensor};
use crate::types::{FeatureMap, ImageTensor};

const SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscriminatorArch {
    pub widths: [usize; 4],
    pub n_scales: usize,
    /// Input side length at scale 1, used for feature element counts.
    pub image_size: usize,
}

impl DiscriminatorArch {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            widths: [64, 128, 256, 512],
            n_scales: cfg.n_discriminators,
            image_size: cfg.image_size,
        }
    }
}

#[derive(Clone, Debug)]
struct PatchNet {
    convs: Vec<Conv>,
}

#[derive(Clone, Debug)]
pub struct Discriminator<R: Real = f32> {
    arch: DiscriminatorArch,
    params: ParamStore<R>,
    nets: Vec<PatchNet>,
}

/// Per-layer outputs of one scale. `features[M - 1]` is the score map.
pub struct ScaleOutput<'t, R: Real> {
    pub features: Vec<Var<'t, R>>,
    /// Inputs of the four leaky rectifiers.
    pub pre_activations: Vec<Var<'t, R>>,
}

impl<'t, R: Real> ScaleOutput<'t, R> {
    pub fn score(&self) -> Var<'t, R> {
        *self.features.last().expect("non-empty")
    }
}

impl<R: Real> Discriminator<R> {
    pub fn new(arch: DiscriminatorArch, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new();
        let nets = (1..=arch.n_scales)
            .map(|s| {
                let mut cin = 3;
                let mut convs: Vec<Conv> = arch
                    .widths
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| {
                        let c = Conv::new(
                            &mut params,
                            &format!("d{s}.conv{}", i + 1),
                            cin,
                            w,
                            4,
                            2,
                            1,
                            true,
                            rng,
                        );
                        cin = w;
                        c
                    })
                    .collect();
                convs.push(Conv::new(
                    &mut params,
                    &format!("d{s}.score"),
                    cin,
                    1,
                    3,
                    1,
                    1,
                    true,
                    rng,
                ));
                PatchNet { convs }
            })
            .collect();
        Self { arch, params, nets }
    }

    pub fn arch(&self) -> &DiscriminatorArch {
        &self.arch
    }

    pub fn n_scales(&self) -> usize {
        self.arch.n_scales
    }

    pub fn params(&self) -> &ParamStore<R> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<R> {
        &mut self.params
    }

    pub fn load_params(&mut self, params: ParamStore<R>) -> Result<()> {
        check_same_layout(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    pub fn cast<S: Real>(&self) -> Discriminator<S> {
        Discriminator {
            arch: self.arch.clone(),
            params: self.params.cast(),
            nets: self.nets.clone(),
        }
    }

    /// Runs scale `scale` (0-based) on a `[N, 3, H, W]` batch.
    pub fn forward_scale_var<'t>(
        &self,
        p: &Bound<'t, R>,
        x: &Var<'t, R>,
        scale: usize,
    ) -> ScaleOutput<'t, R> {
        let net = &self.nets[scale];
        let mut h = (0..scale).fold(*x, |h, _| h.avg_pool());
        let mut features = Vec::with_capacity(DISC_LAYERS);
        let mut pre_activations = Vec::with_capacity(DISC_LAYERS - 1);
        let last = net.convs.len() - 1;
        for (i, conv) in net.convs.iter().enumerate() {
            let z = conv.forward(p, &h);
            if i == last {
                h = z;
            } else {
                pre_activations.push(z);
                h = z.leaky_relu(SLOPE);
            }
            features.push(h);
        }
        ScaleOutput {
            features,
            pre_activations,
        }
    }

    pub fn forward_var<'t>(&self, p: &Bound<'t, R>, x: &Var<'t, R>) -> Vec<ScaleOutput<'t, R>> {
        (0..self.arch.n_scales)
            .map(|s| self.forward_scale_var(p, x, s))
            .collect()
    }

    fn check_scale(&self, scale_index: usize) -> Result<()> {
        if !(1..=self.arch.n_scales).contains(&scale_index) {
            return Err(Error::InvalidInput(format!(
                "scale_index must be in 1..={}, got {scale_index}",
                self.arch.n_scales
            )));
        }
        Ok(())
    }

    /// Score map and the `M` layer features of one image at a 1-based scale.
    pub fn disc_forward(
        &self,
        image: &ImageTensor,
        scale_index: usize,
    ) -> Result<(Tensor<R>, Vec<FeatureMap<R>>)> {
        self.check_scale(scale_index)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let out =
            self.forward_scale_var(&p, &tape.constant(image.to_tensor::<R>()), scale_index - 1);
        let features = out
            .features
            .iter()
            .map(|f| FeatureMap::new((*f.value()).clone()))
            .collect::<Result<Vec<_>>>()?;
        let (_, _, h, w) = out.score().value().dims4();
        let score = (*out.score().value()).clone().reshape(&[h, w]);
        Ok((score, features))
    }

    /// Element count `N_i` of 1-based layer `layer` at scale 1 for the
    /// configured input size.
    pub fn feature_count(&self, layer: usize) -> Result<usize> {
        self.feature_count_at(layer, 1)
    }

    pub fn feature_count_at(&self, layer: usize, scale_index: usize) -> Result<usize> {
        self.check_scale(scale_index)?;
        if !(1..=DISC_LAYERS).contains(&layer) {
            return Err(Error::InvalidInput(format!(
                "layer must be in 1..={DISC_LAYERS}, got {layer}"
            )));
        }
        let mut side = self.arch.image_size;
        for _ in 1..scale_index {
            side = (side - 1) / 2 + 1;
        }
        for _ in 0..layer.min(DISC_LAYERS - 1) {
            side = (side + 2 - 4) / 2 + 1;
        }
        let channels = if layer == DISC_LAYERS {
            1
        } else {
            self.arch.widths[layer - 1]
        };
        Ok(channels * side * side)
    }

    /// Gradient penalty on the interpolates `x_hat` together with its
    /// gradient with respect to every discriminator parameter.
    ///
    /// The penalty is the mean over samples and scales of
    /// `(|grad_x sum(score)| - 1)^2`. Its parameter gradient needs the
    /// derivative of an input gradient. Leaky rectifiers are piecewise linear,
    /// so away from kinks `u . grad_x s(x)` equals the output of the network's
    /// linearization at `x` (fixed activation slopes, no biases) applied to
    /// `u`; differentiating that linear network with respect to its weights
    /// gives the exact second-order term.
    pub fn penalty_and_grads(&self, x_hat: &Tensor<R>) -> (f64, Vec<Tensor<R>>) {
        let n = x_hat.shape()[0];
        let per = x_hat.len() / n;
        let denom = (n * self.arch.n_scales) as f64;
        let mut grads: Vec<Tensor<R>> = self
            .params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        let mut penalty = 0.0;
        for scale in 0..self.arch.n_scales {
            let tape = Tape::new();
            let p = self.params.bind(&tape, false);
            let x = tape.leaf(x_hat.clone(), true);
            let out = self.forward_scale_var(&p, &x, scale);
            let g = tape.backward(out.score().sum()).get_or_zeros(x);
            let slope = R::of(SLOPE);
            let masks: Vec<Tensor<R>> = out
                .pre_activations
                .iter()
                .map(|z| {
                    z.value()
                        .map(|v| if v > R::zero() { R::one() } else { slope })
                })
                .collect();

            let mut tangent = g.clone();
            for (i, gi) in g.data().chunks(per).enumerate() {
                let norm = gi
                    .iter()
                    .map(|v| v.as_f64() * v.as_f64())
                    .sum::<f64>()
                    .sqrt();
                penalty += (norm - 1.0) * (norm - 1.0) / denom;
                let coef = if norm > 0.0 {
                    2.0 * (norm - 1.0) / (denom * norm)
                } else {
                    0.0
                };
                let coef = R::of(coef);
                tangent.data_mut()[i * per..(i + 1) * per]
                    .iter_mut()
                    .for_each(|v| *v *= coef);
            }

            let tape = Tape::new();
            let p = self.params.bind(&tape, true);
            let mut t = (0..scale).fold(tape.constant(tangent), |t, _| t.avg_pool());
            let convs = &self.nets[scale].convs;
            for (conv, mask) in convs.iter().zip(masks) {
                t = conv.forward_linear(&p, &t).mul(&tape.constant(mask));
            }
            let score_t = convs.last().expect("score layer").forward_linear(&p, &t);
            let tg = tape.backward(score_t.sum());
            for (acc, g) in grads.iter_mut().zip(p.grads(&tg)) {
                acc.add_assign(&g);
            }
        }
        (penalty, grads)
    }
}

impl<R: Real> Critic<R> for Discriminator<R> {
    fn n_scales(&self) -> usize {
        self.arch.n_scales
    }

    fn input_gradient(&self, x: &Tensor<R>, scale: usize) -> Tensor<R> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let xv = tape.leaf(x.clone(), true);
        let out = self.forward_scale_var(&p, &xv, scale);
        tape.backward(out.score().sum()).get_or_zeros(xv)
    }
}
