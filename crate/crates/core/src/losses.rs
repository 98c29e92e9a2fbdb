//! Loss terms for the swapping generator and the discriminators.
//!
//! Each loss comes in two flavours: a plain function on domain values that
//! returns an `f64`, and a `*_var` function that records the same computation
//! on an autograd tape for training.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::config::{FmKind, FmVariant, TrainConfig};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::types::{FeatureMap, IdentityVector, ImageTensor};

/// Anything that maps image batches to per-scale score maps and can report the
/// input gradient of the summed score.
pub trait Critic<R: Real> {
    fn n_scales(&self) -> usize;

    /// `d sum(score_scale(x)) / dx` for a `[N, 3, H, W]` batch; `scale` is 0-based.
    fn input_gradient(&self, x: &Tensor<R>, scale: usize) -> Tensor<R>;
}

/// Per-step loss values written to the training log.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_id: f64,
    pub l_recon: f64,
    pub l_adv_g: f64,
    pub l_adv_d: f64,
    pub l_gp: f64,
    pub l_fm: f64,
    pub total_g: f64,
}

impl LossReport {
    /// Fills in `total_g` from the other components.
    pub fn new(
        l_id: f64,
        l_recon: f64,
        l_adv_g: f64,
        l_adv_d: f64,
        l_gp: f64,
        l_fm: f64,
        cfg: &TrainConfig,
    ) -> Self {
        let terms = GeneratorTerms {
            l_id,
            l_recon,
            l_adv: l_adv_g,
            l_fm,
        };
        Self {
            l_id,
            l_recon,
            l_adv_g,
            l_adv_d,
            l_gp,
            l_fm,
            total_g: total_generator_loss(&terms, cfg),
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l_id,
            self.l_recon,
            self.l_adv_g,
            self.l_adv_d,
            self.l_gp,
            self.l_fm,
            self.total_g,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// The generator-side components that enter the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeneratorTerms {
    pub l_id: f64,
    pub l_recon: f64,
    pub l_adv: f64,
    pub l_fm: f64,
}

pub fn total_generator_loss(terms: &GeneratorTerms, cfg: &TrainConfig) -> f64 {
    cfg.lambda_id * terms.l_id
        + cfg.lambda_recon * terms.l_recon
        + cfg.lambda_adv * terms.l_adv
        + cfg.lambda_fm * terms.l_fm
}

pub fn identity_loss(v_r: &IdentityVector, v_s: &IdentityVector) -> Result<f64> {
    identity_loss_raw(
        &v_r.as_slice().iter().map(|&v| v as f64).collect::<Vec<_>>(),
        &v_s.as_slice().iter().map(|&v| v as f64).collect::<Vec<_>>(),
    )
}

/// `1 - cos(v_r, v_s)` on unnormalized vectors.
pub fn identity_loss_raw(v_r: &[f64], v_s: &[f64]) -> Result<f64> {
    if v_r.len() != v_s.len() {
        return Err(Error::shape(
            format!("{} elements", v_s.len()),
            format!("{} elements", v_r.len()),
        ));
    }
    let nr = v_r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ns = v_s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nr == 0.0 || ns == 0.0 {
        return Err(Error::InvalidInput("identity loss of a zero vector".into()));
    }
    let dot: f64 = v_r.iter().zip(v_s).map(|(a, b)| a * b).sum();
    Ok((1.0 - dot / (nr * ns)).clamp(0.0, 2.0))
}

pub fn reconstruction_loss(
    i_r: &ImageTensor,
    i_t: &ImageTensor,
    same_identity: bool,
) -> Result<f64> {
    let diff = i_r.mean_abs_diff(i_t)?;
    Ok(if same_identity { diff } else { 0.0 })
}

fn check_feature_lists<R: Real>(
    feats_r: &[FeatureMap<R>],
    feats_t: &[FeatureMap<R>],
) -> Result<()> {
    if feats_r.len() != feats_t.len() {
        return Err(Error::shape(
            format!("{} layers", feats_t.len()),
            format!("{} layers", feats_r.len()),
        ));
    }
    for (r, t) in feats_r.iter().zip(feats_t) {
        if r.dims() != t.dims() {
            return Err(Error::shape(
                format!("{:?}", t.dims()),
                format!("{:?}", r.dims()),
            ));
        }
    }
    Ok(())
}

/// Sum over the variant's layers of the mean absolute feature difference.
pub fn feature_matching_loss<R: Real>(
    feats_r: &[FeatureMap<R>],
    feats_t: &[FeatureMap<R>],
    variant: FmVariant,
) -> Result<f64> {
    check_feature_lists(feats_r, feats_t)?;
    let terms: Vec<f64> = feats_r
        .iter()
        .zip(feats_t)
        .map(|(r, t)| {
            let (r, t) = (r.tensor().data(), t.tensor().data());
            r.iter()
                .zip(t)
                .map(|(&a, &b)| (a - b).abs().as_f64())
                .sum::<f64>()
                / r.len() as f64
        })
        .collect();
    // Layers before and from the split point are summed separately so that
    // the full variant is exactly the sum of the weak and early variants.
    let split = variant.start_layer.saturating_sub(1).min(terms.len());
    let early: f64 = terms[..split].iter().sum();
    let late: f64 = terms[split..].iter().sum();
    Ok(match variant.kind {
        FmKind::Full => early + late,
        FmKind::Weak => late,
        FmKind::Early => early,
        FmKind::Off => 0.0,
    })
}

pub fn fm_sum<R: Real>(
    feats_r_per_scale: &[Vec<FeatureMap<R>>],
    feats_t_per_scale: &[Vec<FeatureMap<R>>],
    variant: FmVariant,
) -> Result<f64> {
    if feats_r_per_scale.len() != feats_t_per_scale.len() {
        return Err(Error::shape(
            format!("{} scales", feats_t_per_scale.len()),
            format!("{} scales", feats_r_per_scale.len()),
        ));
    }
    feats_r_per_scale
        .iter()
        .zip(feats_t_per_scale)
        .map(|(r, t)| feature_matching_loss(r, t, variant))
        .sum()
}

fn mean_of<R: Real>(t: &Tensor<R>, f: impl Fn(f64) -> f64) -> f64 {
    t.data().iter().map(|v| f(v.as_f64())).sum::<f64>() / t.len() as f64
}

/// Discriminator hinge loss; each slice entry holds one scale's score maps.
pub fn hinge_d_loss<R: Real>(real_scores: &[Tensor<R>], fake_scores: &[Tensor<R>]) -> f64 {
    let real: f64 = real_scores
        .iter()
        .map(|t| mean_of(t, |v| (1.0 - v).max(0.0)))
        .sum();
    let fake: f64 = fake_scores
        .iter()
        .map(|t| mean_of(t, |v| (1.0 + v).max(0.0)))
        .sum();
    real + fake
}

pub fn hinge_g_loss<R: Real>(fake_scores: &[Tensor<R>]) -> f64 {
    -fake_scores.iter().map(|t| mean_of(t, |v| v)).sum::<f64>()
}

/// Gradient penalty on uniformly drawn per-sample interpolates.
pub fn gradient_penalty<R: Real>(
    critic: &impl Critic<R>,
    real: &Tensor<R>,
    fake: &Tensor<R>,
    rng: &mut impl Rng,
) -> Result<f64> {
    let alphas: Vec<f64> = (0..real.shape().first().copied().unwrap_or(0))
        .map(|_| rng.gen::<f64>())
        .collect();
    gradient_penalty_at(critic, real, fake, &alphas)
}

/// `x_hat = alpha * real + (1 - alpha) * fake` per sample.
pub fn interpolate<R: Real>(
    real: &Tensor<R>,
    fake: &Tensor<R>,
    alphas: &[f64],
) -> Result<Tensor<R>> {
    if real.shape() != fake.shape() {
        return Err(Error::shape(
            format!("{:?}", real.shape()),
            format!("{:?}", fake.shape()),
        ));
    }
    let n = real.shape().first().copied().unwrap_or(0);
    if n == 0 || alphas.len() != n {
        return Err(Error::InvalidInput(format!(
            "need {n} interpolation weights, got {}",
            alphas.len()
        )));
    }
    let per = real.len() / n;
    let mut out = fake.clone();
    for (i, chunk) in out.data_mut().chunks_mut(per).enumerate() {
        let a = R::of(alphas[i]);
        for (o, &r) in chunk.iter_mut().zip(&real.data()[i * per..(i + 1) * per]) {
            *o = a * r + (R::one() - a) * *o;
        }
    }
    Ok(out)
}

pub fn gradient_penalty_at<R: Real>(
    critic: &impl Critic<R>,
    real: &Tensor<R>,
    fake: &Tensor<R>,
    alphas: &[f64],
) -> Result<f64> {
    let x_hat = interpolate(real, fake, alphas)?;
    Ok(penalty_from_input(critic, &x_hat))
}

/// Mean over samples and scales of `(|grad| - 1)^2` at fixed inputs.
pub fn penalty_from_input<R: Real>(critic: &impl Critic<R>, x_hat: &Tensor<R>) -> f64 {
    let n = x_hat.shape()[0];
    let per = x_hat.len() / n;
    let mut total = 0.0;
    for s in 0..critic.n_scales() {
        let g = critic.input_gradient(x_hat, s);
        for gi in g.data().chunks(per) {
            let norm = gi
                .iter()
                .map(|v| v.as_f64() * v.as_f64())
                .sum::<f64>()
                .sqrt();
            total += (norm - 1.0) * (norm - 1.0);
        }
    }
    total / (n * critic.n_scales()) as f64
}

/// Batch mean of `1 - cos` between rows of two `[N, d]` embeddings.
pub fn identity_loss_var<'t, R: Real>(v_r: &Var<'t, R>, v_s: &Var<'t, R>) -> Var<'t, R> {
    v_r.normalize_rows()
        .row_dot(&v_s.normalize_rows())
        .mean()
        .scale(-1.0)
        .add_scalar(1.0)
}

pub fn reconstruction_loss_var<'t, R: Real>(
    i_r: &Var<'t, R>,
    i_t: &Var<'t, R>,
    same_identity: bool,
) -> Var<'t, R> {
    if same_identity {
        i_r.sub(i_t).abs().mean()
    } else {
        i_r.tape().scalar(R::zero())
    }
}

/// Taped feature matching for one scale. Target features are detached.
pub fn feature_matching_var<'t, R: Real>(
    feats_r: &[Var<'t, R>],
    feats_t: &[Var<'t, R>],
    variant: FmVariant,
) -> Option<Var<'t, R>> {
    assert_eq!(feats_r.len(), feats_t.len(), "feature list length mismatch");
    feats_r
        .iter()
        .zip(feats_t)
        .enumerate()
        .filter(|(i, _)| variant.includes(i + 1))
        .map(|(_, (r, t))| r.sub(&t.detach()).abs().mean())
        .reduce(|a, b| a.add(&b))
}

pub fn fm_sum_var<'t, R: Real>(
    feats_r_per_scale: &[Vec<Var<'t, R>>],
    feats_t_per_scale: &[Vec<Var<'t, R>>],
    variant: FmVariant,
) -> Option<Var<'t, R>> {
    feats_r_per_scale
        .iter()
        .zip(feats_t_per_scale)
        .filter_map(|(r, t)| feature_matching_var(r, t, variant))
        .reduce(|a, b| a.add(&b))
}

pub fn hinge_d_var<'t, R: Real>(
    real_scores: &[Var<'t, R>],
    fake_scores: &[Var<'t, R>],
) -> Var<'t, R> {
    real_scores
        .iter()
        .map(|r| r.scale(-1.0).add_scalar(1.0).relu().mean())
        .chain(fake_scores.iter().map(|f| f.add_scalar(1.0).relu().mean()))
        .reduce(|a, b| a.add(&b))
        .expect("at least one scale")
}

pub fn hinge_g_var<'t, R: Real>(fake_scores: &[Var<'t, R>]) -> Var<'t, R> {
    fake_scores
        .iter()
        .map(|f| f.mean())
        .reduce(|a, b| a.add(&b))
        .expect("at least one scale")
        .scale(-1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FmKind;

    #[test]
    fn hinge_scalar_cases() {
        let t = |v: f64| vec![Tensor::<f64>::scalar(v)];
        assert_eq!(hinge_d_loss(&t(0.5), &t(-0.25)), 1.25);
        assert_eq!(hinge_d_loss(&t(0.0), &t(0.0)), 2.0);
        assert_eq!(hinge_g_loss(&t(3.0)), -3.0);
    }

    #[test]
    fn total_is_weighted_sum() {
        let cfg = TrainConfig::default();
        let terms = GeneratorTerms {
            l_id: 0.1,
            l_recon: 0.02,
            l_adv: 0.5,
            l_fm: 0.03,
        };
        assert!((total_generator_loss(&terms, &cfg) - 2.0).abs() < 1e-12);
        let r = LossReport::new(0.1, 0.02, 0.5, 1.0, 0.3, 0.03, &cfg);
        assert!((r.total_g - 2.0).abs() < 1e-12);
    }

    #[test]
    fn off_variant_is_zero() {
        let a = vec![FeatureMap::new(Tensor::<f32>::full(&[1, 2, 2], 1.0)).unwrap()];
        let b = vec![FeatureMap::new(Tensor::<f32>::zeros(&[1, 2, 2])).unwrap()];
        let v = FmVariant::new(FmKind::Off, 1, 1).unwrap();
        assert_eq!(feature_matching_loss(&a, &b, v).unwrap(), 0.0);
        let v = FmVariant::new(FmKind::Full, 1, 1).unwrap();
        assert_eq!(feature_matching_loss(&a, &b, v).unwrap(), 1.0);
    }
}
