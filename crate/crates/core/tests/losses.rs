#[macro_use]
mod common;

use idswap_core::autograd::Tape;
use idswap_core::losses::{
    feature_matching_loss, fm_sum, gradient_penalty, gradient_penalty_at, hinge_d_loss,
    hinge_g_loss, identity_loss, identity_loss_raw, reconstruction_loss, total_generator_loss,
    Critic, GeneratorTerms,
};
use idswap_core::{
    seeded_rng, FeatureMap, FmKind, FmVariant, IdentityVector, ImageTensor, Tensor, TrainConfig,
};

const SCALAR_TOL: f64 = 1e-6;
const ORACLE_TOL: f64 = 1e-4;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn fmap(c: usize, h: usize, w: usize, value: f64) -> FeatureMap<f64> {
    FeatureMap::new(Tensor::full(&[c, h, w], value)).unwrap()
}

fn variant(kind: FmKind, m: usize, layers: usize) -> FmVariant {
    FmVariant::new(kind, m, layers).unwrap()
}

pub fn identity_loss_examples() {
    let v = IdentityVector::normalized(&[0.3, -0.4, 0.5]).unwrap();
    assert!(close(identity_loss(&v, &v).unwrap(), 0.0, SCALAR_TOL));
    let e1 = IdentityVector::normalized(&[1.0, 0.0]).unwrap();
    let e2 = IdentityVector::normalized(&[0.0, 1.0]).unwrap();
    assert!(close(identity_loss(&e1, &e2).unwrap(), 1.0, SCALAR_TOL));
    assert!(close(
        identity_loss_raw(&[1.0, 2.0], &[-1.0, -2.0]).unwrap(),
        2.0,
        SCALAR_TOL
    ));
    assert!(identity_loss_raw(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    assert!(identity_loss_raw(&[1.0, 0.0], &[0.0, 0.0]).is_err());
}

pub fn identity_loss_is_scale_invariant() {
    let a = [0.2, -1.3, 0.7, 0.1];
    let b = [1.1, 0.4, -0.2, 0.9];
    let doubled: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
    let base = identity_loss_raw(&a, &b).unwrap();
    assert!(close(
        identity_loss_raw(&doubled, &b).unwrap(),
        base,
        SCALAR_TOL
    ));
    assert!(close(
        identity_loss_raw(&a, &[2.2, 0.8, -0.4, 1.8]).unwrap(),
        base,
        SCALAR_TOL
    ));
}

pub fn reconstruction_loss_examples() {
    let x = common::random_image(16, 1);
    let y = common::random_image(16, 2);
    assert_eq!(reconstruction_loss(&x, &x, true).unwrap(), 0.0);
    assert_eq!(reconstruction_loss(&x, &y, false).unwrap(), 0.0);
    let zeros = ImageTensor::filled(8, 8, 0.0).unwrap();
    let halves = ImageTensor::filled(8, 8, 0.5).unwrap();
    assert!(close(
        reconstruction_loss(&zeros, &halves, true).unwrap(),
        0.5,
        SCALAR_TOL
    ));
    let small = ImageTensor::filled(4, 4, 0.0).unwrap();
    assert!(reconstruction_loss(&zeros, &small, true).is_err());
}

pub fn feature_matching_examples() {
    let feats = vec![fmap(2, 4, 4, 0.3), fmap(3, 2, 2, -0.1)];
    for kind in [FmKind::Weak, FmKind::Full, FmKind::Off, FmKind::Early] {
        assert_eq!(
            feature_matching_loss(&feats, &feats, variant(kind, 2, 2)).unwrap(),
            0.0
        );
    }
    let other = vec![fmap(2, 4, 4, 5.0), fmap(3, 2, 2, 7.0)];
    assert_eq!(
        feature_matching_loss(&feats, &other, variant(FmKind::Off, 2, 2)).unwrap(),
        0.0
    );

    // M = 2, m = 2: layer 2 differs by exactly 1 everywhere, layer 1 is equal.
    let r = vec![fmap(2, 4, 4, 0.25), fmap(3, 2, 2, 1.5)];
    let t = vec![fmap(2, 4, 4, 0.25), fmap(3, 2, 2, 0.5)];
    let oracle = |layers: &[usize]| -> f64 {
        layers
            .iter()
            .map(|&l| {
                let (a, b) = (r[l - 1].tensor().data(), t[l - 1].tensor().data());
                a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
            })
            .sum()
    };
    let weak = feature_matching_loss(&r, &t, variant(FmKind::Weak, 2, 2)).unwrap();
    let full = feature_matching_loss(&r, &t, variant(FmKind::Full, 2, 2)).unwrap();
    assert!(close(weak, oracle(&[2]), ORACLE_TOL) && close(weak, 1.0, ORACLE_TOL));
    assert!(close(full, oracle(&[1, 2]), ORACLE_TOL) && close(full, 1.0, ORACLE_TOL));
    assert!(feature_matching_loss(&r, &t[..1], variant(FmKind::Full, 2, 2)).is_err());
    let misshaped = vec![fmap(2, 4, 4, 0.0), fmap(3, 4, 4, 0.0)];
    assert!(feature_matching_loss(&r, &misshaped, variant(FmKind::Full, 2, 2)).is_err());
}

pub fn fm_sum_examples() {
    let v = variant(FmKind::Full, 1, 1);
    let base = vec![fmap(1, 2, 2, 0.0)];
    let zero = fm_sum(
        &[base.clone(), base.clone()],
        &[base.clone(), base.clone()],
        v,
    )
    .unwrap();
    assert_eq!(zero, 0.0);
    let s1 = vec![fmap(1, 2, 2, 0.3)];
    let s2 = vec![fmap(1, 2, 2, 0.7)];
    let total = fm_sum(&[s1.clone(), s2], &[base.clone(), base.clone()], v).unwrap();
    assert!(close(total, 1.0, SCALAR_TOL));
    let single = fm_sum(&[s1.clone()], &[base.clone()], v).unwrap();
    assert_eq!(single, feature_matching_loss(&s1, &base, v).unwrap());
    assert!(fm_sum(&[s1], &[base.clone(), base], v).is_err());
}

pub fn hinge_examples() {
    let t = |v: f64, n: usize| Tensor::<f64>::full(&[n, n], v);
    assert_eq!(
        hinge_d_loss(&[t(1.0, 2), t(3.0, 2)], &[t(-1.0, 2), t(-4.0, 2)]),
        0.0
    );
    assert!(close(
        hinge_d_loss(&[t(0.0, 2)], &[t(0.0, 2)]),
        2.0,
        SCALAR_TOL
    ));
    assert!(close(
        hinge_d_loss(&[Tensor::scalar(0.5)], &[Tensor::scalar(-0.25)]),
        1.25,
        SCALAR_TOL
    ));
    assert_eq!(hinge_g_loss(&[t(0.0, 3)]), 0.0);
    assert!(close(hinge_g_loss(&[t(3.0, 3)]), -3.0, SCALAR_TOL));
    assert!(close(
        hinge_g_loss(&[Tensor::from_vec(&[2], vec![1.0, -1.0])]),
        0.0,
        SCALAR_TOL
    ));
}

pub fn total_generator_loss_examples() {
    let cfg = TrainConfig::default();
    assert_eq!(total_generator_loss(&GeneratorTerms::default(), &cfg), 0.0);
    let terms = GeneratorTerms {
        l_id: 0.1,
        l_recon: 0.02,
        l_adv: 0.5,
        l_fm: 0.03,
    };
    assert!(close(total_generator_loss(&terms, &cfg), 2.0, SCALAR_TOL));
    let doubled = TrainConfig {
        lambda_id: 2.0 * cfg.lambda_id,
        ..cfg.clone()
    };
    let delta = total_generator_loss(&terms, &doubled) - total_generator_loss(&terms, &cfg);
    assert!(close(delta, cfg.lambda_id * terms.l_id, SCALAR_TOL));
}

/// `score = w . x` on the flattened sample; every scale sees the same map.
struct LinearCritic {
    w: Vec<f64>,
    scales: usize,
}

impl Critic<f64> for LinearCritic {
    fn n_scales(&self) -> usize {
        self.scales
    }

    fn input_gradient(&self, x: &Tensor<f64>, _scale: usize) -> Tensor<f64> {
        let n = x.shape()[0];
        let data = (0..n).flat_map(|_| self.w.iter().copied()).collect();
        Tensor::from_vec(x.shape(), data)
    }
}

/// Two parameters on `1x2x2` images: `score = a * tanh(b * (x00 + 2 x01 - x10 + 0.5 x11))`.
/// Its input gradient comes from the autograd tape.
struct TwoParamCritic {
    a: f64,
    b: f64,
}

const MIX: [f64; 4] = [1.0, 2.0, -1.0, 0.5];

impl Critic<f64> for TwoParamCritic {
    fn n_scales(&self) -> usize {
        1
    }

    fn input_gradient(&self, x: &Tensor<f64>, _scale: usize) -> Tensor<f64> {
        let n = x.shape()[0];
        let tape = Tape::new();
        let xv = tape.leaf(x.clone(), true);
        let mix = tape.constant(Tensor::from_vec(&[1, 4], MIX.to_vec()));
        let s = xv
            .reshape(&[n, 4])
            .linear(&mix, None)
            .scale(self.b)
            .tanh()
            .scale(self.a)
            .sum();
        tape.backward(s).get_or_zeros(xv)
    }
}

/// Closed form of the penalty for [`TwoParamCritic`].
fn two_param_oracle(a: f64, b: f64, x_hat: &Tensor<f64>) -> f64 {
    let norm_mix = MIX.iter().map(|m| m * m).sum::<f64>().sqrt();
    let samples = x_hat.data().chunks(4);
    let n = samples.len() as f64;
    samples
        .map(|s| {
            let u: f64 = s.iter().zip(MIX).map(|(x, m)| x * m).sum();
            let g = (a * b * (1.0 - (b * u).tanh().powi(2))).abs() * norm_mix;
            (g - 1.0).powi(2)
        })
        .sum::<f64>()
        / n
}

pub fn gradient_penalty_examples() {
    let mut rng = seeded_rng(3);
    let real = Tensor::<f64>::uniform(&[3, 3, 4, 4], -1.0, 1.0, &mut rng);
    let fake = Tensor::<f64>::uniform(&[3, 3, 4, 4], -1.0, 1.0, &mut rng);

    let raw = Tensor::<f64>::randn(&[48], 1.0, &mut rng);
    let norm = raw.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let unit = LinearCritic {
        w: raw.data().iter().map(|v| v / norm).collect(),
        scales: 2,
    };
    assert!(
        gradient_penalty(&unit, &real, &fake, &mut rng)
            .unwrap()
            .abs()
            < SCALAR_TOL
    );
    let zero = LinearCritic {
        w: vec![0.0; 48],
        scales: 2,
    };
    assert!(close(
        gradient_penalty(&zero, &real, &fake, &mut rng).unwrap(),
        1.0,
        SCALAR_TOL
    ));

    let real = Tensor::<f64>::uniform(&[4, 1, 2, 2], -1.0, 1.0, &mut rng);
    let fake = Tensor::<f64>::uniform(&[4, 1, 2, 2], -1.0, 1.0, &mut rng);
    let alphas = [0.1, 0.5, 0.8, 0.33];
    let x_hat = idswap_core::losses::interpolate(&real, &fake, &alphas).unwrap();
    for (a, b) in [(0.7, 0.4), (1.5, -0.9), (0.2, 2.0)] {
        let got = gradient_penalty_at(&TwoParamCritic { a, b }, &real, &fake, &alphas).unwrap();
        assert!(
            close(got, two_param_oracle(a, b, &x_hat), ORACLE_TOL),
            "a={a} b={b}: {got}"
        );
    }
}

pub fn gradient_penalty_interpolates_per_sample() {
    let real = Tensor::<f64>::full(&[2, 1, 2, 2], 1.0);
    let fake = Tensor::<f64>::full(&[2, 1, 2, 2], -1.0);
    let x = idswap_core::losses::interpolate(&real, &fake, &[0.25, 1.0]).unwrap();
    assert!(x.data()[..4].iter().all(|&v| close(v, -0.5, SCALAR_TOL)));
    assert!(x.data()[4..].iter().all(|&v| close(v, 1.0, SCALAR_TOL)));
    assert!(idswap_core::losses::interpolate(&real, &fake, &[0.5]).is_err());
}

pub fn losses_are_nonnegative_except_generator_hinge() {
    let mut rng = seeded_rng(9);
    for _ in 0..20 {
        let r = Tensor::<f64>::randn(&[3, 3], 2.0, &mut rng);
        let f = Tensor::<f64>::randn(&[3, 3], 2.0, &mut rng);
        assert!(hinge_d_loss(&[r.clone()], &[f.clone()]) >= 0.0);
        let a = Tensor::<f64>::randn(&[5], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[5], 1.0, &mut rng);
        assert!(identity_loss_raw(a.data(), b.data()).unwrap() >= 0.0);
    }
    assert!(hinge_g_loss(&[Tensor::<f64>::full(&[2, 2], 5.0)]) < 0.0);
}

register_tests!(
    identity_loss_examples,
    identity_loss_is_scale_invariant,
    reconstruction_loss_examples,
    feature_matching_examples,
    fm_sum_examples,
    hinge_examples,
    total_generator_loss_examples,
    gradient_penalty_examples,
    gradient_penalty_interpolates_per_sample,
    losses_are_nonnegative_except_generator_hinge,
);
