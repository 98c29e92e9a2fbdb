//! Oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use idswap_core::nn::ParamStore;
use idswap_core::{seeded_rng, IdentityVector, ImageTensor, Tensor};

/// Finite-difference step for double precision checks.
pub const H: f64 = 1e-5;

/// Relative error with a floor so vanishing gradients compare absolutely.
pub fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3)
}

/// Worst relative error between `analytic` and central differences of `f`
/// around `x0`.
pub fn input_grad_error(
    x0: &Tensor<f64>,
    analytic: &Tensor<f64>,
    f: impl Fn(&Tensor<f64>) -> f64,
) -> f64 {
    assert_eq!(x0.shape(), analytic.shape());
    let mut worst = 0.0f64;
    for i in 0..x0.len() {
        let mut x = x0.clone();
        x.data_mut()[i] += H;
        let up = f(&x);
        x.data_mut()[i] -= 2.0 * H;
        let down = f(&x);
        worst = worst.max(rel_err((up - down) / (2.0 * H), analytic.data()[i]));
    }
    worst
}

/// Worst relative error over every scalar of every parameter. `loss` is
/// evaluated on a perturbed copy of `model`.
pub fn param_grad_error<M: Clone>(
    model: &M,
    analytic: &[Tensor<f64>],
    params_mut: fn(&mut M) -> &mut ParamStore<f64>,
    loss: impl Fn(&M) -> f64,
) -> (f64, String) {
    let mut probe = model.clone();
    let n = params_mut(&mut probe).len();
    assert_eq!(n, analytic.len(), "one gradient per parameter");
    let mut worst = (0.0f64, String::new());
    for pi in 0..n {
        let len = analytic[pi].len();
        for j in 0..len {
            let nudge = |m: &mut M, d: f64| {
                params_mut(m)
                    .iter_mut()
                    .nth(pi)
                    .expect("param index")
                    .1
                    .data_mut()[j] += d;
            };
            nudge(&mut probe, H);
            let up = loss(&probe);
            nudge(&mut probe, -2.0 * H);
            let down = loss(&probe);
            nudge(&mut probe, H);
            let e = rel_err((up - down) / (2.0 * H), analytic[pi].data()[j]);
            if e > worst.0 {
                let name = params_mut(&mut probe).names()[pi].clone();
                worst = (e, format!("{name}[{j}]"));
            }
        }
    }
    worst
}

pub fn random_image(size: usize, seed: u64) -> ImageTensor {
    let t = Tensor::<f64>::uniform(&[size * size * 3], -1.0, 1.0, &mut seeded_rng(seed));
    ImageTensor::new(size, size, t.data().iter().map(|&v| v as f32).collect()).unwrap()
}

pub fn random_unit(dim: usize, seed: u64) -> IdentityVector {
    let t = Tensor::<f64>::randn(&[dim], 1.0, &mut seeded_rng(seed));
    IdentityVector::normalized(t.data()).unwrap()
}

/// Scalar AdaIN on one channel with the population std and eps added to it.
pub fn adain_oracle(values: &[f64], sigma: f64, mu: f64, eps: f64) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    values
        .iter()
        .map(|v| sigma * (v - mean) / (std + eps) + mu)
        .collect()
}

/// Population mean and std of a slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Brute-force nearest-neighbour retrieval: all distances first, then the
/// lowest index among the entries at the minimum.
pub fn retrieval_oracle(
    generated: &[(IdentityVector, usize)],
    gallery: &[(IdentityVector, usize)],
) -> (Vec<usize>, f64) {
    let cos = |a: &IdentityVector, b: &IdentityVector| {
        let (a, b) = (a.as_slice(), b.as_slice());
        let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
        let na = a.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        let nb = b.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        1.0 - dot / (na * nb)
    };
    let mut retrieved = Vec::new();
    let mut hits = 0;
    for (v, source) in generated {
        let dists: Vec<f64> = gallery.iter().map(|(g, _)| cos(v, g)).collect();
        let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
        let first = dists
            .iter()
            .position(|&d| d == min)
            .expect("non-empty gallery");
        let id = gallery[first].1;
        hits += usize::from(id == *source);
        retrieved.push(id);
    }
    (retrieved, 100.0 * hits as f64 / generated.len() as f64)
}

/// Random retrieval instance on a coarse lattice so exact ties are common.
pub fn tie_heavy_instance(
    seed: u64,
) -> (Vec<(IdentityVector, usize)>, Vec<(IdentityVector, usize)>) {
    use rand::Rng;
    let mut rng = seeded_rng(seed);
    let dim = rng.gen_range(2..=4);
    let n_ids = rng.gen_range(2..=5);
    let draw = |rng: &mut idswap_core::SeededRng| loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1i32..=1) as f64).collect();
        if v.iter().any(|&x| x != 0.0) {
            return IdentityVector::normalized(&v).unwrap();
        }
    };
    let gallery = (0..rng.gen_range(1..=12))
        .map(|_| (draw(&mut rng), rng.gen_range(0..n_ids)))
        .collect();
    let generated = (0..rng.gen_range(1..=20))
        .map(|_| (draw(&mut rng), rng.gen_range(0..n_ids)))
        .collect();
    (generated, gallery)
}

/// Registers plain check functions as tests. The wrappers disappear when a
/// suite is compiled into the acceptance binary, which calls the checks itself.
macro_rules! register_tests {
    ($($name:ident),+ $(,)?) => {
        mod registered {
            $(
                #[test]
                fn $name() {
                    super::$name()
                }
            )+
        }
    };
}
