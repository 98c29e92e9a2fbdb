use crate::nn::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam with bias correction. With `beta1 = 0` the first moment is just the
/// latest gradient.
#[derive(Clone, Debug)]
pub struct Adam<R: Real> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<R>>,
    pub v: Vec<Tensor<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(config: AdamConfig, params: &ParamStore<R>) -> Self {
        let zeros: Vec<Tensor<R>> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ParamStore<R>, grads: &[Tensor<R>]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let step_size = c.lr * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t));
        let (b1, b2) = (R::of(c.beta1), R::of(c.beta2));
        let (one, step_size, eps) = (R::one(), R::of(step_size), R::of(c.eps));
        let bc2_sqrt = R::of((1.0 - c.beta2.powi(t)).sqrt());
        for (((_, p), g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                // eps is applied to the bias-corrected second moment
                p[i] -= step_size * m[i] / (v[i].sqrt() + eps * bc2_sqrt);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::from_vec(&[2], vec![1.0, -1.0]));
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.0,
            beta2: 0.999,
            eps: 1e-12,
        };
        let mut adam = Adam::new(cfg, &store);
        adam.update(&mut store, &[Tensor::from_vec(&[2], vec![3.0, -0.5])]);
        let w = store.by_name("w").unwrap().data();
        assert!(
            (w[0] - 0.9).abs() < 1e-9 && (w[1] + 0.9).abs() < 1e-9,
            "{w:?}"
        );
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::from_vec(&[1], vec![5.0]));
        let cfg = AdamConfig {
            lr: 0.05,
            beta1: 0.0,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut adam = Adam::new(cfg, &store);
        for _ in 0..2000 {
            let w = store.by_name("w").unwrap().data()[0];
            adam.update(&mut store, &[Tensor::from_vec(&[1], vec![2.0 * (w - 2.0)])]);
        }
        assert!((store.by_name("w").unwrap().data()[0] - 2.0).abs() < 0.1);
    }
}
