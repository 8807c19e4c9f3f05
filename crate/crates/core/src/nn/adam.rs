use serde::{Deserialize, Serialize};

use super::mlp::{Gradient, Mlp3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// Adam moment accumulators for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        OptimState {
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn for_net(net: &Mlp3, config: AdamConfig) -> Self {
        OptimState::new(net.n_params(), config)
    }

    /// Bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::dim(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged("non-finite gradient".into()));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }

    pub fn optim_step(&mut self, net: &mut Mlp3, grad: &Gradient) -> Result<()> {
        if grad.dims != net.dims() {
            return Err(Error::dim("gradient shape differs from network"));
        }
        self.update(net.params_mut(), &grad.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Head, TrainBatch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp3::init(3, 4, 4, 2, Head::Softmax, &mut r);
        let before = net.clone();
        let mut st = OptimState::for_net(&net, AdamConfig::default());
        let zero = net.zero_grad();
        st.optim_step(&mut net, &zero).unwrap();
        assert_eq!(net, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut net = Mlp3::zeros(2, 2, 2, 2, Head::Softmax);
        let mut g = net.zero_grad();
        g.values[0] = f64::NAN;
        let mut st = OptimState::for_net(&net, AdamConfig::default());
        assert!(matches!(st.optim_step(&mut net, &g), Err(Error::Diverged(_))));
    }

    #[test]
    fn identical_states_identical_updates() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp3::init(3, 5, 5, 3, Head::Softmax, &mut r);
        let mut g = net.zero_grad();
        for v in &mut g.values {
            *v = r.random_range(-1.0..1.0);
        }
        let (mut a, mut b) = (net.clone(), net.clone());
        let (mut sa, mut sb) = (OptimState::for_net(&a, AdamConfig::default()), OptimState::for_net(&b, AdamConfig::default()));
        sa.optim_step(&mut a, &g).unwrap();
        sb.optim_step(&mut b, &g).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn training_reduces_loss() {
        for seed in 0..5 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut net = Mlp3::init(4, 16, 16, 3, Head::Softmax, &mut r);
            let xs: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            let ts: Vec<Vec<f64>> = (0..10)
                .map(|_| {
                    let raw: Vec<f64> = (0..3).map(|_| r.random_range(0.05..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|v| v / s).collect()
                })
                .collect();
            let batch = TrainBatch::new(xs, ts).unwrap();
            let (initial, _) = net.backward(&batch).unwrap();
            let mut st = OptimState::for_net(&net, AdamConfig::default());
            for _ in 0..200 {
                let (_, g) = net.backward(&batch).unwrap();
                st.optim_step(&mut net, &g).unwrap();
            }
            let (fin, _) = net.backward(&batch).unwrap();
            assert!(fin < initial, "seed {seed}: {fin} !< {initial}");
        }
    }
}
