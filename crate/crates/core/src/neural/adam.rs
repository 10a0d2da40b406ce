use super::mlp::MlpParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators shaped like the parameters they track.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            config: AdamConfig::default(),
        }
    }

    /// One bias-corrected Adam descent step on `params` with gradient `grads`.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams, lr: f64) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.m) {
            return Err(Error::dim("adam", "matching parameter shapes", "mismatch"));
        }
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .values_mut()
            .zip(grads.values())
            .zip(self.m.values_mut())
            .zip(self.v.values_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form: returns the advanced state and updated parameters.
pub fn adam_step(state: &AdamState, grads: &MlpParams, params: &MlpParams, lr: f64) -> Result<(AdamState, MlpParams)> {
    let mut s = state.clone();
    let mut p = params.clone();
    s.step(&mut p, grads, lr)?;
    Ok((s, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> MlpParams {
        MlpParams::init(3, &[4], 2, &mut ChaCha8Rng::seed_from_u64(7))
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let p = params();
        let (s, q) = adam_step(&AdamState::new(&p), &p.zeros_like(), &p, 1e-3).unwrap();
        assert_eq!(p, q);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let p = params();
        let mut g = p.zeros_like();
        g.values_mut().for_each(|v| *v = 0.37);
        let (_, q) = adam_step(&AdamState::new(&p), &g, &p, 1e-3).unwrap();
        for (a, b) in p.values().zip(q.values()) {
            assert!(((a - b) - 1e-3).abs() < 1e-9);
        }
    }

    #[test]
    fn sign_flip_moves_less_than_two_lr() {
        let p = params();
        let mut g = p.zeros_like();
        g.values_mut().for_each(|v| *v = 1.0);
        let lr = 1e-2;
        let (s, q) = adam_step(&AdamState::new(&p), &g, &p, lr).unwrap();
        g.values_mut().for_each(|v| *v = -1.0);
        let (_, r) = adam_step(&s, &g, &q, lr).unwrap();
        for (a, b) in p.values().zip(r.values()) {
            assert!((a - b).abs() < 2.0 * lr);
        }
    }

    #[test]
    fn deterministic_and_moments_nonnegative() {
        let p = params();
        let mut g = p.zeros_like();
        for (i, v) in g.values_mut().enumerate() {
            *v = (i as f64).sin();
        }
        let a = adam_step(&AdamState::new(&p), &g, &p, 1e-3).unwrap();
        let b = adam_step(&AdamState::new(&p), &g, &p, 1e-3).unwrap();
        assert_eq!(a, b);
        assert!(a.0.v.values().all(|v| *v >= 0.0));
    }
}
