//! Adam with bias correction, used both as the inner optimizer of the
//! LQA-Adam baseline and as the outer optimizer on trainable schedules.

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// First moments.
    pub m: Vec<f64>,
    /// Second moments.
    pub v: Vec<f64>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|m| *m = 0.0);
        self.v.iter_mut().for_each(|v| *v = 0.0);
        self.step = 0;
    }

    /// One update on the leading `grads.len()` entries of `params`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert!(grads.len() <= params.len() && grads.len() <= self.m.len());
        self.step += 1;
        let k = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(k);
        let c2 = 1.0 - self.beta2.powi(k);
        for (i, &g) in grads.iter().enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
