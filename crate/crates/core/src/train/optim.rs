use crate::policy::Scalar;

/// Adam with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    m: Vec<F>,
    v: Vec<F>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![F::zero(); n_params],
            v: vec![F::zero(); n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update; `lr_of(i)` gives the learning rate of parameter `i`.
    pub fn step(&mut self, params: &mut [F], grads: &[F], lr_of: impl Fn(usize) -> f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let b1 = F::c(self.beta1);
        let b2 = F::c(self.beta2);
        let one = F::one();
        let bc1 = F::c(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = F::c(1.0 - self.beta2.powi(self.step as i32));
        let eps = F::c(self.eps);
        let wd = F::c(self.weight_decay);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let lr = F::c(lr_of(i));
            params[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * params[i]);
        }
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<F: Scalar>(grads: &mut [F], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = F::c(max_norm / norm);
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}
