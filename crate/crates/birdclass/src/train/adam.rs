//! Adam optimizer over flat per-tensor parameter slices.

pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update. `params` and `grads` must stay aligned (same tensor
    /// order and lengths) across every call on this optimizer.
    pub fn step(&mut self, params: &mut [&mut [f32]], grads: &[Vec<f32>]) {
        assert_eq!(params.len(), grads.len(), "param/grad tensor count");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        self.step += 1;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let correction1 = 1.0 - self.beta1.powi(self.step as i32);
        let correction2 = 1.0 - self.beta2.powi(self.step as i32);
        let rate = (self.learning_rate / correction1) as f32;
        let corr2 = correction2 as f32;
        let eps = self.epsilon as f32;
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(&mut self.v))
        {
            assert_eq!(param.len(), grad.len(), "param/grad tensor length");
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                param[i] -= rate * m[i] / ((v[i] / corr2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        // f(w) = (w - 3)^2, gradient 2(w - 3).
        let mut w = vec![0.0f32];
        let mut adam = Adam::new(0.1);
        for _ in 0..500 {
            let g = vec![vec![2.0 * (w[0] - 3.0)]];
            adam.step(&mut [&mut w], &g);
        }
        assert!((w[0] - 3.0).abs() < 1e-2, "w = {}", w[0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction, step 1 moves by ~lr * sign(g).
        let mut w = vec![1.0f32];
        let mut adam = Adam::new(0.05);
        adam.step(&mut [&mut w], &[vec![0.7]]);
        assert!((w[0] - (1.0 - 0.05)).abs() < 1e-4, "w = {}", w[0]);
    }

    #[test]
    fn zero_gradient_leaves_params_fixed() {
        let mut w = vec![2.5f32, -1.0];
        let mut adam = Adam::new(0.1);
        adam.step(&mut [&mut w], &[vec![0.0, 0.0]]);
        assert_eq!(w, vec![2.5, -1.0]);
    }
}
