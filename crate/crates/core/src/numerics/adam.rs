use crate::numerics::{ParamStore, Tensor};

/// Bias-corrected Adam with per-parameter first and second moments.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || -> Vec<Tensor> {
            store.iter().map(|p| Tensor::zeros(p.value.shape())).collect()
        };
        AdamState {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    pub fn with_learning_rate(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.second_moment
    }

    /// Apply one update from the gradients in `store`, then zero them.
    pub fn step(&mut self, store: &mut ParamStore) {
        assert_eq!(
            store.len(),
            self.first_moment.len(),
            "optimizer state was built for a different parameter set"
        );
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                let mi = &mut m.data_mut()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                let vi = &mut v.data_mut()[i];
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                value[i] -= self.alpha * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            p.grad.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        for (i, &v) in values.iter().enumerate() {
            s.add(format!("p{i}"), Tensor::scalar(v), true).unwrap();
        }
        s
    }

    #[test]
    fn zero_grad_leaves_parameter() {
        let mut s = store_with(&[0.7]);
        let mut adam = AdamState::new(&s);
        adam.step(&mut s);
        assert_eq!(s.iter().next().unwrap().value.item(), 0.7);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = store_with(&[0.0]);
        let mut adam = AdamState::new(&s);
        s.iter_mut().next().unwrap().grad = Tensor::scalar(1.0);
        adam.step(&mut s);
        // m_hat = v_hat = 1 at t = 1
        let expected = -0.001 / (1.0 + 1e-8);
        let p = s.iter().next().unwrap();
        assert!((p.value.item() - expected).abs() < 1e-18);
        assert_eq!(p.grad.item(), 0.0);
    }

    #[test]
    fn identical_parameters_stay_identical() {
        let mut s = store_with(&[0.3, 0.3]);
        let mut adam = AdamState::new(&s);
        for step in 0..5 {
            for p in s.iter_mut() {
                p.grad = Tensor::scalar(0.1 * step as f64 - 0.2);
            }
            adam.step(&mut s);
        }
        let vals: Vec<f64> = s.iter().map(|p| p.value.item()).collect();
        assert_eq!(vals[0].to_bits(), vals[1].to_bits());
        assert_eq!(adam.step_count(), 5);
    }
}
