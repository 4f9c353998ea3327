use crate::diff::{ParamStore, Tensor};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    steps: i32,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// One update of every parameter from its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.first.len() != store.len() {
            self.first = store.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
            self.second = self.first.clone();
        }
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let g = p.grad.data();
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let m = &mut m.data_mut()[j];
                let v = &mut v.data_mut()[j];
                *m = b1 * *m + (1.0 - b1) * g[j];
                *v = b2 * *v + (1.0 - b2) * g[j] * g[j];
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

/// Rescale all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm {
        let s = max_norm / norm;
        for id in store.ids().collect::<Vec<_>>() {
            store.grad_mut(id).data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::vector(vec![1.0, -1.0])).unwrap();
        store.grad_mut(w).data_mut().copy_from_slice(&[3.0, -0.5]);
        let mut adam = Adam::new(0.1);
        adam.step(&mut store);
        let v = store.value(w).data();
        assert!((v[0] - 0.9).abs() < 1e-7 && (v[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::vector(vec![0.0, 0.0])).unwrap();
        store.grad_mut(w).data_mut().copy_from_slice(&[30.0, 40.0]);
        assert_eq!(clip_grad_norm(&mut store, 10.0), 50.0);
        assert!((store.grad_norm() - 10.0).abs() < 1e-12);
    }
}
