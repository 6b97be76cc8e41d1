use crate::tensor::DenseMatrix;

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    first: Vec<DenseMatrix>,
    second: Vec<DenseMatrix>,
}

impl Adam {
    pub fn new(
        shapes: impl IntoIterator<Item = (usize, usize)>,
        learning_rate: f64,
        weight_decay: f64,
    ) -> Self {
        let first: Vec<DenseMatrix> = shapes
            .into_iter()
            .map(|(r, c)| DenseMatrix::zeros(r, c))
            .collect();
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    /// One update of every parameter; `grads[i]` belongs to `params[i]`.
    pub fn step(&mut self, params: &mut [&mut DenseMatrix], grads: &[DenseMatrix]) {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grads.len(), self.first.len());
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step);
        let bias2 = 1.0 - self.beta2.powi(self.step);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let p = p.data_mut();
            for (j, &g0) in grads[i].data().iter().enumerate() {
                let g = g0 + self.weight_decay * p[j];
                let mj = &mut m.data_mut()[j];
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * g;
                let vj = &mut v.data_mut()[j];
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * g * g;
                let m_hat = m.data()[j] / bias1;
                let v_hat = v.data()[j] / bias2;
                p[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_a_quadratic() {
        let mut x = DenseMatrix::from_vec(1, 2, vec![3.0, -2.0]).unwrap();
        let mut adam = Adam::new([(1, 2)], 0.1, 0.0);
        for _ in 0..500 {
            let g = x.map(|v| 2.0 * v);
            adam.step(&mut [&mut x], &[g]);
        }
        assert!(x.max_abs() < 1e-2, "{x:?}");
    }
}
