use super::Tensor;
use crate::error::{Error, Result};

/// Adam optimizer state with bias correction and no weight decay.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero-initialised moments shaped like `params`, with the usual
    /// `beta1 = 0.9`, `beta2 = 0.999`, `epsilon = 1e-8`.
    pub fn new(learning_rate: f64, params: &[Tensor]) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::shape(
                "adam_update",
                format!(
                    "{} parameters, {} gradients, {} moment slots",
                    params.len(),
                    grads.len(),
                    self.first_moment.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.len() != self.first_moment[i].len() {
                return Err(Error::shape(
                    "adam_update",
                    format!("parameter {i} has shape {:?}, gradient {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / correction1;
                let v_hat = *vv / correction2;
                *pv -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let original = params.clone();
        let mut adam = AdamState::new(0.01, &params);
        for _ in 0..10 {
            adam.update(&mut params, &[Tensor::zeros(vec![3])]).unwrap();
        }
        assert_eq!(params, original);
        assert_eq!(adam.step_count(), 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_sign() {
        let mut params = vec![Tensor::new(vec![2], vec![0.0, 0.0]).unwrap()];
        let mut adam = AdamState::new(0.1, &params);
        let g = Tensor::new(vec![2], vec![3.0, -0.02]).unwrap();
        adam.update(&mut params, &[g]).unwrap();
        assert!((params[0].data()[0] + 0.1).abs() < 1e-6);
        assert!((params[0].data()[1] - 0.1).abs() < 1e-5);
    }

    /// Independent scalar recurrence for comparison.
    fn scalar_adam(lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (0.0f64, 0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * (w - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn converges_on_quadratic() {
        let mut params = vec![Tensor::scalar(0.0)];
        let mut adam = AdamState::new(0.1, &params);
        for _ in 0..100 {
            let w = params[0].data()[0];
            adam.update(&mut params, &[Tensor::scalar(2.0 * (w - 3.0))]).unwrap();
        }
        let w = params[0].data()[0];
        assert!((w - 3.0).abs() < 0.5, "w = {w}");
        assert_eq!(w, scalar_adam(0.1, 100));
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut params = vec![Tensor::zeros(vec![2])];
        let mut adam = AdamState::new(0.1, &params);
        assert!(adam.update(&mut params, &[Tensor::zeros(vec![3])]).is_err());
    }
}
