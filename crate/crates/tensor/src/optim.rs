use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. One instance owns the moments of one
/// parameter list, addressed by position.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = |p: &Tensor| Tensor::zeros(p.shape().to_vec());
        Self {
            config,
            step: 0,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
        }
    }

    /// Rebuilds an optimizer from saved moments.
    pub fn from_state(config: AdamConfig, step: u64, first: Vec<Tensor>, second: Vec<Tensor>) -> Self {
        assert_eq!(first.len(), second.len());
        Self {
            config,
            step,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    /// Applies one update. `grads[i]` of `None` leaves parameter `i` and its
    /// moments untouched.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>]) {
        assert_eq!(params.len(), self.first.len(), "parameter count changed");
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, param) in params.iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            assert_eq!(g.shape(), param.shape(), "gradient shape mismatch for parameter {i}");
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((p, &gi), mi), vi) in param.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= learning_rate * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr * g/|g|.
        let mut p = vec![Tensor::new([2], vec![1.0, -1.0])];
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 0.1,
                ..Default::default()
            },
            &p,
        );
        opt.step(&mut p, &[Some(Tensor::new([2], vec![3.0, -0.5]))]);
        let d = p[0].data();
        assert!((d[0] - 0.9).abs() < 1e-6);
        assert!((d[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let orig = Tensor::new([3], vec![0.25, -2.0, 7.5]);
        let mut p = vec![orig.clone()];
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            &p,
        );
        for _ in 0..3 {
            opt.step(&mut p, &[Some(Tensor::new([3], vec![1.0, 2.0, -3.0]))]);
        }
        assert_eq!(p[0], orig);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![Tensor::new([1], vec![5.0])];
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 0.1,
                ..Default::default()
            },
            &p,
        );
        for _ in 0..500 {
            let g = Tensor::new([1], vec![2.0 * p[0].data()[0]]);
            opt.step(&mut p, &[Some(g)]);
        }
        assert!(p[0].data()[0].abs() < 1e-2);
    }
}
