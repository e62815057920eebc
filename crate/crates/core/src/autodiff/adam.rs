use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0
            && self.epsilon > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid Adam hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moment estimates; moments are kept in `f64`.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
}

impl Adam {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes: Vec<Vec<usize>> = params.into_iter().map(|p| p.shape().to_vec()).collect();
        let zeros = |s: &Vec<usize>| vec![0.0; s.iter().product()];
        Ok(Self {
            config,
            step_count: 0,
            first_moment: shapes.iter().map(zeros).collect(),
            second_moment: shapes.iter().map(zeros).collect(),
            shapes,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Changes the step size for subsequent updates; moments are kept.
    pub fn set_learning_rate(&mut self, learning_rate: f64) -> Result<()> {
        AdamConfig::with_learning_rate(learning_rate).validate()?;
        self.config.learning_rate = learning_rate;
        Ok(())
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update. `grads[i]` is the gradient of `params[i]`; a `None`
    /// gradient is treated as zero.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&[f32]>]) -> Result<()> {
        if params.len() != self.shapes.len() || grads.len() != self.shapes.len() {
            return Err(Error::DimensionMismatch(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.shapes.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.shapes[i].as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: self.shapes[i].clone(),
                });
            }
            if let Some(g) = g {
                if g.len() != p.numel() {
                    return Err(Error::ShapeMismatch {
                        op: "adam_step",
                        lhs: p.shape().to_vec(),
                        rhs: vec![g.len()],
                    });
                }
            }
        }
        self.step_count += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let data = p.data_mut();
            for k in 0..data.len() {
                let gk = grads[i].map_or(0.0, |g| g[k] as f64);
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                data[k] = (data[k] as f64 - lr * m_hat / (v_hat.sqrt() + epsilon)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), [&x]).unwrap();
        let g = [0.3f32, -7.0, 1e-3];
        adam.step(&mut [&mut x], &[Some(&g)]).unwrap();
        // bias-corrected moments equal g and g^2, so each step is lr * g / (|g| + eps)
        let expect = [1.0 - 2e-4, -2.0 + 2e-4, 0.5 - 2e-4 * 1e-3 / (1e-3 + 1e-8)];
        for (a, e) in x.data().iter().zip(expect) {
            assert!((*a as f64 - e).abs() < 1e-6, "{a} vs {e}");
        }
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), [&x]).unwrap();
        adam.step(&mut [&mut x], &[Some(&[0.0, 0.0])]).unwrap();
        assert_eq!(x.data(), &[1.0, 2.0]);
        adam.step(&mut [&mut x], &[None]).unwrap();
        assert_eq!(x.data(), &[1.0, 2.0]);
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let x = Tensor::zeros(&[2]);
        let mut y = Tensor::zeros(&[3]);
        let mut adam = Adam::new(AdamConfig::default(), [&x]).unwrap();
        assert!(adam.step(&mut [&mut y], &[None]).is_err());
        let mut x = x;
        assert!(adam.step(&mut [&mut x], &[Some(&[1.0])]).is_err());
    }

    /// Independent scalar Adam in plain f64.
    fn scalar_adam(lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut x, mut m, mut v) = (1.0f64, 0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        x
    }

    fn tensor_adam(lr: f64, steps: usize) -> f64 {
        let mut x = Tensor::scalar(1.0);
        let mut adam = Adam::new(AdamConfig::with_learning_rate(lr), [&x]).unwrap();
        for _ in 0..steps {
            let g = [2.0 * x.data()[0]];
            adam.step(&mut [&mut x], &[Some(&g)]).unwrap();
        }
        x.data()[0] as f64
    }

    #[test]
    fn quadratic_descent_matches_scalar_oracle() {
        // each step moves at most ~lr, so 2000 steps at 2e-4 cover only ~0.4
        let oracle = scalar_adam(2e-4, 2000);
        assert!(oracle > 0.5, "{oracle}");
        assert!((tensor_adam(2e-4, 2000) - oracle).abs() < 1e-4);

        // 1e-3 still stalls near 0.02; 2e-3 gets well below 1e-2
        let oracle = scalar_adam(1e-3, 2000);
        assert!(oracle.abs() > 1e-2, "{oracle}");
        let oracle = scalar_adam(2e-3, 2000);
        assert!(oracle.abs() < 1e-2, "{oracle}");
        let x = tensor_adam(2e-3, 2000);
        assert!(x.abs() < 1e-2, "{x}");
    }
}
