//! Adaptive-moment optimizer over [`Parameter`]s.

use super::Parameter;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Apply one update to each parameter from its `grad`. Parameters must be
    /// passed in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Parameter]) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            assert_eq!(
                m.len(),
                p.len(),
                "optimizer state does not match parameter {}",
                p.name
            );
            update(&mut p.values, &p.grad, m, v, c, bias1, bias2);
        }
    }

    /// Same update applied to a bare slice (a single tensor).
    pub fn step_slice(&mut self, values: &mut [f64], grad: &[f64]) {
        if self.first.is_empty() {
            self.first = vec![vec![0.0; values.len()]];
            self.second = self.first.clone();
        }
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        update(
            values,
            grad,
            &mut self.first[0],
            &mut self.second[0],
            c,
            bias1,
            bias2,
        );
    }
}

fn update(
    values: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    c: AdamConfig,
    bias1: f64,
    bias2: f64,
) {
    for i in 0..values.len() {
        let g = grad[i];
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        values[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_values() {
        let mut p = Parameter::new("w", vec![3], vec![1.0, -2.0, 0.5]);
        let mut opt = AdamState::new(AdamConfig::default());
        opt.step(&mut [&mut p]);
        assert_eq!(p.values, vec![1.0, -2.0, 0.5]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn zero_learning_rate_leaves_values() {
        let mut p = Parameter::new("w", vec![2], vec![1.0, 2.0]);
        p.grad = vec![3.0, -4.0];
        let mut opt = AdamState::new(AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        });
        opt.step(&mut [&mut p]);
        assert_eq!(p.values, vec![1.0, 2.0]);
    }

    #[test]
    fn two_step_trace() {
        // Hand-computed: lr 0.1, default betas, grads 1.0 then -0.5 from 1.0.
        let mut p = Parameter::new("w", vec![1], vec![1.0]);
        let mut opt = AdamState::new(AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        });
        p.grad = vec![1.0];
        opt.step(&mut [&mut p]);
        assert!((p.values[0] - 0.900000001).abs() < 1e-15);
        p.grad = vec![-0.5];
        opt.step(&mut [&mut p]);
        assert!((p.values[0] - 0.8733662973709032).abs() < 1e-14);
    }
}
