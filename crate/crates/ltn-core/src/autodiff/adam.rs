//! Adam optimizer with L2 weight decay folded into the gradient.

use std::collections::BTreeMap;

use thiserror::Error;

use super::tensor::Tensor;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("missing gradient for parameter `{name}`")]
    MissingGradient { name: String },
    #[error("gradient length {grad} does not match parameter `{name}` length {param}")]
    LengthMismatch {
        name: String,
        param: usize,
        grad: usize,
    },
}

/// Moment decay rates and the denominator epsilon.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update on a flat parameter buffer.
///
/// Weight decay enters as an additive `weight_decay * theta` term on the raw
/// gradient before the moment updates, so a zero gradient with zero state
/// still shrinks the parameter toward the origin. `step` is the 1-based
/// update count used for bias correction.
pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    weight_decay: f64,
    hp: &AdamHyper,
) {
    debug_assert!(step >= 1);
    let bc1 = 1.0 - hp.beta1.powi(step as i32);
    let bc2 = 1.0 - hp.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i] + weight_decay * param[i];
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + hp.epsilon);
    }
}

/// Named-parameter Adam with per-tensor first/second moment state.
#[derive(Debug)]
pub struct AdamOptimizer {
    hp: AdamHyper,
    state: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
    step_count: u64,
}

impl AdamOptimizer {
    pub fn new(hp: AdamHyper) -> Self {
        Self {
            hp,
            state: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to every parameter present in `grads`.
    /// A non-finite gradient aborts before any parameter is touched.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
        weight_decay: f64,
    ) -> Result<(), OptimError> {
        for (name, tensor) in params.iter() {
            let grad = grads
                .get(name)
                .ok_or_else(|| OptimError::MissingGradient { name: name.clone() })?;
            if grad.len() != tensor.len() {
                return Err(OptimError::LengthMismatch {
                    name: name.clone(),
                    param: tensor.len(),
                    grad: grad.len(),
                });
            }
            if !grad.is_finite() {
                return Err(OptimError::NonFiniteGradient { name: name.clone() });
            }
        }
        self.step_count += 1;
        for (name, tensor) in params.iter_mut() {
            let grad = &grads[name];
            let (m, v) = self
                .state
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; tensor.len()], vec![0.0; tensor.len()]));
            adam_step(
                tensor.data_mut(),
                grad.data(),
                m,
                v,
                self.step_count,
                lr,
                weight_decay,
                &self.hp,
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_state_only_shrinks() {
        let mut p = vec![1.0, -2.0];
        let g = vec![0.0, 0.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_step(&mut p, &g, &mut m, &mut v, 1, 0.1, 0.01, &AdamHyper::default());
        assert!(p[0] < 1.0 && p[0] > 0.0);
        assert!(p[1] > -2.0 && p[1] < 0.0);

        // Without decay nothing moves.
        let mut p2 = vec![1.0, -2.0];
        let (mut m2, mut v2) = (vec![0.0; 2], vec![0.0; 2]);
        adam_step(&mut p2, &g, &mut m2, &mut v2, 1, 0.1, 0.0, &AdamHyper::default());
        assert_eq!(p2, vec![1.0, -2.0]);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // Minimise (theta - 2)^2 from theta = -1.
        let mut theta = vec![-1.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        let hp = AdamHyper::default();
        for step in 1..=1000 {
            let g = vec![2.0 * (theta[0] - 2.0)];
            adam_step(&mut theta, &g, &mut m, &mut v, step, 0.01, 0.0, &hp);
        }
        assert!((theta[0] - 2.0).abs() < 1e-2, "theta = {}", theta[0]);
    }

    #[test]
    fn optimizer_rejects_non_finite_gradient() {
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), Tensor::scalar(1.0));
        let mut grads = BTreeMap::new();
        grads.insert(
            "w".to_string(),
            Tensor::from_raw(vec![1], vec![f64::INFINITY]),
        );
        let mut opt = AdamOptimizer::new(AdamHyper::default());
        let err = opt.step(&mut params, &grads, 0.1, 0.0).unwrap_err();
        assert!(matches!(err, OptimError::NonFiniteGradient { .. }));
        assert_eq!(params["w"].item(), 1.0);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn optimizer_tracks_state_per_name() {
        let mut params = BTreeMap::new();
        params.insert("a".to_string(), Tensor::scalar(1.0));
        params.insert("b".to_string(), Tensor::scalar(5.0));
        let mut opt = AdamOptimizer::new(AdamHyper::default());
        for _ in 0..200 {
            let mut grads = BTreeMap::new();
            grads.insert("a".to_string(), Tensor::scalar(2.0 * params["a"].item()));
            grads.insert(
                "b".to_string(),
                Tensor::scalar(2.0 * (params["b"].item() - 3.0)),
            );
            opt.step(&mut params, &grads, 0.05, 0.0).unwrap();
        }
        assert!(params["a"].item().abs() < 0.2);
        assert!((params["b"].item() - 3.0).abs() < 0.2);
        assert_eq!(opt.step_count(), 200);
    }
}
