use serde::{Deserialize, Serialize};

use super::params::Scalar;

/// Adam moment estimates, kept in `f64` regardless of the parameter type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: AdamState {
                step: 0,
                m: vec![0.0; n_params],
                v: vec![0.0; n_params],
            },
        }
    }

    pub fn with_state(state: AdamState) -> Self {
        Adam {
            state,
            ..Adam::new(0)
        }
    }

    /// One bias-corrected update `θ ← θ − lr · m̂ / (sqrt(v̂) + eps)`.
    pub fn step<T: Scalar>(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.state.m.len());
        let s = &mut self.state;
        s.step += 1;
        let bc1 = 1.0 - self.beta1.powi(s.step as i32);
        let bc2 = 1.0 - self.beta2.powi(s.step as i32);
        for i in 0..params.len() {
            let g = grads[i].as_f64();
            s.m[i] = self.beta1 * s.m[i] + (1.0 - self.beta1) * g;
            s.v[i] = self.beta2 * s.v[i] + (1.0 - self.beta2) * g * g;
            let update = lr * (s.m[i] / bc1) / ((s.v[i] / bc2).sqrt() + self.eps);
            params[i] = T::of_f64(params[i].as_f64() - update);
        }
    }
}

/// Rescales `grads` in place so their L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [T], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = T::of_f64(max_norm / norm);
        grads.iter_mut().for_each(|g| *g = *g * scale);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut adam = Adam::new(3);
        let mut p = vec![1.0f64, 1.0, 1.0];
        adam.step(&mut p, &[0.5, -2.0, 0.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn zero_gradient_from_fresh_state_is_a_no_op() {
        let mut adam = Adam::new(2);
        let mut p = vec![0.3f32, -0.7];
        adam.step(&mut p, &[0.0, 0.0], 1e-3);
        assert_eq!(p, vec![0.3f32, -0.7]);
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0f64, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
        let mut h = vec![0.1f64];
        clip_grad_norm(&mut h, 1.0);
        assert_eq!(h, vec![0.1]);
    }
}
