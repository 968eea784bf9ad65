//! Adam with bias correction.
//!
//! The objective already carries its own L2 term, so the optimizer applies
//! no decoupled weight decay.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

struct Moments {
    m: Tensor,
    v: Tensor,
}

/// Per-parameter first/second moment state plus the step counter.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u32,
    moments: Vec<Moments>,
}

impl Adam {
    /// Allocates zeroed moments matching the given parameter shapes.
    pub fn new(param_shapes: &[Vec<usize>]) -> Self {
        let moments = param_shapes
            .iter()
            .map(|s| Moments {
                m: Tensor::zeros(s.clone()),
                v: Tensor::zeros(s.clone()),
            })
            .collect();
        Adam {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u32 {
        self.step
    }

    /// One update over all parameters. `params` and `grads` must align with
    /// the shapes this state was built from.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor)], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.moments.len() || grads.len() != self.moments.len() {
            return Err(Error::dim(
                "adam_step",
                &[params.len(), grads.len()],
                &[self.moments.len()],
            ));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((state, (name, param)), grad) in self.moments.iter_mut().zip(params.iter_mut()).zip(grads) {
            if param.shape() != grad.shape() || param.shape() != state.m.shape() {
                return Err(Error::Dim {
                    op: "adam_step",
                    left: format!("{name}: {:?}", param.shape()),
                    right: format!("{:?}", grad.shape()),
                });
            }
            let (m, v) = (state.m.values_mut(), state.v.values_mut());
            for (((p, g), mi), vi) in param
                .values_mut()
                .iter_mut()
                .zip(grad.values())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(values: Vec<f64>) -> (Tensor, Adam) {
        let t = Tensor::from_vec(vec![values.len()], values).unwrap();
        let adam = Adam::new(&[t.shape().to_vec()]);
        (t, adam)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut p, mut adam) = one_param(vec![1.0, -2.0, 3.0]);
        let before = p.values().to_vec();
        let g = Tensor::zeros(vec![3]);
        let mut params = vec![("p".to_string(), &mut p)];
        adam.step(&mut params, &[g.clone()], 0.01).unwrap();
        adam.step(&mut params, &[g], 0.01).unwrap();
        assert_eq!(p.values(), &before[..]);
    }

    #[test]
    fn first_step_is_signed_lr() {
        // With bias correction the first update is lr * g / (|g| + eps),
        // i.e. lr * sign(g) up to eps.
        let lr = 0.003;
        let (mut p, mut adam) = one_param(vec![0.5, -0.25]);
        let before = p.values().to_vec();
        let g = Tensor::from_vec(vec![2], vec![0.7, -1.3]).unwrap();
        let mut params = vec![("p".to_string(), &mut p)];
        adam.step(&mut params, &[g], lr).unwrap();
        assert!((p.values()[0] - (before[0] - lr)).abs() < 1e-6);
        assert!((p.values()[1] - (before[1] + lr)).abs() < 1e-6);
    }

    #[test]
    fn two_steps_match_hand_unroll() {
        // Scalar recurrence unrolled by hand with constant gradient.
        let (b1, b2, eps, lr, g) = (ADAM_BETA1, ADAM_BETA2, ADAM_EPS, 0.01, 0.4);
        let mut expect = 1.0;
        let mut m = 0.0;
        let mut v = 0.0;
        for t in 1..=2u32 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t as i32));
            let v_hat = v / (1.0 - b2.powi(t as i32));
            expect -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let (mut p, mut adam) = one_param(vec![1.0]);
        let grad = Tensor::from_vec(vec![1], vec![g]).unwrap();
        let mut params = vec![("p".to_string(), &mut p)];
        adam.step(&mut params, &[grad.clone()], lr).unwrap();
        adam.step(&mut params, &[grad], lr).unwrap();
        assert!((p.values()[0] - expect).abs() < 1e-15);
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (mut p, mut adam) = one_param(vec![1.0, 2.0]);
        let bad = Tensor::zeros(vec![3]);
        let mut params = vec![("p".to_string(), &mut p)];
        assert!(adam.step(&mut params, &[bad], 0.01).is_err());
    }
}
