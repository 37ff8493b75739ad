//! SGD and Adam parameter updates.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// L2 penalty added to the gradient for SGD; decoupled decay for Adam.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Per-parameter optimizer memory plus the step counter.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    step: u64,
    slots: Vec<Moments>,
}

impl OptimizerState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            slots: params
                .iter()
                .map(|p| Moments {
                    first: vec![0.0; p.len()],
                    second: vec![0.0; p.len()],
                })
                .collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// Applies one update in place. Any non-finite gradient aborts the step
/// before a single parameter is touched.
pub fn optimizer_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    config: &OptimizerConfig,
) -> Result<()> {
    if state.slots.len() != params.len() || grads.len() != params.len() {
        return Err(TensorError::StateMismatch {
            expected: state.slots.len(),
            got: params.len().max(grads.len()),
        });
    }
    for (param, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(TensorError::Shape {
                op: "optimizer_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if let Some(index) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NumericFault { param, index });
        }
    }

    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = config.betas;
    for ((p, g), slot) in params.iter_mut().zip(grads).zip(&mut state.slots) {
        let g = g.data();
        let p = p.data_mut();
        match config.kind {
            OptimizerKind::Sgd => {
                for (pi, gi) in p.iter_mut().zip(g) {
                    *pi -= config.lr * (gi + config.weight_decay * *pi);
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - b1.powf(t);
                let c2 = 1.0 - b2.powf(t);
                for i in 0..p.len() {
                    slot.first[i] = b1 * slot.first[i] + (1.0 - b1) * g[i];
                    slot.second[i] = b2 * slot.second[i] + (1.0 - b2) * g[i] * g[i];
                    let m_hat = slot.first[i] / c1;
                    let v_hat = slot.second[i] / c2;
                    p[i] -= config.lr
                        * (m_hat / (v_hat.sqrt() + config.eps) + config.weight_decay * p[i]);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: OptimizerKind, lr: f64) -> OptimizerConfig {
        OptimizerConfig {
            kind,
            lr,
            ..Default::default()
        }
    }

    #[test]
    fn sgd_single_step() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut s = OptimizerState::new(&p);
        optimizer_step(
            &mut p,
            &[Tensor::scalar(2.0)],
            &mut s,
            &cfg(OptimizerKind::Sgd, 0.1),
        )
        .unwrap();
        assert!((p[0].item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = vec![Tensor::vector(vec![0.3, -1.2])];
            let mut s = OptimizerState::new(&p);
            for _ in 0..3 {
                optimizer_step(&mut p, &[Tensor::zeros(&[2])], &mut s, &cfg(kind, 0.5)).unwrap();
            }
            assert_eq!(p[0].data(), &[0.3, -1.2]);
        }
    }

    #[test]
    fn adam_first_step_matches_hand_recurrence() {
        // t = 1: m = (1-b1) g, v = (1-b2) g^2; bias correction gives
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let c = OptimizerConfig::default();
        let mut p = vec![Tensor::vector(vec![0.0, 5.0, -2.0])];
        let mut s = OptimizerState::new(&p);
        optimizer_step(&mut p, &[Tensor::ones(&[3])], &mut s, &c).unwrap();
        let step = c.lr * 1.0 / (1.0 + c.eps);
        for (got, start) in p[0].data().iter().zip([0.0, 5.0, -2.0]) {
            assert!((got - (start - step)).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = vec![Tensor::scalar(1.0), Tensor::scalar(2.0)];
        let mut s = OptimizerState::new(&p);
        let g = [Tensor::scalar(1.0), Tensor::scalar(f64::NAN)];
        let err = optimizer_step(&mut p, &g, &mut s, &cfg(OptimizerKind::Sgd, 0.1)).unwrap_err();
        assert!(matches!(
            err,
            TensorError::NumericFault { param: 1, index: 0 }
        ));
        assert_eq!(p[0].item(), 1.0);
        assert_eq!(s.steps(), 0);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut s = OptimizerState::new(&[]);
        assert!(optimizer_step(
            &mut p,
            &[Tensor::scalar(0.0)],
            &mut s,
            &cfg(OptimizerKind::Sgd, 0.1)
        )
        .is_err());
    }
}
