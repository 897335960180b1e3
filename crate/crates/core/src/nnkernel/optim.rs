use super::params::ParamVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f32, beta2: f32, eps: f32 },
}

impl OptimizerKind {
    pub const fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer hyperparameters plus per-parameter moment buffers.
///
/// Adam update order for parameter `i` at step `t` (all binary32):
///
/// ```text
/// m = beta1 * m + (1 - beta1) * g
/// v = beta2 * v + (1 - beta2) * g * g
/// step = lr * (m / (1 - beta1^t)) / (sqrt(v / (1 - beta2^t)) + eps)
/// p = p - step
/// ```
///
/// `beta^t` is carried as a running product rather than recomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f32,
    m: Vec<f32>,
    v: Vec<f32>,
    beta1_pow: f32,
    beta2_pow: f32,
    step_count: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f32) -> Self {
        Self {
            kind,
            learning_rate,
            m: Vec::new(),
            v: Vec::new(),
            beta1_pow: 1.0,
            beta2_pow: 1.0,
            step_count: 0,
        }
    }

    pub fn sgd(learning_rate: f32) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f32) -> Self {
        Self::new(OptimizerKind::adam(), learning_rate)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f32 {
        self.learning_rate
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one update to `params` in place.
    pub fn step(&mut self, params: &mut ParamVector, grads: &ParamVector) -> Result<()> {
        if !params.same_layout(grads) {
            return Err(Error::shape("gradient layout differs from parameter layout"));
        }
        let lr = self.learning_rate;
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.values_mut().iter_mut().zip(grads.values()) {
                    let delta = lr * g;
                    // Subtracting -0.0 would flip the sign of a zero parameter.
                    if delta != 0.0 {
                        *p -= delta;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.m.len() != params.len() {
                    self.m = vec![0.0; params.len()];
                    self.v = vec![0.0; params.len()];
                }
                self.beta1_pow *= beta1;
                self.beta2_pow *= beta2;
                let c1 = 1.0 - self.beta1_pow;
                let c2 = 1.0 - self.beta2_pow;
                for (((p, &g), m), v) in params
                    .values_mut()
                    .iter_mut()
                    .zip(grads.values())
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    let delta = lr * (m_hat / (v_hat.sqrt() + eps));
                    // Select rather than branch so the loop vectorizes.
                    *p = if delta != 0.0 { *p - delta } else { *p };
                }
            }
        }
        Ok(())
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn apply_update(
    params: &ParamVector,
    grads: &ParamVector,
    opt: &OptimizerState,
) -> Result<(ParamVector, OptimizerState)> {
    let mut p = params.clone();
    let mut o = opt.clone();
    o.step(&mut p, grads)?;
    Ok((p, o))
}
