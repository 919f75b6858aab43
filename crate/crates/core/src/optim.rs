//! Adaptive-moment parameter updates.

use num_traits::Float;

use crate::error::{Error, Result};

/// First/second moment estimates for one parameter group.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Float> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }

    /// Resize for a new parameter count; `keep` maps each new slot to the old
    /// slot whose moments it inherits (`None` starts fresh at zero).
    pub fn remap(&mut self, per_param: usize, keep: &[Option<usize>]) {
        let mut m = vec![T::zero(); keep.len() * per_param];
        let mut v = vec![T::zero(); keep.len() * per_param];
        for (new, old) in keep.iter().enumerate() {
            if let Some(old) = old {
                for c in 0..per_param {
                    m[new * per_param + c] = self.m[old * per_param + c];
                    v[new * per_param + c] = self.v[old * per_param + c];
                }
            }
        }
        self.m = m;
        self.v = v;
    }

    pub fn zero_all(&mut self) {
        for x in self.m.iter_mut() {
            *x = T::zero();
        }
        for x in self.v.iter_mut() {
            *x = T::zero();
        }
    }
}

/// Hyperparameters shared by every group.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl Default for AdamParams<f64> {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

impl Default for AdamParams<f32> {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// One bias-corrected Adam step over a parameter slice.
///
/// `state.step` is incremented once per call; a zero gradient leaves the
/// parameter untouched up to the decayed-moment term.
pub fn adam_step<T: Float>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: T,
    hp: &AdamParams<T>,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch {
            context: format!(
                "adam_step params {} grads {} state {}",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = T::one() - hp.beta1.powi(t);
    let bias2 = T::one() - hp.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hp.beta1 * state.m[i] + (T::one() - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (T::one() - hp.beta2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

/// Adam over f32 parameters driven by f64-accumulated gradients.
pub fn adam_step_f32(
    params: &mut [f32],
    grads: &[f64],
    state: &mut AdamState<f32>,
    lr: f32,
    hp: &AdamParams<f32>,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch {
            context: format!(
                "adam_step params {} grads {} state {}",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - hp.beta1.powi(t);
    let bias2 = 1.0 - hp.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i] as f32;
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}
