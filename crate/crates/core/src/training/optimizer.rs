use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::layers::ParamStore;

/// Adadelta running averages, one pair of tensors per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct OptimizerState<T> {
    pub rho: f64,
    pub epsilon: f64,
    /// Multiplies every update. 1 is the plain method.
    pub learning_rate: f64,
    pub sq_grad: Vec<Tensor<T>>,
    pub sq_update: Vec<Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        Self::with_hyper(params, 0.95, 1e-6, 1.0)
    }

    pub fn with_hyper(params: &ParamStore<T>, rho: f64, epsilon: f64, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        OptimizerState {
            rho,
            epsilon,
            learning_rate,
            sq_grad: zeros.clone(),
            sq_update: zeros,
        }
    }

    pub fn check_layout(&self, params: &ParamStore<T>) -> Result<()> {
        let ok = self.sq_grad.len() == params.len()
            && self.sq_update.len() == params.len()
            && params
                .iter()
                .zip(self.sq_grad.iter().zip(&self.sq_update))
                .all(|(p, (a, b))| p.value.shape() == a.shape() && p.value.shape() == b.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::CheckpointMismatch(
                "optimizer state does not match parameters".into(),
            ))
        }
    }
}

/// One Adadelta update. All gradients are checked before any parameter
/// changes, so a non-finite gradient leaves the state untouched.
///
/// ```text
/// E[g²]  ← ρ E[g²] + (1 − ρ) g²
/// Δ      = −(√(E[Δ²] + ε) / √(E[g²] + ε)) g
/// E[Δ²]  ← ρ E[Δ²] + (1 − ρ) Δ²
/// x      ← x + lr · Δ
/// ```
pub fn adadelta_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::InvalidInput(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::shape("adadelta_step", p.value.shape(), g.shape()));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
    }
    state.check_layout(params)?;
    let rho = T::of(state.rho);
    let one_minus = T::of(1.0 - state.rho);
    let eps = T::of(state.epsilon);
    let lr = T::of(state.learning_rate);
    for (k, p) in params.iter_mut().enumerate() {
        let g = grads[k].data();
        let eg = state.sq_grad[k].data_mut();
        let ed = state.sq_update[k].data_mut();
        for (i, x) in p.value.data_mut().iter_mut().enumerate() {
            eg[i] = rho * eg[i] + one_minus * g[i] * g[i];
            let delta = -((ed[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * g[i];
            ed[i] = rho * ed[i] + one_minus * delta * delta;
            *x += lr * delta;
        }
    }
    Ok(())
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x = *x * scale;
            }
        }
    }
    norm
}
