use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::Result;
use crate::layers::ParamStore;

/// Exponential moving average of every trainable parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EmaState<T> {
    pub decay: f64,
    pub shadow: ParamStore<T>,
}

impl<T: Real> EmaState<T> {
    /// Shadow starts as a copy of `params`.
    pub fn new(params: &ParamStore<T>, decay: f64) -> Self {
        EmaState {
            decay,
            shadow: params.clone(),
        }
    }
}

/// `shadow ← decay · shadow + (1 − decay) · param`.
pub fn ema_update<T: Real>(params: &ParamStore<T>, ema: &mut EmaState<T>) -> Result<()> {
    ema.shadow.check_layout(params)?;
    let d = T::of(ema.decay);
    let rest = T::of(1.0 - ema.decay);
    for (s, p) in ema.shadow.iter_mut().zip(params.iter()) {
        for (x, &y) in s.value.data_mut().iter_mut().zip(p.value.data()) {
            *x = d * *x + rest * y;
        }
    }
    Ok(())
}

/// Exchanges live and shadow parameters. Calling it twice restores both.
pub fn ema_swap<T: Real>(params: &mut ParamStore<T>, ema: &mut EmaState<T>) -> Result<()> {
    ema.shadow.check_layout(params)?;
    std::mem::swap(params, &mut ema.shadow);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(v));
        s
    }

    fn value(s: &ParamStore<f64>) -> f64 {
        s.iter().next().unwrap().value.data()[0]
    }

    #[test]
    fn one_update_from_zero() {
        let mut ema = EmaState::new(&store(0.0), 0.999);
        ema_update(&store(1.0), &mut ema).unwrap();
        assert!((value(&ema.shadow) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn zero_decay_copies_params() {
        let mut ema = EmaState::new(&store(0.0), 0.0);
        ema_update(&store(0.37), &mut ema).unwrap();
        assert_eq!(value(&ema.shadow), 0.37);
    }

    #[test]
    fn swap_is_an_involution() {
        let mut live = store(1.5);
        let mut ema = EmaState::new(&store(-2.0), 0.9);
        let before = (live.checksum(), ema.shadow.checksum());
        ema_swap(&mut live, &mut ema).unwrap();
        assert_eq!(value(&live), -2.0);
        ema_swap(&mut live, &mut ema).unwrap();
        assert_eq!((live.checksum(), ema.shadow.checksum()), before);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let mut other = store(0.0);
        other.add("extra", Tensor::scalar(1.0));
        let mut ema = EmaState::new(&store(0.0), 0.9);
        assert!(ema_update(&other, &mut ema).is_err());
        assert!(ema_swap(&mut other, &mut ema).is_err());
    }
}
