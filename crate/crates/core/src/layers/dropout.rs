use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::Result;

/// `[1 × units]` keep-mask scaled by `1 / (1 − rate)`. Multiplying a
/// `[time × units]` sequence by it drops the same units at every step.
pub fn variational_dropout_mask<T: Real, R: Rng>(
    units: usize,
    rate: f64,
    rng: &mut R,
) -> Tensor<T> {
    if rate <= 0.0 {
        return Tensor::full(&[1, units], T::one());
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let data = (0..units)
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    Tensor::row(data)
}

/// Dropout for one forward pass: active with an RNG, identity without.
pub struct Dropout<'a> {
    rate: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Dropout<'a> {
    pub fn train(rate: f64, rng: &'a mut ChaCha8Rng) -> Self {
        Dropout {
            rate,
            rng: Some(rng),
        }
    }

    pub fn eval() -> Self {
        Dropout {
            rate: 0.0,
            rng: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some() && self.rate > 0.0
    }

    /// Applies a fresh per-sequence mask to `x` (`[time × units]`).
    pub fn apply<T: Real>(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let rate = self.rate;
        match self.rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => {
                let units = tape.value(x).cols();
                let mask = tape.constant(variational_dropout_mask(units, rate, rng));
                tape.mul(x, mask)
            }
            _ => Ok(x),
        }
    }
}
