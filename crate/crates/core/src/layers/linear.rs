use rand::Rng;

use super::params::{glorot, ParamId, ParamStore};
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::Result;

/// `x·W + b` with `W: [in × out]`, `b: [1 × out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl LinearIds {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        input: usize,
        output: usize,
    ) -> Self {
        LinearIds {
            w: store.add(format!("{name}.w"), glorot(rng, input, output)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[1, output])),
        }
    }

    pub fn bind(&self, vars: &[Var]) -> LinearVars {
        LinearVars {
            w: vars[self.w.0],
            b: vars[self.b.0],
        }
    }
}

impl LinearVars {
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.w)?;
        tape.add(xw, self.b)
    }

    pub fn apply_relu<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let y = self.apply(tape, x)?;
        Ok(tape.relu(y))
    }
}
