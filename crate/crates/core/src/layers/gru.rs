//! Gated recurrent units.
//!
//! ```text
//! z = σ(x·Wz + h·Uz + bz)
//! r = σ(x·Wr + h·Ur + br)
//! ĥ = tanh(x·Wh + (r ⊙ h)·Uh + bh)
//! h' = z ⊙ h + (1 − z) ⊙ ĥ
//! ```
//! The three input projections are computed for the whole sequence in one
//! matmul before stepping.

use rand::Rng;

use super::params::{glorot, ParamId, ParamStore};
use crate::autodiff::{Axis, Real, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruIds {
    pub w: ParamId,
    pub u_zr: ParamId,
    pub u_h: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w: Var,
    pub u_zr: Var,
    pub u_h: Var,
    pub b: Var,
}

impl GruIds {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        GruIds {
            w: store.add(format!("{name}.w"), glorot(rng, input, 3 * hidden)),
            u_zr: store.add(format!("{name}.u_zr"), glorot(rng, hidden, 2 * hidden)),
            u_h: store.add(format!("{name}.u_h"), glorot(rng, hidden, hidden)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[1, 3 * hidden])),
        }
    }

    pub fn bind(&self, vars: &[Var]) -> GruVars {
        GruVars {
            w: vars[self.w.0],
            u_zr: vars[self.u_zr.0],
            u_h: vars[self.u_h.0],
            b: vars[self.b.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiGruIds {
    pub fwd: GruIds,
    pub bwd: GruIds,
}

#[derive(Debug, Clone, Copy)]
pub struct BiGruVars {
    pub fwd: GruVars,
    pub bwd: GruVars,
}

impl BiGruIds {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        BiGruIds {
            fwd: GruIds::new(store, rng, &format!("{name}.fwd"), input, hidden),
            bwd: GruIds::new(store, rng, &format!("{name}.bwd"), input, hidden),
        }
    }

    pub fn bind(&self, vars: &[Var]) -> BiGruVars {
        BiGruVars {
            fwd: self.fwd.bind(vars),
            bwd: self.bwd.bind(vars),
        }
    }
}

/// One step given the projected input row `x_proj` (`[1 × 3g]`, bias
/// included) and the previous state `h` (`[1 × g]`).
pub fn gru_step<T: Real>(tape: &mut Tape<T>, p: &GruVars, x_proj: Var, h: Var) -> Result<Var> {
    let g = tape.value(h).cols();
    let xz = tape.slice_cols(x_proj, 0, g)?;
    let xr = tape.slice_cols(x_proj, g, g)?;
    let xh = tape.slice_cols(x_proj, 2 * g, g)?;
    let hu = tape.matmul(h, p.u_zr)?;
    let hz = tape.slice_cols(hu, 0, g)?;
    let hr = tape.slice_cols(hu, g, g)?;
    let z_in = tape.add(xz, hz)?;
    let z = tape.sigmoid(z_in);
    let r_in = tape.add(xr, hr)?;
    let r = tape.sigmoid(r_in);
    let rh = tape.mul(r, h)?;
    let rhu = tape.matmul(rh, p.u_h)?;
    let c_in = tape.add(xh, rhu)?;
    let cand = tape.tanh(c_in);
    // h' = ĥ + z ⊙ (h − ĥ)
    let diff = tape.sub(h, cand)?;
    let gated = tape.mul(z, diff)?;
    tape.add(cand, gated)
}

/// Runs over the rows of `x` (`[n × in]`), forward or reversed, returning
/// the states in input order (`[n × g]`). The initial state defaults to zero.
pub fn gru<T: Real>(
    tape: &mut Tape<T>,
    p: &GruVars,
    x: Var,
    reverse: bool,
    h0: Option<Var>,
) -> Result<Var> {
    let n = tape.value(x).rows();
    let g = tape.value(p.u_h).rows();
    let xw = tape.matmul(x, p.w)?;
    let proj = tape.add(xw, p.b)?;
    let mut h = match h0 {
        Some(h) => h,
        None => tape.constant(Tensor::zeros(&[1, g])),
    };
    let mut states = vec![h; n];
    for step in 0..n {
        let t = if reverse { n - 1 - step } else { step };
        let xt = tape.slice_rows(proj, t, 1)?;
        h = gru_step(tape, p, xt, h)?;
        states[t] = h;
    }
    tape.concat(&states, Axis::Rows)
}

/// Forward and backward passes concatenated per position: `[n × 2g]`.
pub fn bigru<T: Real>(tape: &mut Tape<T>, p: &BiGruVars, x: Var) -> Result<Var> {
    let f = gru(tape, &p.fwd, x, false, None)?;
    let b = gru(tape, &p.bwd, x, true, None)?;
    tape.concat(&[f, b], Axis::Cols)
}
