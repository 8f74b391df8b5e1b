use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares the tape's gradient of a scalar function against central finite
/// differences at `points`. `f` receives one differentiable leaf per point
/// and must return a single-element tensor.
///
/// Returns the maximum over all coordinates of `|a − n| / max(1, |a|, |n|)`.
pub fn grad_check<F>(f: F, points: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |pts: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if tape.value(out).len() != 1 {
            return Err(Error::shape(
                "grad_check output",
                tape.value(out).shape(),
                &[1, 1],
            ));
        }
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(points)?;
    let base = tape.value(out).data()[0];
    if !base.is_finite() {
        return Err(Error::NonFinite(
            "grad_check: output at the base point".into(),
        ));
    }
    let grads = tape.backward_scalar(out)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = points.to_vec();
    for (pi, point) in points.iter().enumerate() {
        let analytic = grads
            .get(vars[pi])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(point.shape()));
        for k in 0..point.len() {
            let orig = point.data()[k];
            work[pi].data_mut()[k] = orig + eps;
            let plus = scalar_of(&eval(&work)?)?;
            work[pi].data_mut()[k] = orig - eps;
            let minus = scalar_of(&eval(&work)?)?;
            work[pi].data_mut()[k] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "grad_check: input {pi}, coordinate {k}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[k];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn scalar_of(e: &(Tape<f64>, Vec<Var>, Var)) -> Result<f64> {
    Ok(e.0.value(e.2).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_f64(&[1, 3], &[1.0, 2.0, 3.0]).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let sq = tape.mul(v, v).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward_scalar(s).unwrap();
        assert_eq!(g.get(v).unwrap().data(), &[2.0, 4.0, 6.0]);

        let err = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::from_f64(&[1, 2], &[0.3, -0.7]).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let zero = tape.affine(v, 0.0, 4.0);
        let s = tape.sum(zero);
        let g = tape.backward_scalar(s).unwrap();
        assert_eq!(g.get(v).unwrap().data(), &[0.0, 0.0]);
        let err = grad_check(
            |t, v| {
                let z = t.affine(v[0], 0.0, 4.0);
                Ok(t.sum(z))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let x = Tensor::from_f64(&[1, 2], &[0.3, -0.7]).unwrap();
        assert!(grad_check(|_, v| Ok(v[0]), &[x], 1e-5).is_err());
    }

    #[test]
    fn non_finite_output_is_reported() {
        let x = Tensor::from_f64(&[1, 1], &[-1.0]).unwrap();
        let err = grad_check(|t, v| Ok(t.log(v[0])), &[x], 1e-5).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}
