use alloc::vec::Vec;

use super::tape::{Mode, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Largest relative disagreement between the tape's gradient and central
/// differences `(f(x+h) - f(x-h)) / 2h`, over every coordinate of every
/// input. Relative error is `|a - n| / max(1, |a|, |n|)`.
///
/// `f` receives a fresh eval-mode tape and one leaf per input tensor.
pub fn gradcheck<F>(f: F, point: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    gradcheck_with(Mode::Eval, 0, f, point, h)
}

/// As [`gradcheck`], with every evaluation on a fresh tape in `mode` seeded
/// with `seed`, so dropout draws the same masks each time.
pub fn gradcheck_with<F>(mode: Mode, seed: u64, f: F, point: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new(mode, seed);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.numel() != 1 {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        let y = v.data()[0];
        if !y.is_finite() {
            return Err(Error::NonFinite { op: "gradcheck" });
        }
        Ok(y)
    };

    let mut tape = Tape::new(mode, seed);
    let vars: Vec<Var> = point.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor<f64>> = point.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for j in 0..point[ti].numel() {
            let x0 = point[ti].data()[j];
            probe[ti].data_mut()[j] = x0 + h;
            let up = eval(&probe)?;
            probe[ti].data_mut()[j] = x0 - h;
            let down = eval(&probe)?;
            probe[ti].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.map_or(0.0, |g| g[j]);
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Axis;
    use alloc::vec;

    #[test]
    fn square_at_three() {
        let err = gradcheck(|t, v| t.mul(v[0], v[0]), &[Tensor::scalar(3.0)], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn non_finite_function_is_error() {
        // log-sum-exp of a huge value overflows in the forward pass
        let r = gradcheck(|t, v| t.scale(v[0], f64::MAX), &[Tensor::scalar(2.0)], 1e-5);
        assert!(r.is_err());
    }

    #[test]
    fn softmax_chain_in_train_mode() {
        let x = Tensor::matrix(2, 3, vec![0.1, -0.4, 0.9, 1.2, 0.0, -0.3]).unwrap();
        let err = gradcheck_with(
            Mode::Train,
            11,
            |t, v| {
                let s = t.softmax(v[0], Axis::Rows)?;
                let d = t.dropout(s, 0.5)?;
                let w = t.tanh(d)?;
                t.sum(w)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }
}
