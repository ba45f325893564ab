//! Finite-difference verification of recorded gradients.

use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares the analytic gradient of `f` with central finite differences at
/// `x` and returns the largest relative deviation,
/// `max_i |analytic_i - central_i| / max(1, |central_i|)`.
///
/// `f` must produce a scalar loss from the current values of `x` (plus any
/// other captured tensors, which are held fixed). It is invoked once on a
/// recording tape for the analytic gradient and twice per coordinate of `x`
/// on non-recording tapes for the probes.
pub fn finite_diff_check<F>(mut f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&mut Tape) -> Result<Tensor>,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::usage(format!("finite_diff_check: step must be positive, got {h}")));
    }
    let was_requiring = x.requires_grad();
    x.set_requires_grad(true);
    x.clear_grad();

    let mut tape = Tape::new();
    let loss = f(&mut tape)?;
    tape.backward(&loss)?;
    let analytic = x
        .grad()
        .unwrap_or_else(|| vec![0.0; x.numel()]);
    x.clear_grad();
    x.set_requires_grad(was_requiring);

    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        x.perturb(i, h);
        let plus = {
            let mut t = Tape::inactive();
            f(&mut t)?.value()
        };
        x.perturb(i, -2.0 * h);
        let minus = {
            let mut t = Tape::inactive();
            f(&mut t)?.value()
        };
        x.perturb(i, h);
        let central = (plus - minus) / (2.0 * h);
        let err = (analytic[i] - central).abs() / central.abs().max(1.0);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    #[test]
    fn sum_of_squares_matches_central_differences() {
        let x = Tensor::param_from_vec(vec![0.5, -1.25, 2.0], &[3]).unwrap();
        let err = finite_diff_check(
            |tape| {
                let sq = ops::mul(tape, &x, &x)?;
                ops::sum_all(tape, &sq)
            },
            &x,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn restores_value_and_grad_state() {
        let x = Tensor::param_from_vec(vec![1.0, 2.0], &[2]).unwrap();
        let before = x.to_vec();
        let _ = finite_diff_check(|tape| ops::sum_all(tape, &x), &x, 1e-5).unwrap();
        assert_eq!(x.to_vec(), before);
        assert!(x.grad().is_none());
    }

    #[test]
    fn rejects_bad_step() {
        let x = Tensor::param_from_vec(vec![1.0], &[1]).unwrap();
        assert!(finite_diff_check(|tape| ops::sum_all(tape, &x), &x, 0.0).is_err());
    }
}
