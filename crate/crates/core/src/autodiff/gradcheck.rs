//! Central finite-difference harness for scalar gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A scalar loss of one scalar parameter that can also report its derivative.
pub trait ScalarLoss {
    fn value(&mut self, p: f64) -> Result<f64>;
    fn value_and_grad(&mut self, p: f64) -> Result<(f64, f64)>;
}

/// Adapts a closure that builds a loss on a tape from a scalar leaf.
pub struct TapeLoss<F>(pub F);

impl<F> ScalarLoss for TapeLoss<F>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    fn value(&mut self, p: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(p));
        let y = (self.0)(&mut tape, x)?;
        tape.check()?;
        Ok(tape.scalar(y))
    }

    fn value_and_grad(&mut self, p: f64) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(p));
        let y = (self.0)(&mut tape, x)?;
        tape.check()?;
        let v = tape.scalar(y);
        let g = tape.backward(y)?;
        Ok((v, g.scalar(x)))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub value: f64,
    pub analytic: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

/// Compares the reported derivative with `(f(p+eps) - f(p-eps)) / 2eps`.
///
/// The baseline is evaluated twice; any bitwise difference is reported as
/// [`Error::NonDeterministic`] instead of being averaged away.
pub fn finite_difference_check<L: ScalarLoss + ?Sized>(loss: &mut L, p: f64, eps: f64) -> Result<GradCheck> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")));
    }
    let (value, analytic) = loss.value_and_grad(p)?;
    let again = loss.value(p)?;
    if value.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministic { first: value, second: again });
    }
    let plus = loss.value(p + eps)?;
    let minus = loss.value(p - eps)?;
    let finite_difference = (plus - minus) / (2.0 * eps);
    let relative_error = (analytic - finite_difference).abs() / finite_difference.abs().max(1e-12);
    Ok(GradCheck { value, analytic, finite_difference, relative_error })
}
