use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Analytic and central-difference gradients of `f` at `point`.
///
/// `f` builds a scalar from the input variable on a fresh tape each call.
/// A loss detached from the input counts as a zero analytic gradient.
pub fn grad_check_with<F>(f: F, point: &Tensor<f64>, step: f64) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let x = tape.param(point.clone());
        let loss = f(&mut tape, x)?;
        match tape.backward(loss) {
            Ok(g) => g.tensor(x).into_data(),
            Err(Error::DetachedGraph) => alloc::vec![0.0; point.len()],
            Err(e) => return Err(e),
        }
    };
    let eval = |p: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(p);
        let loss = f(&mut tape, x)?;
        Ok(tape.value(loss).item())
    };
    let mut numeric = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * step));
    }
    Ok((analytic, numeric))
}

/// Max over coordinates of `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let (a, n) = grad_check_with(f, point, step)?;
    Ok(a.iter()
        .zip(&n)
        .map(|(&a, &n)| {
            let denom = a.abs().max(n.abs()).max(1e-8);
            (a - n).abs() / denom
        })
        .fold(0.0, f64::max))
}
