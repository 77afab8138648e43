use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|a - b| / max(1, |a|, |b|)`, the comparison used by [`gradient_check`].
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / 1f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    f(&tape, &vars)?.item()
}

/// Compares reverse-mode gradients of the scalar function `f` with central
/// differences `(f(x+h) - f(x-h)) / 2h` on every input component.
///
/// Returns the largest relative error over all components. `f` is evaluated
/// twice at the unperturbed inputs first; any difference is reported as an
/// error because a finite-difference comparison would be meaningless.
pub fn gradient_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::invalid(format!("finite-difference step {step}")));
    }
    let first = eval(&f, inputs)?;
    let second = eval(&f, inputs)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic(format!(
            "two evaluations gave {first} and {second}"
        )));
    }

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut perturbed: Vec<Tensor> = inputs.to_vec();
        let mut numeric = Vec::with_capacity(input.numel());
        for i in 0..input.numel() {
            let x0 = input.data()[i];
            perturbed[k].data_mut()[i] = x0 + step;
            let up = eval(&f, &perturbed)?;
            perturbed[k].data_mut()[i] = x0 - step;
            let down = eval(&f, &perturbed)?;
            perturbed[k].data_mut()[i] = x0;
            numeric.push((up - down) / (2.0 * step));
        }
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}
