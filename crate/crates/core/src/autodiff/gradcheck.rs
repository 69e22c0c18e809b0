use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compares tape gradients against central differences.
///
/// Returns the maximum over all coordinates of
/// `|analytic - numeric| / max(1, |numeric|)`. `f` must be deterministic;
/// a non-deterministic `f` makes the result meaningless.
pub fn gradient_check<F>(f: F, x: &Tensor, step: f32) -> Result<f32>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    gradient_check_multi(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step)
}

/// [`gradient_check`] over several inputs at once.
pub fn gradient_check_multi<F>(f: F, xs: &[Tensor], step: f32) -> Result<f32>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(1e-5..=1e-2).contains(&step) {
        return Err(Error::contract(format!(
            "gradient_check step {step} outside [1e-5, 1e-2]"
        )));
    }
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let loss = f(&tape, &vars)?;
        tape.backward(loss)?;
        vars.iter()
            .zip(xs)
            .map(|(v, x)| v.grad().unwrap_or_else(|| Tensor::zeros(x.shape())))
            .collect()
    };

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        Ok(f(&tape, &vars)?.item() as f64)
    };

    let mut worst = 0.0f64;
    let mut inputs: Vec<Tensor> = xs.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        for c in 0..xs[k].numel() {
            let orig = xs[k].data()[c];
            inputs[k].data_mut()[c] = orig + step;
            let plus = eval(&inputs)?;
            inputs[k].data_mut()[c] = orig - step;
            let minus = eval(&inputs)?;
            inputs[k].data_mut()[c] = orig;
            // the realized perturbation differs from `step` after f32 rounding
            let h = (orig + step) as f64 - (orig - step) as f64;
            let numeric = (plus - minus) / h;
            let err = (grad.data()[c] as f64 - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst as f32)
}
