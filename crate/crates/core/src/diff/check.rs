use super::tape::{value_and_grad, Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Evaluates `f` forward only.
pub fn eval<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.scalar(out))
}

/// Largest `|analytic − central difference| / max(1, |analytic|)` over every
/// coordinate of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (_, analytic) = value_and_grad(&f, params)?;
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = probe[pi].data()[j];
            probe[pi].data_mut()[j] = orig + h;
            let up = eval(&f, &probe)?;
            probe[pi].data_mut()[j] = orig - h;
            let down = eval(&f, &probe)?;
            probe[pi].data_mut()[j] = orig;

            let fd = (up - down) / (2.0 * h);
            let a = grad.data()[j];
            worst = worst.max((a - fd).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
