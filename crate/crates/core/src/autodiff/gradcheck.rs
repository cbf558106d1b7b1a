//! Central finite differences, used as the oracle for every backward rule.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// `[f(x + h·eᵢ) − f(x − h·eᵢ)] / 2h` for every coordinate `i`.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e−8)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

/// Compares tape gradients of `build` against finite differences for each
/// input tensor. Returns the largest per-input relative error.
pub fn check_gradients<F>(build: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_grad()))
        .collect();
    let root = build(&tape, &vars)?;
    tape.backward(root)?;

    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = vars[k].grad().unwrap_or_else(|| vec![0.0; x.numel()]);
        let numeric = finite_difference_gradient(
            |probe| {
                let tape = Tape::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| tape.leaf(if j == k { probe } else { t }))
                    .collect();
                Ok(build(&tape, &vars)?.item())
            },
            x,
            h,
        )?;
        worst = worst.max(relative_error(&analytic, numeric.data()));
    }
    Ok(worst)
}
