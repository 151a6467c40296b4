//! Finite-difference verification of the reverse-mode gradients.
//!
//! Gradients are compared in double precision against central differences
//! with h = 1e-5. The reported figure is, per checked input, the largest
//! absolute deviation normalized by the largest gradient magnitude seen on
//! that input (clamped below at 1.0 so zero-gradient inputs do not inflate
//! the ratio).

use crate::error::Result;
use crate::tensor::{backward, Tensor};

pub const FD_STEP: f64 = 1e-5;

/// A differentiable scalar-valued function of several tensors.
pub type ScalarFn<'a> = dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'a;

/// Compare analytic gradients of `f` against central finite differences at
/// `inputs`. Returns the maximum normalized error over all inputs.
pub fn gradcheck(f: &ScalarFn<'_>, inputs: &[Tensor<f64>]) -> Result<f64> {
    // Analytic pass: fresh leaves so gradients land here.
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach().requires_grad()).collect();
    let out = f(&leaves)?;
    backward(&out)?;

    let mut worst = 0.0f64;
    for (input, leaf) in inputs.iter().zip(&leaves) {
        let analytic = leaf
            .grad()
            .unwrap_or_else(|| vec![0.0; input.shape().numel()]);
        let mut max_abs_err = 0.0f64;
        let mut max_mag = 0.0f64;
        let base = input.data().to_vec();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += FD_STEP;
            let mut minus = base.clone();
            minus[i] -= FD_STEP;
            let f_plus = eval_at(f, inputs, leafless(inputs, input, plus)?)?;
            let f_minus = eval_at(f, inputs, leafless(inputs, input, minus)?)?;
            let numeric = (f_plus - f_minus) / (2.0 * FD_STEP);
            let err = (analytic[i] - numeric).abs();
            max_abs_err = max_abs_err.max(err);
            max_mag = max_mag.max(analytic[i].abs()).max(numeric.abs());
        }
        let rel = max_abs_err / max_mag.max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Gradient-check a parameterized module: the checked inputs are the data
/// input plus every parameter in the store, in registration order. The
/// scalar head is the mean of the module output.
pub fn gradcheck_with_params(
    store: &crate::params::ParamStore<f64>,
    input: &Tensor<f64>,
    forward: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
) -> Result<f64> {
    let mut inputs = vec![input.detach()];
    for (_, p) in store.iter() {
        inputs.push(p.borrow().detach());
    }
    let f = move |ts: &[Tensor<f64>]| {
        for ((_, p), t) in store.iter().zip(&ts[1..]) {
            *p.borrow_mut() = t.clone();
        }
        let y = forward(&ts[0])?;
        Ok(crate::ops::mean_all(&y))
    };
    gradcheck(&f, &inputs)
}

fn leafless(
    inputs: &[Tensor<f64>],
    target: &Tensor<f64>,
    replacement: Vec<f64>,
) -> Result<Vec<Tensor<f64>>> {
    inputs
        .iter()
        .map(|t| {
            if std::ptr::eq(t, target) {
                Tensor::from_vec(t.shape(), replacement.clone())
            } else {
                Ok(t.detach())
            }
        })
        .collect()
}

fn eval_at(f: &ScalarFn<'_>, _inputs: &[Tensor<f64>], at: Vec<Tensor<f64>>) -> Result<f64> {
    let out = f(&at)?;
    out.item()
}
