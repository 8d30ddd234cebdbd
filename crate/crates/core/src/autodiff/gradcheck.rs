use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Step used by the central-difference oracle.
pub const FD_EPSILON: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale; below it
/// the central-difference estimate is dominated by rounding noise.
const RELATIVE_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares tape gradients of a scalar function against central finite
/// differences at `inputs` and returns the worst relative error.
///
/// `f` receives a fresh tape and one leaf per input; it must be a pure
/// function of those leaves (seed any dropout from a fixed stream inside
/// `f`).
pub fn check_gradients<F>(f: F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let root = f(&mut tape, &vars)?;
        Ok(tape.value(root).item())
    };

    let mut worst = 0.0_f64;
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + FD_EPSILON;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = x0 - FD_EPSILON;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * FD_EPSILON);
            worst = worst.max(relative_error(analytic[j], numeric));
        }
    }
    Ok(worst)
}
