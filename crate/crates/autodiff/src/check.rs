//! Finite-difference oracles for validating gradients and jets.
//!
//! These only evaluate forward values, never the reverse sweep or jet rules,
//! so they stay independent of the code they check.

use crate::error::Result;
use crate::graph::{Graph, Value};
use crate::tensor::Tensor;

/// Elementwise agreement `|a - b| <= max(rel * max(|a|, |b|), abs_floor)`.
pub fn close(a: f64, b: f64, rel: f64, abs_floor: f64) -> bool {
    let diff = (a - b).abs();
    diff <= abs_floor || diff <= rel * a.abs().max(b.abs())
}

/// Worst `|a - b| / max(|a|, |b|)` over entries whose difference exceeds the floor.
pub fn worst_relative_error(a: &Tensor, b: &Tensor, abs_floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let diff = (x - y).abs();
            if diff <= abs_floor {
                0.0
            } else {
                diff / x.abs().max(y.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Scalar function of a set of parameter arrays, built on a fresh graph.
pub trait ScalarFn: Fn(&Graph, &[Value<'_>]) -> Result<f64> {}
impl<F: Fn(&Graph, &[Value<'_>]) -> Result<f64>> ScalarFn for F {}

fn eval_at(params: &[Tensor], f: &impl ScalarFn) -> Result<f64> {
    let g = Graph::new();
    let vals: Vec<Value<'_>> = params.iter().map(|p| g.parameter(p.clone())).collect();
    f(&g, &vals)
}

/// Central-difference gradient of `f` with respect to every entry of every
/// parameter array.
pub fn central_difference(params: &[Tensor], step: f64, f: impl ScalarFn) -> Result<Vec<Tensor>> {
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Tensor::zeros(params[p].rows(), params[p].cols());
        for i in 0..params[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let plus = eval_at(&work, &f)?;
            work[p].data_mut()[i] = orig - step;
            let minus = eval_at(&work, &f)?;
            work[p].data_mut()[i] = orig;
            grad.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Central differences of a scalar function of one real variable, orders 1 to 3.
pub fn scalar_derivatives(f: impl Fn(f64) -> f64, x: f64, steps: [f64; 3]) -> [f64; 3] {
    let [h1, h2, h3] = steps;
    let d1 = (f(x + h1) - f(x - h1)) / (2.0 * h1);
    let d2 = (f(x + h2) - 2.0 * f(x) + f(x - h2)) / (h2 * h2);
    let d3 = (f(x + 2.0 * h3) - 2.0 * f(x + h3) + 2.0 * f(x - h3) - f(x - 2.0 * h3)) / (2.0 * h3 * h3 * h3);
    [d1, d2, d3]
}
