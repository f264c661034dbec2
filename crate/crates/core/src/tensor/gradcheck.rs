//! Central-difference gradient checking (64-bit).

use alloc::vec::Vec;

use rand::seq::index::sample;

use super::{Graph, Tensor, Var};
use crate::{engine_rng, Error, Result};

/// Denominator floor of the relative error, so that gradients that are zero
/// up to rounding do not divide by zero.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Step used for coordinate `x`.
pub fn step_for(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(Error::Contract(alloc::format!("grad_check needs a scalar function, got {:?}", v.shape())));
    }
    Ok(v.data()[0])
}

/// Compares reverse-mode gradients of the scalar function `f` against
/// `(f(x+h) - f(x-h)) / 2h` for every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>]) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    grad_check_sampled(f, inputs, usize::MAX, 0)
}

/// As [`grad_check`], but probes at most `per_input` randomly chosen
/// coordinates of each input.
pub fn grad_check_sampled<F>(f: F, inputs: &[Tensor<f64>], per_input: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| alloc::vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    drop(g);

    let mut rng = engine_rng(seed);
    let mut probe = inputs.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        checked: 0,
    };
    for (i, grads) in analytic.iter().enumerate() {
        let n = inputs[i].numel();
        let coords: Vec<usize> = if per_input >= n {
            (0..n).collect()
        } else {
            sample(&mut rng, n, per_input).into_vec()
        };
        for j in coords {
            let x = inputs[i].data()[j];
            let h = step_for(x);
            probe[i].data_mut()[j] = x + h;
            let up = eval(&f, &probe)?;
            probe[i].data_mut()[j] = x - h;
            let down = eval(&f, &probe)?;
            probe[i].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * h);
            let rel = relative_error(grads[j], numeric);
            report.max_relative_error = report.max_relative_error.max(rel);
            report.max_absolute_error = report.max_absolute_error.max((grads[j] - numeric).abs());
            report.checked += 1;
        }
    }
    Ok(report)
}
