use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over coordinates of `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`
    pub max_relative_error: f64,
    /// `(input, flat coordinate)` where the maximum was attained.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Compares reverse-mode gradients of a scalar function of several inputs
/// against central differences `(f(x+εeᵢ) − f(x−εeᵢ)) / 2ε`.
///
/// Coordinates are enumerated in input order; the flat index reported in
/// [`Error::NonFiniteProbe`] counts across all inputs.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if !g.value(out).is_scalar() {
        return Err(Error::NonScalarSeed(g.shape(out).to_vec()));
    }
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    let mut probe = inputs.to_vec();
    let mut flat = 0;
    for (ti, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            probe[ti].data_mut()[j] = orig + eps;
            let plus = evaluate(&f, &probe)?;
            probe[ti].data_mut()[j] = orig - eps;
            let minus = evaluate(&f, &probe)?;
            probe[ti].data_mut()[j] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFiniteProbe { index: flat });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[ti].data()[j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = (ti, j);
            }
            report.coordinates += 1;
            flat += 1;
        }
    }
    Ok(report)
}
