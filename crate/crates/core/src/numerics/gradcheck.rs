//! Finite-difference verification of reverse-mode gradients.

use std::fmt;

use super::autodiff::{Graph, Var};
use super::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
const DENOMINATOR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub op_name: String,
    /// Largest relative error over every input element; infinite when any
    /// gradient was non-finite.
    pub max_rel_error: f64,
    pub per_input_errors: Vec<f64>,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < tol
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} max-rel-error {:.3e} (per input: {})",
            self.op_name,
            self.max_rel_error,
            self.per_input_errors
                .iter()
                .map(|e| format!("{:.2e}", e))
                .collect::<Vec<_>>()
                .join(", ")
        )
    }
}

/// Compares reverse-mode gradients of `op` (summed to a scalar when it is
/// not one already) with central differences for every input element.
pub fn grad_check<F>(op_name: &str, op: F, inputs: &[Tensor], eps: f64) -> GradReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    assert!(eps > 0.0, "grad_check eps must be positive");

    let eval = |values: &[Tensor]| -> (Graph, Vec<Var>, Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = op(&mut g, &vars);
        let out = if g.value(out).len() == 1 { out } else { g.sum(out) };
        (g, vars, out)
    };

    let (g, vars, out) = eval(inputs);
    let grads = g.backward(out);

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        if !analytic.all_finite() {
            per_input.push(f64::INFINITY);
            continue;
        }
        let mut worst: f64 = 0.0;
        for idx in 0..inputs[k].len() {
            let orig = inputs[k].data()[idx];
            work[k].data_mut()[idx] = orig + eps;
            let plus = {
                let (g, _, o) = eval(&work);
                g.scalar(o)
            };
            work[k].data_mut()[idx] = orig - eps;
            let minus = {
                let (g, _, o) = eval(&work);
                g.scalar(o)
            };
            work[k].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[idx];
            let err = if numeric.is_finite() {
                (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
            } else {
                f64::INFINITY
            };
            worst = worst.max(err);
        }
        per_input.push(worst);
    }

    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    GradReport {
        op_name: op_name.to_string(),
        max_rel_error,
        per_input_errors: per_input,
    }
}
