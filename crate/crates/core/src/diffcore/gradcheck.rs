use std::fmt;

use super::graph::{Graph, Var};
use super::params::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_diff: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "grad-check {} (max rel error {:.3e}, tol {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.max_rel_error,
            self.tol
        )?;
        for p in &self.params {
            writeln!(
                f,
                "  {:<32} rel {:.3e}  abs {:.3e}  @{}",
                p.name, p.max_rel_error, p.max_abs_diff, p.worst_index
            )?;
        }
        Ok(())
    }
}

fn evaluate<F>(params: &ParamSet, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let mut g = Graph::new(params);
    let loss = f(&mut g)?;
    if g.shape(loss).len() != 1 {
        return Err(Error::shape("grad_check needs a scalar function"));
    }
    let v = g.scalar(loss);
    if !v.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(v)
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences with the given `step`, for every element of every parameter
/// that requires a gradient.
///
/// Relative error is `|a - b| / max(|a|, |b|, 1e-8)`. Parameters are restored
/// bit-exactly after each perturbation.
pub fn grad_check<F>(params: &mut ParamSet, step: f64, tol: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = f(&mut g)?;
        if !g.scalar(loss).is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        g.backward(loss)?
    };

    let mut checks = Vec::new();
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        if !params.get(id).requires_grad {
            continue;
        }
        let n = params.get(id).data.len();
        let zeros = vec![0.0; n];
        let exact = analytic.get(id).unwrap_or(&zeros).to_vec();
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            max_rel_error: 0.0,
            max_abs_diff: 0.0,
            worst_index: 0,
        };
        for i in 0..n {
            let orig = params.get(id).data[i];
            params.get_mut(id).data[i] = orig + step;
            let plus = evaluate(params, &f);
            params.get_mut(id).data[i] = orig - step;
            let minus = evaluate(params, &f);
            params.get_mut(id).data[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * step);

            let a = exact[i];
            let diff = (a - numeric).abs();
            let rel = diff / a.abs().max(numeric.abs()).max(1e-8);
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_index = i;
            }
            check.max_abs_diff = check.max_abs_diff.max(diff);
        }
        checks.push(check);
    }
    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params: checks,
        max_rel_error,
        tol,
        passed: max_rel_error < tol,
    })
}
