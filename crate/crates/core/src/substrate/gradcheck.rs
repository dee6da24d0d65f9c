//! Finite-difference verification of analytic gradients.

use super::graph::{Graph, VarId};
use super::params::{Binding, ParamId, ParamStore};
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_element: usize,
    pub loss: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Compare the analytic gradient of a scalar computation against central
/// finite differences, perturbing every element of every target parameter.
///
/// `build` must construct the same computation every call; the store is
/// mutated between calls to evaluate `f(p +/- eps)` and restored afterwards.
/// Returns the max relative error `|a - n| / max(|a|, |n|)`, with elements
/// where both magnitudes fall below `1e-6` treated as matching.
pub fn grad_check<T, F>(
    store: &mut ParamStore<T>,
    targets: &[ParamId],
    eps: f64,
    tol: f64,
    build: F,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &Binding) -> Result<VarId>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::config(format!("grad_check eps {eps} outside [1e-6, 1e-3]")));
    }

    // Analytic pass.
    let mut graph = Graph::new();
    let binding = store.bind(&mut graph, |_| true);
    let loss_var = build(&mut graph, &binding)?;
    let loss = graph.value(loss_var).item()?.to_f64().unwrap();
    if !loss.is_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }
    let grads = graph.backward(loss_var)?;
    let analytic: Vec<(ParamId, Vec<f64>)> = targets
        .iter()
        .map(|&id| {
            let var = binding.var(id);
            let g = grads
                .get(var)
                .map(|t| t.data().iter().map(|v| v.to_f64().unwrap()).collect())
                .unwrap_or_else(|| vec![0.0; store.get(id).len()]);
            (id, g)
        })
        .collect();
    drop(graph);

    let eval = |store: &ParamStore<T>| -> Result<f64> {
        let mut g = Graph::new();
        let b = store.bind_frozen(&mut g);
        let v = build(&mut g, &b)?;
        let l = g.value(v).item()?.to_f64().unwrap();
        if !l.is_finite() {
            return Err(Error::NonFinite("grad_check perturbed loss".into()));
        }
        Ok(l)
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_element: 0,
        loss,
        tol,
    };
    let eps_t = T::from_f64(eps).unwrap();
    for (id, analytic_grad) in &analytic {
        for k in 0..store.get(*id).len() {
            let original = store.get(*id).data()[k];
            store.get_mut(*id).data_mut()[k] = original + eps_t;
            let f_plus = eval(store)?;
            store.get_mut(*id).data_mut()[k] = original - eps_t;
            let f_minus = eval(store)?;
            store.get_mut(*id).data_mut()[k] = original;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic_grad[k];
            let denom = a.abs().max(numeric.abs());
            let rel = if denom < 1e-6 {
                0.0
            } else {
                (a - numeric).abs() / denom
            };
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = store.name(*id).to_string();
                report.worst_element = k;
            }
        }
    }
    Ok(report)
}
