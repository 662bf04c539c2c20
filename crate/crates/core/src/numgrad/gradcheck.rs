use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Largest `|analytic − numeric| / max(1, |numeric|)` over every scalar in
/// `params`, where `numeric` is the central difference with step `eps`.
///
/// `loss_fn` builds a fresh graph each call and must be deterministic (reseed
/// any random draws inside it). `params` is left with its original values and
/// with gradients cleared.
pub fn finite_diff_check<F>(mut loss_fn: F, params: &mut ParamStore, eps: f64) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be > 0, got {eps}")));
    }
    params.zero_grads();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, params)?;
    if !g.scalar(loss).is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    g.backward(loss, params)?;
    let analytic = params.clone();
    params.zero_grads();

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let v = loss_fn(&mut g, store)?;
        let l = g.scalar(v);
        if !l.is_finite() {
            return Err(Error::Numeric("loss is not finite under perturbation".into()));
        }
        Ok(l)
    };

    let names: Vec<String> = params.names().map(str::to_owned).collect();
    let mut worst = 0.0f64;
    for name in names {
        let n = params.value(&name)?.len();
        for k in 0..n {
            let orig = params.value(&name)?.data()[k];
            params.value_mut(&name)?.data_mut()[k] = orig + eps;
            let up = eval(params)?;
            params.value_mut(&name)?.data_mut()[k] = orig - eps;
            let down = eval(params)?;
            params.value_mut(&name)?.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let exact = analytic.grad(&name)?.data()[k];
            worst = worst.max((exact - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}
