//! Central finite-difference verification of reverse-mode gradients.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::{Scalar, Tensor};
use crate::error::Result;

/// Entries whose analytic and numeric gradients are both below this are
/// compared in absolute terms.
const REL_FLOOR: Scalar = 1e-8;

pub fn relative_error(analytic: Scalar, numeric: Scalar) -> Scalar {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Maximum relative error between the reverse-mode gradient of `f` at `x`
/// and central differences `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: Scalar) -> Result<Scalar>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<Scalar> {
        let mut g = Graph::new();
        let v = g.constant(t.clone());
        let out = f(&mut g, v)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let v = g.leaf(x.clone().with_grad());
    let out = f(&mut g, v)?;
    g.backward(out)?;
    let analytic = g.grad(v).map(<[Scalar]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut probe = x.clone();
    let mut worst: Scalar = 0.0;
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Per-parameter result of [`finite_diff_check_params`].
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: Scalar,
    pub max_abs_grad: Scalar,
}

/// Finite-difference check over every trainable parameter of a store.
/// `f` must build the scalar objective from the parameters bound on a fresh
/// graph.
pub fn finite_diff_check_params<F>(store: &ParamStore, f: F, eps: Scalar) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    g.backward(out)?;
    let grads = g.param_grads();

    let mut probe = store.clone();
    let eval = |probe: &ParamStore| -> Result<Scalar> {
        let mut g = Graph::new();
        let out = f(&mut g, probe)?;
        Ok(g.value(out).item())
    };
    let mut report = Vec::new();
    for (id, p) in store.iter() {
        if p.frozen {
            continue;
        }
        let analytic = grads
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| vec![0.0; p.tensor.numel()]);
        let mut worst: Scalar = 0.0;
        for i in 0..p.tensor.numel() {
            let orig = p.tensor.data()[i];
            probe.get_mut(id).tensor.data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(id).tensor.data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(id).tensor.data_mut()[i] = orig;
            worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * eps)));
        }
        report.push(ParamCheck {
            name: p.name.clone(),
            max_rel_err: worst,
            max_abs_grad: analytic.iter().fold(0.0, |a: Scalar, b| a.max(b.abs())),
        });
    }
    Ok(report)
}
