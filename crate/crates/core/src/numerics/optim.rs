//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: Scalar,
    pub beta1: Scalar,
    pub beta2: Scalar,
    pub eps: Scalar,
    pub weight_decay: Scalar,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// First and second moments per parameter plus the shared step counter.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    pub first: Vec<Vec<Scalar>>,
    pub second: Vec<Vec<Scalar>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![0.0; p.tensor.numel()]).collect::<Vec<_>>();
        Self {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }
}

/// One AdamW update. Parameters without an entry in `grads` and frozen
/// parameters are left untouched. Rejects the whole step if any gradient
/// entry is non-finite.
pub fn adamw_step(store: &mut ParamStore, grads: &[(ParamId, Vec<Scalar>)], state: &mut OptimizerState, cfg: &AdamW) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    for (id, g) in grads {
        let p = store.get(*id);
        if g.len() != p.tensor.numel() {
            return Err(Error::Shape {
                op: "adamw_step",
                lhs: p.tensor.shape().to_vec(),
                rhs: vec![g.len()],
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { name: p.name.clone() });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (id, g) in grads {
        let p = store.get_mut(*id);
        if p.frozen {
            continue;
        }
        let m = &mut state.first[id.index()];
        let v = &mut state.second[id.index()];
        for (i, w) in p.tensor.data_mut().iter_mut().enumerate() {
            *w -= cfg.lr * cfg.weight_decay * *w;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn one_param(values: Vec<Scalar>) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::from_vec(values));
        (s, id)
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let (mut s, id) = one_param(vec![0.5, -2.0]);
        let mut st = OptimizerState::new(&s);
        let cfg = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        adamw_step(&mut s, &[(id, vec![0.0, 0.0])], &mut st, &cfg).unwrap();
        assert_eq!(s.tensor(id).data(), &[0.5, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn decoupled_decay() {
        let (mut s, id) = one_param(vec![0.5, -2.0]);
        let mut st = OptimizerState::new(&s);
        let cfg = AdamW {
            lr: 1e-1,
            weight_decay: 1e-2,
            ..AdamW::default()
        };
        adamw_step(&mut s, &[(id, vec![0.0, 0.0])], &mut st, &cfg).unwrap();
        let want = [0.5 * (1.0 - 1e-3), -2.0 * (1.0 - 1e-3)];
        for (a, b) in s.tensor(id).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn three_steps_on_square_match_scripted_trace() {
        // Scripted recurrence for f(x) = x^2, written out independently.
        let (lr, b1, b2, eps, wd): (f64, f64, f64, f64, f64) = (0.1, 0.9, 0.999, 1e-8, 1e-2);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut trace = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * x;
            x *= 1.0 - lr * wd;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            trace.push(x);
        }

        let (mut s, id) = one_param(vec![1.0]);
        let mut st = OptimizerState::new(&s);
        let cfg = AdamW {
            lr: 0.1,
            weight_decay: 1e-2,
            ..AdamW::default()
        };
        for want in trace {
            let g = 2.0 * s.tensor(id).data()[0];
            adamw_step(&mut s, &[(id, vec![g])], &mut st, &cfg).unwrap();
            assert!((s.tensor(id).data()[0] as f64 - want).abs() < 1e-10);
        }
        assert_eq!(st.step, 3);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut s, id) = one_param(vec![1.0]);
        let mut st = OptimizerState::new(&s);
        let err = adamw_step(&mut s, &[(id, vec![Scalar::NAN])], &mut st, &AdamW::default()).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn deterministic_bitwise() {
        let run = || {
            let (mut s, id) = one_param(vec![0.3, -0.7, 1.1]);
            let mut st = OptimizerState::new(&s);
            for k in 0..5 {
                let g = vec![0.1 * k as Scalar, -0.2, 0.05];
                adamw_step(&mut s, &[(id, g)], &mut st, &AdamW::default()).unwrap();
            }
            s.tensor(id).data().to_vec()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
