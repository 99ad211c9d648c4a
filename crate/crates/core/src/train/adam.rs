use serde::{Deserialize, Serialize};

use crate::error::{DncError, Result};
use crate::model::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.98, epsilon: 1e-9 }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<P> {
    pub step: u64,
    pub m: P,
    pub v: P,
}

impl<P: ParamSet + Clone> AdamState<P> {
    pub fn new(params: &P) -> Self {
        Self { step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }
}

/// One bias-corrected Adam update. Nothing is modified when any gradient
/// entry is non-finite.
pub fn adam_step<P: ParamSet>(params: &mut P, grads: &P, state: &mut AdamState<P>, lr: f64, cfg: &AdamConfig) -> Result<()> {
    let g = grads.tensors();
    if let Some((name, _)) = g.iter().find(|(_, t)| t.iter().any(|v| !v.is_finite())) {
        return Err(DncError::NonFiniteGradient(name.clone()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let p = params.tensors_mut();
    let m = state.m.tensors_mut();
    let v = state.v.tensors_mut();
    if p.len() != g.len() || m.len() != g.len() || v.len() != g.len() {
        return Err(DncError::DimensionMismatch("optimizer state does not match parameters".into()));
    }
    for (((p, g), m), v) in p.into_iter().zip(g).zip(m).zip(v) {
        if p.1.dim() != g.1.dim() {
            return Err(DncError::DimensionMismatch(format!("gradient shape differs for {}", p.0)));
        }
        ndarray::Zip::from(p.1).and(g.1).and(m.1).and(v.1).for_each(|p, &g, m, v| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr * mhat / (vhat.sqrt() + cfg.epsilon);
        });
    }
    Ok(())
}

/// Scales `grads` so that their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<P: ParamSet>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.tensors().iter().map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for (_, t) in grads.tensors_mut() {
            *t *= s;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tensor;
    use ndarray::{array, Array2};

    #[test]
    fn minimises_a_quadratic() {
        // f(x) = (x - 3)^2
        let mut x: Tensor = array![[-2.0]];
        let mut state = AdamState::new(&x);
        let cfg = AdamConfig::default();
        for _ in 0..200 {
            let g = (&x - 3.0) * 2.0;
            adam_step(&mut x, &g, &mut state, 0.1, &cfg).unwrap();
        }
        assert!((x[[0, 0]] - 3.0).abs() < 1e-3, "{}", x[[0, 0]]);
        assert_eq!(state.step, 200);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut x: Tensor = array![[1.5, -0.5]];
        let before = x.clone();
        let mut state = AdamState::new(&x);
        for _ in 0..5 {
            adam_step(&mut x, &Array2::zeros((1, 2)), &mut state, 0.5, &AdamConfig::default()).unwrap();
        }
        assert_eq!(x, before);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut p = vec![array![[1.0]], array![[2.0]]];
        let g = vec![array![[0.0]], array![[f64::NAN]]];
        let mut state = AdamState::new(&p);
        match adam_step(&mut p, &g, &mut state, 0.1, &AdamConfig::default()) {
            Err(DncError::NonFiniteGradient(name)) => assert_eq!(name, "1"),
            other => panic!("{other:?}"),
        }
        assert_eq!(state.step, 0);
    }

    #[test]
    fn replay_is_identical() {
        let run = || {
            let mut x: Tensor = array![[0.3, 0.7]];
            let mut s = AdamState::new(&x);
            let mut traj = Vec::new();
            for i in 0..20 {
                let g = x.mapv(|v| (v * i as f64).sin());
                adam_step(&mut x, &g, &mut s, 0.05, &AdamConfig::default()).unwrap();
                traj.push(x.clone());
            }
            traj
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g: Tensor = array![[3.0, 4.0]];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[[0, 0]] - 0.6).abs() < 1e-15);
    }
}
