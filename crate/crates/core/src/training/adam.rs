//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

/// One update: `t += 1`, moments refreshed, then
/// `θ -= lr · m̂ / (√v̂ + ε)` with `m̂ = m/(1-β₁ᵗ)`, `v̂ = v/(1-β₂ᵗ)`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    config: &AdamConfig,
) -> Result<()> {
    let grads: Vec<&[f64]> = grads.tensors().into_iter().map(|(_, t)| t).collect();
    let ps = params.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    let lens_ok = ps.len() == grads.len()
        && ms.len() == grads.len()
        && vs.len() == grads.len()
        && ps.iter().zip(&grads).all(|(p, g)| p.len() == g.len())
        && ms.iter().zip(&grads).all(|(m, g)| m.len() == g.len());
    if !lens_ok {
        return Err(Error::Shape("gradient layout differs from parameters".into()));
    }

    state.t += 1;
    let t = state.t as i32;
    let AdamConfig { beta1, beta2, eps } = *config;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in ps.into_iter().zip(grads).zip(ms).zip(vs) {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn params(vals: &[f64]) -> ModelParams {
        ModelParams {
            w_pre: None,
            b_pre: None,
            w_mp: vec![Matrix::from_vec(1, vals.len(), vals.to_vec()).unwrap()],
            w_out: Matrix::zeros(2, 1),
            b_out: vec![0.0; 2],
        }
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut p = params(&[1.0, -2.0, 0.5]);
        let mut g = p.zeros_like();
        g.w_mp[0].as_mut_slice().copy_from_slice(&[3.0, -0.01, 250.0]);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &g, &mut st, 1e-3, &cfg).unwrap();
        let got = p.w_mp[0].as_slice();
        let start = [1.0, -2.0, 0.5];
        let grad: [f64; 3] = [3.0, -0.01, 250.0];
        for i in 0..3 {
            let expected = start[i] - 1e-3 * grad[i] / (grad[i].abs() + 1e-8);
            assert!((got[i] - expected).abs() < 1e-15, "{} vs {}", got[i], expected);
            assert!((got[i] - start[i]).abs() <= 1e-3 * (1.0 + 1e-12));
        }
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let cfg = AdamConfig::default();
        let mut fresh = params(&[1.0, 2.0]);
        let zero = fresh.zeros_like();
        let mut st = AdamState::new(&fresh);
        adam_step(&mut fresh, &zero, &mut st, 1e-3, &cfg).unwrap();
        assert_eq!(fresh, params(&[1.0, 2.0]));

        let mut p = params(&[1.0, 2.0]);
        let mut g = p.zeros_like();
        g.w_mp[0].as_mut_slice().copy_from_slice(&[1.0, 1.0]);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 1e-3, &cfg).unwrap();
        let m_before = st.m.w_mp[0].as_slice().to_vec();
        let v_before = st.v.w_mp[0].as_slice().to_vec();
        adam_step(&mut p, &zero, &mut st, 1e-3, &cfg).unwrap();
        for (a, b) in st.m.w_mp[0].as_slice().iter().zip(&m_before) {
            assert_eq!(*a, 0.9 * b);
        }
        for (a, b) in st.v.w_mp[0].as_slice().iter().zip(&v_before) {
            assert_eq!(*a, 0.999 * b);
        }
    }

    #[test]
    fn identical_entries_update_identically() {
        let mut p = params(&[0.3, 0.3]);
        let mut g = p.zeros_like();
        g.w_mp[0].as_mut_slice().copy_from_slice(&[-0.7, -0.7]);
        let mut st = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut st, 1e-2, &AdamConfig::default()).unwrap();
        }
        let w = p.w_mp[0].as_slice();
        assert_eq!(w[0].to_bits(), w[1].to_bits());
    }

    #[test]
    fn layout_mismatch_rejected() {
        let mut p = params(&[1.0, 2.0]);
        let g = params(&[1.0]);
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &g, &mut st, 1e-3, &AdamConfig::default()).is_err());
    }
}
