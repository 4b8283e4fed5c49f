//! Adam with bias correction, one state per network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{MlpSpec, ParamStore};

fn default_lr() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: default_lr(), beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("adam eps must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step count `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamStore,
    pub v: ParamStore,
    pub t: u64,
}

impl AdamState {
    pub fn new(spec: &MlpSpec) -> Self {
        Self { m: ParamStore::zeros_like(spec), v: ParamStore::zeros_like(spec), t: 0 }
    }
}

/// One Adam step on `params` in place. Increments both `state.t` and
/// `params.step`.
pub fn adam_update(params: &mut ParamStore, grads: &ParamStore, state: &mut AdamState, hyper: &AdamHyper) -> Result<()> {
    let shapes_ok = |a: &ParamStore, b: &ParamStore| {
        a.weights.len() == b.weights.len() && a.tensors().zip(b.tensors()).all(|(x, y)| x.shape() == y.shape())
    };
    if !shapes_ok(params, grads) || !shapes_ok(params, &state.m) || !shapes_ok(params, &state.v) {
        return Err(Error::Shape("adam: parameter, gradient and state shapes differ".into()));
    }
    state.t += 1;
    params.step += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let tensors = params.tensors_mut().zip(grads.tensors()).zip(state.m.tensors_mut().zip(state.v.tensors_mut()));
    for ((p, g), (m, v)) in tensors {
        let iter = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((pv, &gv), (mv, vv)) in iter {
            *mv = hyper.beta1 * *mv + (1.0 - hyper.beta1) * gv;
            *vv = hyper.beta2 * *vv + (1.0 - hyper.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Activation;
    use crate::tensor::Tensor;

    fn scalar_spec() -> MlpSpec {
        MlpSpec::new(1, 0, &[], 1, Activation::Linear)
    }

    fn store(w: f64) -> ParamStore {
        let mut p = ParamStore::zeros_like(&scalar_spec());
        p.weights[0] = Tensor::scalar(w);
        p
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let spec = scalar_spec();
        let hyper = AdamHyper::default();
        let mut p = store(1.5);
        let mut st = AdamState::new(&spec);
        st.m.weights[0] = Tensor::scalar(0.4);
        st.v.weights[0] = Tensor::scalar(0.2);
        st.t = 3;
        let before = p.weights[0].item();
        // Zero moments: the parameter stays put.
        let mut fresh = AdamState::new(&spec);
        adam_update(&mut p, &ParamStore::zeros_like(&spec), &mut fresh, &hyper).unwrap();
        assert_eq!(p.weights[0].item(), before);
        // Nonzero moments: they decay.
        let mut q = store(1.5);
        adam_update(&mut q, &ParamStore::zeros_like(&spec), &mut st, &hyper).unwrap();
        assert_eq!(st.m.weights[0].item(), 0.5 * 0.4);
        assert_eq!(st.v.weights[0].item(), 0.999 * 0.2);
    }

    #[test]
    fn first_step_closed_form() {
        let spec = scalar_spec();
        let hyper = AdamHyper { lr: 1e-3, ..Default::default() };
        let mut p = store(0.0);
        let mut st = AdamState::new(&spec);
        let g = store(2.0);
        adam_update(&mut p, &g, &mut st, &hyper).unwrap();
        let expect = -1e-3 * (2.0 / (2.0 + 1e-8));
        assert!((p.weights[0].item() - expect).abs() < 1e-18);
        assert_eq!(p.step, 1);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn quadratic_descent() {
        // Minimize ½x² from x₀ = 5; the gradient is x itself.
        let spec = scalar_spec();
        let hyper = AdamHyper { lr: 0.1, ..Default::default() };
        let mut p = store(5.0);
        let mut st = AdamState::new(&spec);
        let mut trace = vec![5.0f64];
        for _ in 0..100 {
            let g = store(p.weights[0].item());
            adam_update(&mut p, &g, &mut st, &hyper).unwrap();
            trace.push(p.weights[0].item());
        }
        for w in trace[10..].windows(2) {
            assert!(w[1].abs() < w[0].abs());
        }
        assert!(trace.last().unwrap().abs() < 0.5, "{:?}", trace.last());
    }

    #[test]
    fn shape_mismatch() {
        let spec = scalar_spec();
        let other = MlpSpec::new(2, 0, &[], 1, Activation::Linear);
        let mut p = ParamStore::zeros_like(&spec);
        let mut st = AdamState::new(&spec);
        assert!(adam_update(&mut p, &ParamStore::zeros_like(&other), &mut st, &AdamHyper::default()).is_err());
    }
}
