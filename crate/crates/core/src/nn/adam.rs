use serde::{Deserialize, Serialize};

use super::ParamBlocks;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Training(format!("learning rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(Error::Training(format!("betas must lie in (0,1): {} {}", self.beta1, self.beta2)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Training("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates, flattened in block order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

/// One bias-corrected Adam update at step `t >= 1`. Gradients are checked for
/// finiteness before anything is modified.
pub fn adam_step<P: ParamBlocks>(
    state: &mut AdamState,
    params: &mut P,
    grads: &P,
    hyper: &AdamHyper,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Training("Adam step index starts at 1".into()));
    }
    let gblocks = grads.blocks();
    for (name, g) in &gblocks {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    let n: usize = gblocks.iter().map(|(_, g)| g.len()).sum();
    if n != state.m.len() || n != params.n_params() {
        return Err(Error::Dimension(format!(
            "optimizer holds {} moments, gradient has {n}, parameters {}",
            state.m.len(),
            params.n_params()
        )));
    }
    let bc1 = 1.0 - hyper.beta1.powi(t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(t as i32);
    let mut k = 0;
    for ((_, p), (_, g)) in params.blocks_mut().into_iter().zip(gblocks) {
        for (pv, gv) in p.iter_mut().zip(g) {
            let m = &mut state.m[k];
            let v = &mut state.v[k];
            *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * gv;
            *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * gv * gv;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *pv -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
            k += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LstmConfig, LstmParams, Network};

    fn filled(p: &LstmParams, value: f64) -> LstmParams {
        let mut g = p.zeros_like();
        for (_, b) in g.blocks_mut() {
            b.iter_mut().for_each(|v| *v = value);
        }
        g
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let hyper = AdamHyper::default();
        for g in [0.5, -3.0, 1e-3] {
            let mut p = LstmParams::init(LstmConfig::default(), 1).unwrap();
            let before = p.flat();
            let grads = filled(&p, g);
            let mut st = AdamState::new(p.n_params());
            adam_step(&mut st, &mut p, &grads, &hyper, 1).unwrap();
            for (a, b) in p.flat().iter().zip(&before) {
                let delta = a - b;
                assert_eq!(delta.signum(), -g.signum());
                let lr = hyper.learning_rate;
                assert!(delta.abs() <= lr * (1.0 + 1e-12) && delta.abs() >= lr * (1.0 - 1e-4), "{delta}");
            }
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = LstmParams::init(LstmConfig::default(), 1).unwrap();
        let before = p.clone();
        let grads = p.zeros_like();
        let mut st = AdamState::new(p.n_params());
        for t in 1..=3 {
            adam_step(&mut st, &mut p, &grads, &AdamHyper::default(), t).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = LstmParams::init(LstmConfig::default(), 1).unwrap();
        let before = p.clone();
        let mut grads = p.zeros_like();
        grads.w_hh[7] = f64::NAN;
        let mut st = AdamState::new(p.n_params());
        let err = adam_step(&mut st, &mut p, &grads, &AdamHyper::default(), 1).unwrap_err();
        assert!(err.to_string().contains("w_hh"), "{err}");
        assert_eq!(p, before);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = LstmParams::init(LstmConfig::default(), 9).unwrap();
            let mut st = AdamState::new(p.n_params());
            let x0 = [0.1, 0.2, -0.3];
            let x1 = [0.0, -0.5, 0.9];
            for t in 1..=20 {
                let (_, g) = p.loss_grad(&[&x0, &x1], (t % 4) as usize, 1.0).unwrap();
                adam_step(&mut st, &mut p, &g, &AdamHyper::default(), t).unwrap();
            }
            p.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
