use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip applied before the update; 0 disables it.
    pub clip: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// Scales `g` in place to norm at most `max_norm`. Returns the original norm.
pub fn clip_global_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if max_norm > 0.0 && n > max_norm {
        let s = max_norm / n;
        g.iter_mut().for_each(|v| *v *= s);
    }
    n
}

/// One bias-corrected Adam update of `params`.
pub fn adam_step(state: &mut AdamState, grad: &[f64], params: &mut [f64], hyper: &AdamHyper) -> Result<()> {
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(dim_err!(
            "adam: {} parameters, {} gradient entries, {} moments",
            params.len(),
            grad.len(),
            state.m.len()
        ));
    }
    let mut g = grad.to_vec();
    clip_global_norm(&mut g, hyper.clip);
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (((p, m), v), gi) in params.iter_mut().zip(&mut state.m).zip(&mut state.v).zip(&g) {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * gi;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * gi * gi;
        *p -= hyper.lr * (*m / c1) / ((*v / c2).sqrt() + hyper.eps);
    }
    Ok(())
}
