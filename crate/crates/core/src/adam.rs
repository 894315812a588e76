//! ADAM with bias correction and an externally supplied step size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        let p = AdamParams { beta1, beta2, eps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::param("ADAM decay rates must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::param("ADAM eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    pub fn new(dim: usize, params: AdamParams) -> Result<Self> {
        params.validate()?;
        Ok(AdamState { params, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 })
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One descent step `x -= eta * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64], eta: f64) -> Result<()> {
        Error::check_len(self.m.len(), x.len())?;
        Error::check_len(self.m.len(), grad.len())?;
        if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient entry {k}: {}", grad[k])));
        }
        let AdamParams { beta1, beta2, eps } = self.params;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for k in 0..x.len() {
            let g = grad[k];
            self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * g;
            self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            x[k] -= eta * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Radial step-size schedule. `norms[i]` is the latent norm after iteration `i`
/// (`norms[0]` is the initial point). Iterations 1 and 2 use `eta0`; later ones scale by
/// the cube root of the norm growth since iteration 2.
pub fn step_size(iteration: usize, norms: &[f64], eta0: f64) -> f64 {
    if iteration < 3 {
        return eta0;
    }
    match (norms.get(2), norms.get(iteration - 1)) {
        (Some(&base), Some(&prev)) if base > 0.0 => eta0 * (prev / base).cbrt(),
        _ => {
            log::debug!("degenerate latent norm at iteration 2; using the base step size");
            eta0
        }
    }
}
