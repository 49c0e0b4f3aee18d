//! Gradient-descent optimizers operating on flat parameter slots.
//!
//! Parameters are passed as a slice of [`Tensor`]s with gradients aligned by
//! index; a missing gradient is treated as zero. Adam keeps first and second
//! moment state per slot and applies bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { cfg: AdamConfig, t: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>> },
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adam(cfg: AdamConfig) -> Self {
        Optimizer::Adam { cfg, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update over every slot. `grads[i]`, when present, must match
    /// `params[i]` in shape.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "optimizer got {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.shape() != params[i].shape() {
                    return Err(Error::Dimension(format!(
                        "gradient shape {:?} does not match parameter shape {:?} in slot {i}",
                        g.shape(),
                        params[i].shape()
                    )));
                }
            }
        }
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    if let Some(g) = g {
                        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                            *pv -= *lr * gv;
                        }
                    }
                }
            }
            Optimizer::Adam { cfg, t, m, v } => {
                if m.is_empty() {
                    *m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
                    *v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
                } else if m.len() != params.len()
                    || m.iter().zip(params.iter()).any(|(s, p)| s.len() != p.numel())
                {
                    return Err(Error::Contract(
                        "optimizer state does not match parameter layout".into(),
                    ));
                }
                *t += 1;
                let bc1 = 1.0 - cfg.beta1.powi(*t as i32);
                let bc2 = 1.0 - cfg.beta2.powi(*t as i32);
                for (slot, p) in params.iter_mut().enumerate() {
                    let ms = &mut m[slot];
                    let vs = &mut v[slot];
                    let zero = vec![0.0; p.numel()];
                    let gd = grads[slot].as_ref().map_or(&zero[..], |g| g.data());
                    for (e, pv) in p.data_mut().iter_mut().enumerate() {
                        let g = gd[e];
                        ms[e] = cfg.beta1 * ms[e] + (1.0 - cfg.beta1) * g;
                        vs[e] = cfg.beta2 * vs[e] + (1.0 - cfg.beta2) * g * g;
                        let mhat = ms[e] / bc1;
                        let vhat = vs[e] / bc2;
                        *pv -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
                    }
                }
            }
        }
        for (i, p) in params.iter().enumerate() {
            if let Some(bad) = p.data().iter().find(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "parameter slot {i} became non-finite ({bad}) after update"
                )));
            }
        }
        Ok(())
    }
}
