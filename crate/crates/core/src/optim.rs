//! First-order optimizers over a [`ParamSet`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ParamSet, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer moments. SGD keeps them at zero so the checkpoint layout does
/// not depend on the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<F> {
    pub m: ParamSet<F>,
    pub v: ParamSet<F>,
}

impl<F: Real> Moments<F> {
    pub fn zeros_like(params: &ParamSet<F>) -> Self {
        Moments {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// Apply one update in place. `step` is the 1-based index of this update
/// (used for Adam bias correction). Returns the largest absolute change.
pub fn apply_update<F: Real>(
    kind: OptimizerKind,
    hyper: AdamHyper,
    lr: f64,
    step: u64,
    params: &mut ParamSet<F>,
    grads: &ParamSet<F>,
    moments: &mut Moments<F>,
) -> Result<f64> {
    if !params.same_shape(grads) || !params.same_shape(&moments.m) {
        return Err(Error::arg("gradient shapes do not match parameters"));
    }
    if step == 0 {
        return Err(Error::arg("optimizer step index is 1-based"));
    }
    let mut max_delta = 0.0f64;
    match kind {
        OptimizerKind::Sgd => {
            let lr = F::of(lr);
            for (p, g) in params.slices_mut().into_iter().zip(grads.slices()) {
                for (p, &g) in p.iter_mut().zip(g) {
                    let delta = lr * g;
                    *p = *p - delta;
                    max_delta = max_delta.max(delta.widen().abs());
                }
            }
        }
        OptimizerKind::Adam => {
            let AdamHyper { beta1, beta2, eps } = hyper;
            let bc1 = 1.0 - beta1.powf(step as f64);
            let bc2 = 1.0 - beta2.powf(step as f64);
            let step_size = F::of(lr / bc1);
            let bc2_sqrt = F::of(bc2.sqrt());
            let (b1, b2, eps) = (F::of(beta1), F::of(beta2), F::of(eps));
            let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);
            let slices = params
                .slices_mut()
                .into_iter()
                .zip(grads.slices())
                .zip(moments.m.slices_mut().into_iter().zip(moments.v.slices_mut()));
            for ((p, g), (m, v)) in slices {
                for i in 0..p.len() {
                    let gi = g[i];
                    m[i] = b1 * m[i] + one_b1 * gi;
                    v[i] = b2 * v[i] + one_b2 * gi * gi;
                    let delta = step_size * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
                    p[i] = p[i] - delta;
                    max_delta = max_delta.max(delta.widen().abs());
                }
            }
        }
    }
    Ok(max_delta)
}

/// `ema ← decay·ema + (1 − decay)·params`, elementwise.
pub fn ema_update<F: Real>(ema: &mut ParamSet<F>, params: &ParamSet<F>, decay: f64) -> Result<()> {
    if !ema.same_shape(params) {
        return Err(Error::arg("EMA and parameter shapes differ"));
    }
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::arg(format!("EMA decay must be in [0, 1], got {decay}")));
    }
    // Exact endpoints: decay 1 leaves the EMA untouched, decay 0 copies.
    if decay == 1.0 {
        return Ok(());
    }
    let (d, one_d) = (F::of(decay), F::of(1.0 - decay));
    for (e, p) in ema.slices_mut().into_iter().zip(params.slices()) {
        if decay == 0.0 {
            e.copy_from_slice(p);
        } else {
            for (e, &p) in e.iter_mut().zip(p) {
                *e = d * *e + one_d * p;
            }
        }
    }
    Ok(())
}
