use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;

use super::TrainConfig;

/// First and second moment estimates, index-aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .entries()
            .iter()
            .map(|e| vec![0.0; if e.trainable { e.value.numel() } else { 0 }])
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Bias-corrected Adam. Entries that are not trainable, or whose gradient is
/// `None`, are left untouched.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Option<Tensor>],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::invalid(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            store.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, entry) in store.entries_mut().iter_mut().enumerate() {
        let Some(g) = &grads[i] else { continue };
        if !entry.trainable {
            continue;
        }
        if g.shape() != entry.value.shape() {
            return Err(Error::shape(format!(
                "adam: gradient {:?} for {} with shape {:?}",
                g.shape(),
                entry.name,
                entry.value.shape()
            )));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((p, &gi), mi), vi) in entry
            .value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
