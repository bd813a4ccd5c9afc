//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tape::Gradients;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: one first- and second-moment accumulator per parameter,
/// in store order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .parameters()
            .iter()
            .map(|p| Tensor::zeros_like(&p.value))
            .collect();
        Self {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// Applies one update. Frozen rows are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if self.first_moment.len() != store.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first_moment.len(),
                store.len()
            )));
        }
        // Validate everything before mutating anything.
        for p in store.parameters() {
            let g = grads
                .get(&p.name)
                .ok_or_else(|| Error::contract(format!("missing gradient for `{}`", p.name)))?;
            if g.shape() != p.value.shape() {
                return Err(Error::contract(format!(
                    "gradient for `{}` has shape {:?}, parameter has {:?}",
                    p.name,
                    g.shape(),
                    p.value.shape()
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let correct1 = 1.0 - beta1.powi(t);
        let correct2 = 1.0 - beta2.powi(t);

        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id);
            let g = grads.get(&p.name).expect("validated above").data();
            let cols = p.value.cols();
            let m = self.first_moment[k].data_mut();
            let v = self.second_moment[k].data_mut();
            let frozen = std::mem::take(&mut p.frozen_rows);
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                if frozen.get(i / cols).copied().unwrap_or(false) {
                    continue;
                }
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / correct1;
                let v_hat = v[i] / correct2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.frozen_rows = frozen;
        }
        Ok(())
    }
}
