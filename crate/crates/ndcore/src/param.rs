//! Named trainable parameters with EMA shadows.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a parameter is used for. Only `Weight` matrices are L2-regularized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
    Embedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    pub ema_shadow: Tensor,
    /// Rows that neither the optimizer nor the EMA may touch (embedding
    /// padding rows, loaded pretrained vectors). Empty means all rows train.
    #[serde(default)]
    pub frozen_rows: Vec<bool>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, kind: ParamKind, value: Tensor) -> Self {
        Self {
            name: name.into(),
            kind,
            ema_shadow: value.clone(),
            value,
            frozen_rows: Vec::new(),
        }
    }

    pub fn is_row_frozen(&self, row: usize) -> bool {
        self.frozen_rows.get(row).copied().unwrap_or(false)
    }

    /// True when at least one row can change.
    pub fn is_trainable(&self) -> bool {
        self.frozen_rows.is_empty() || self.frozen_rows.iter().any(|f| !f)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a store from a parameter list, e.g. one read from a checkpoint.
    pub fn from_parameters(params: Vec<Parameter>) -> Result<Self> {
        let mut store = Self::new();
        for p in params {
            store.push(p)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, param: Parameter) -> Result<ParamId> {
        if self.by_name.contains_key(&param.name) {
            return Err(Error::contract(format!(
                "duplicate parameter name `{}`",
                param.name
            )));
        }
        if param.value.shape() != param.ema_shadow.shape() {
            return Err(Error::contract(format!(
                "EMA shadow of `{}` has shape {:?}, parameter has {:?}",
                param.name,
                param.ema_shadow.shape(),
                param.value.shape()
            )));
        }
        if !param.frozen_rows.is_empty() && param.frozen_rows.len() != param.value.rows() {
            return Err(Error::contract(format!(
                "frozen-row mask of `{}` has {} entries for {} rows",
                param.name,
                param.frozen_rows.len(),
                param.value.rows()
            )));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(param.name.clone(), id);
        self.params.push(param);
        Ok(id)
    }

    /// Weight matrix `[fan_in x fan_out]`, uniform in `±1/sqrt(fan_in)`.
    pub fn add_weight<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.push(Parameter::new(
            name,
            ParamKind::Weight,
            Tensor::from_vec(fan_in, fan_out, data),
        ))
    }

    pub fn add_bias(&mut self, name: &str, width: usize, fill: f64) -> Result<ParamId> {
        self.push(Parameter::new(
            name,
            ParamKind::Bias,
            Tensor::full(1, width, fill),
        ))
    }

    /// Embedding table with rows uniform in `±scale`.
    pub fn add_embedding<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        self.push(Parameter::new(
            name,
            ParamKind::Embedding,
            Tensor::from_vec(rows, cols, data),
        ))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Parameter> {
        Ok(self.get(self.id(name)?))
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn into_parameters(self) -> Vec<Parameter> {
        self.params
    }

    pub fn freeze_rows(&mut self, id: ParamId, rows: &[usize]) -> Result<()> {
        let p = &mut self.params[id.0];
        let n = p.value.rows();
        if p.frozen_rows.is_empty() {
            p.frozen_rows = vec![false; n];
        }
        for &r in rows {
            if r >= n {
                return Err(Error::contract(format!(
                    "cannot freeze row {r} of `{}` with {n} rows",
                    p.name
                )));
            }
            p.frozen_rows[r] = true;
        }
        Ok(())
    }

    /// `shadow <- decay * shadow + (1 - decay) * value` for every trainable row.
    pub fn ema_update(&mut self, decay: f64) -> Result<()> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::contract(format!(
                "EMA decay must lie in [0, 1), got {decay}"
            )));
        }
        for p in &mut self.params {
            let cols = p.value.cols();
            let frozen = std::mem::take(&mut p.frozen_rows);
            let value = p.value.data();
            for (i, s) in p.ema_shadow.data_mut().iter_mut().enumerate() {
                if frozen.get(i / cols).copied().unwrap_or(false) {
                    continue;
                }
                *s = decay * *s + (1.0 - decay) * value[i];
            }
            p.frozen_rows = frozen;
        }
        Ok(())
    }

    /// Exchanges live values and EMA shadows. Applying it twice restores the
    /// original store bit for bit.
    pub fn ema_swap(&mut self) {
        for p in &mut self.params {
            std::mem::swap(&mut p.value, &mut p.ema_shadow);
        }
    }

    /// A copy whose live values are the EMA shadows.
    pub fn ema_snapshot(&self) -> ParamStore {
        let mut snap = self.clone();
        snap.ema_swap();
        snap
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn store_with(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let mut p = Parameter::new("w", ParamKind::Weight, Tensor::scalar(value));
        p.ema_shadow = Tensor::scalar(0.0);
        s.push(p).unwrap();
        s
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add_bias("b", 3, 0.0).unwrap();
        assert!(matches!(s.add_bias("b", 3, 0.0), Err(Error::Contract(_))));
    }

    #[test]
    fn ema_single_update() {
        let mut s = store_with(1.0);
        s.ema_update(0.9).unwrap();
        assert!((s.by_name("w").unwrap().ema_shadow.item() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn ema_geometric_series() {
        let mut s = store_with(2.5);
        let decay: f64 = 0.8;
        for _ in 0..7 {
            s.ema_update(decay).unwrap();
        }
        let expected = 2.5 * (1.0 - decay.powi(7));
        assert!((s.by_name("w").unwrap().ema_shadow.item() - expected).abs() < 1e-12);
    }

    #[test]
    fn ema_decay_range_checked() {
        let mut s = store_with(1.0);
        assert!(s.ema_update(1.0).is_err());
        assert!(s.ema_update(-0.1).is_err());
        assert!(s.ema_update(0.0).is_ok());
    }

    #[test]
    fn ema_swap_is_involution() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let mut s = ParamStore::new();
        s.add_weight("w", 4, 3, &mut rng).unwrap();
        s.get_mut(ParamId(0)).ema_shadow = Tensor::full(4, 3, 0.25);
        let before = s.clone();
        s.ema_swap();
        assert_ne!(s, before);
        s.ema_swap();
        let a: Vec<u64> = s.parameters()[0].value.data().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = before.parameters()[0].value.data().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn ema_skips_frozen_rows() {
        let mut s = ParamStore::new();
        let mut p = Parameter::new("e", ParamKind::Embedding, Tensor::full(2, 2, 1.0));
        p.ema_shadow = Tensor::zeros(2, 2);
        let id = s.push(p).unwrap();
        s.freeze_rows(id, &[0]).unwrap();
        s.ema_update(0.5).unwrap();
        assert_eq!(s.get(id).ema_shadow.data(), &[0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn weight_init_within_fan_in_bound() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        let mut s = ParamStore::new();
        let id = s.add_weight("w", 16, 5, &mut rng).unwrap();
        assert!(s.value(id).data().iter().all(|x| x.abs() <= 0.25));
    }
}
