//! Adam with bias correction, plus its binary state file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const STATE_MAGIC: &[u8; 8] = b"SHAUADAM";
const STATE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for every trainable array, indexed like
/// the parameter store (`None` for running statistics).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Option<Vec<f64>>>,
    v: Vec<Option<Vec<f64>>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = |_: ()| -> Vec<Option<Vec<f64>>> {
            store
                .iter()
                .map(|(_, p)| p.role.is_trainable().then(|| vec![0.0; p.value.len()]))
                .collect()
        };
        AdamState {
            step: 0,
            m: zeros(()),
            v: zeros(()),
        }
    }

    /// One update with learning rate `lr`; `grads` is indexed by parameter.
    pub fn update(
        &mut self,
        store: &mut ParamStore,
        grads: &[Option<Tensor>],
        lr: f64,
        cfg: &AdamConfig,
    ) -> Result<()> {
        if grads.len() != self.m.len() || store.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} arrays, got {} gradients for {} parameters",
                self.m.len(),
                grads.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let i = id.index();
            let (Some(m), Some(v)) = (self.m[i].as_mut(), self.v[i].as_mut()) else {
                continue;
            };
            let Some(g) = grads[i].as_ref() else { continue };
            let p = store.value_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= lr * mhat / (vhat.sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.m.len() as u64).to_le_bytes());
        for (m, v) in self.m.iter().zip(&self.v) {
            let len = m.as_ref().map_or(0, |m| m.len());
            out.push(m.is_some() as u8);
            out.extend_from_slice(&(len as u64).to_le_bytes());
            for x in m.iter().chain(v.iter()).flatten() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Decode a state written by [`AdamState::encode`], checking it matches `store`.
    pub fn decode(bytes: &[u8], store: &ParamStore) -> Result<Self> {
        let mut r = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(Error::Checkpoint("optimizer state is truncated".into()));
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(8)? != STATE_MAGIC {
            return Err(Error::Checkpoint("not an optimizer state file".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != STATE_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported optimizer state version {version}"
            )));
        }
        let step = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if count != store.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer state holds {count} arrays, model has {}",
                store.len()
            )));
        }
        let mut state = AdamState {
            step,
            m: Vec::with_capacity(count),
            v: Vec::with_capacity(count),
        };
        for (_, p) in store.iter() {
            let present = take(1)?[0] != 0;
            let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            if present != p.role.is_trainable() || (present && len != p.value.len()) {
                return Err(Error::Checkpoint(format!(
                    "optimizer state does not match parameter {}",
                    p.name
                )));
            }
            let mut read = |n: usize| -> Result<Vec<f64>> {
                Ok(take(8 * n)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect())
            };
            if present {
                state.m.push(Some(read(len)?));
                state.v.push(Some(read(len)?));
            } else {
                state.m.push(None);
                state.v.push(None);
            }
        }
        Ok(state)
    }
}
