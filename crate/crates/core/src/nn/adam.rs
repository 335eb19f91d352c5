use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction, no weight decay.
///
/// Moment estimates are stored per parameter path so that optimizer state
/// can be checkpointed and resumed bit-exactly.
pub struct Adam {
    config: AdamConfig,
    step: u64,
    vars: Vec<(String, Var)>,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Result<Self> {
        let vars: Vec<(String, Var)> = store
            .params()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect();
        let moments = vars
            .iter()
            .map(|(k, v)| {
                let z = v.as_tensor().zeros_like()?;
                Ok((k.clone(), (z.clone(), z)))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            step: 0,
            vars,
            moments,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are left as is.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, var) in &self.vars {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let (m, v) = self
                .moments
                .get_mut(name)
                .expect("moments are created for every parameter");
            let next_m = ((&*m * beta1)? + (g * (1.0 - beta1))?)?;
            let next_v = ((&*v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let m_hat = (&next_m / c1)?;
            let v_hat = (&next_v / c2)?;
            let update = (m_hat / (v_hat.sqrt()? + eps)?)?;
            var.set(&(var.as_tensor() - (update * lr)?)?)?;
            *m = next_m;
            *v = next_v;
        }
        Ok(())
    }

    /// Moment tensors keyed `m.<path>` / `v.<path>`, plus the step count.
    pub fn state(&self) -> (u64, BTreeMap<String, Tensor>) {
        let mut out = BTreeMap::new();
        for (k, (m, v)) in &self.moments {
            out.insert(format!("m.{k}"), m.clone());
            out.insert(format!("v.{k}"), v.clone());
        }
        (self.step, out)
    }

    pub fn load_state(&mut self, step: u64, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (k, (m, v)) in self.moments.iter_mut() {
            let get = |prefix: &str| {
                tensors
                    .get(&format!("{prefix}.{k}"))
                    .cloned()
                    .ok_or_else(|| Error::shape(format!("optimizer state missing `{prefix}.{k}`")))
            };
            let (nm, nv) = (get("m")?, get("v")?);
            if nm.dims() != m.dims() || nv.dims() != v.dims() {
                return Err(Error::shape(format!("optimizer state shape mismatch for `{k}`")));
            }
            *m = nm.to_dtype(m.dtype())?;
            *v = nv.to_dtype(v.dtype())?;
        }
        self.step = step;
        Ok(())
    }
}
