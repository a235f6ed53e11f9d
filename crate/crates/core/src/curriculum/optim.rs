use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamKind, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

/// AdamW with decoupled weight decay and per-parameter step counts.
#[derive(Debug, Clone, Default)]
pub struct AdamW {
    pub state: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update of parameter `name` with gradient `grad`.
    pub fn update(&mut self, store: &ParamStore, name: &str, grad: &Tensor, hyper: &AdamWConfig) -> Result<()> {
        let p = store
            .get(name)
            .ok_or_else(|| Error::state(format!("unknown parameter `{name}`")))?;
        if p.kind != ParamKind::Trainable {
            return Err(Error::state(format!("`{name}` is not trainable")));
        }
        let value = p.tensor().detach();
        let grad = grad.detach().to_dtype(value.dtype())?;
        let st = match self.state.get_mut(name) {
            Some(s) => s,
            None => {
                let z = value.zeros_like()?;
                self.state.insert(
                    name.to_string(),
                    Moments {
                        m: z.clone(),
                        v: z,
                        step: 0,
                    },
                );
                self.state.get_mut(name).unwrap()
            }
        };
        st.step += 1;
        st.m = ((&st.m * hyper.beta1)? + (&grad * (1.0 - hyper.beta1))?)?;
        st.v = ((&st.v * hyper.beta2)? + (grad.sqr()? * (1.0 - hyper.beta2))?)?;
        let bc1 = 1.0 - hyper.beta1.powi(st.step as i32);
        let bc2 = 1.0 - hyper.beta2.powi(st.step as i32);
        let m_hat = (&st.m / bc1)?;
        let denom = ((&st.v / bc2)?.sqrt()? + hyper.eps)?;
        let decayed = (&value * (1.0 - hyper.lr * hyper.weight_decay))?;
        let next = (decayed - ((m_hat / denom)? * hyper.lr)?)?;
        p.var.set(&next)?;
        Ok(())
    }

    /// Updates every listed parameter that received a gradient. Parameters
    /// outside the computation graph are left untouched.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore, names: &[String], hyper: &AdamWConfig) -> Result<usize> {
        let mut n = 0;
        for name in names {
            let p = store
                .get(name)
                .ok_or_else(|| Error::state(format!("unknown parameter `{name}`")))?;
            if let Some(g) = grads.get(p.tensor()) {
                let g = g.clone();
                self.update(store, name, &g, hyper)?;
                n += 1;
            }
        }
        Ok(n)
    }
}

/// Pure scalar form of one AdamW step from fresh state, used to document the
/// update rule.
pub fn adamw_first_step(p0: f64, g: f64, hyper: &AdamWConfig) -> f64 {
    let m = (1.0 - hyper.beta1) * g / (1.0 - hyper.beta1);
    let v = (1.0 - hyper.beta2) * g * g / (1.0 - hyper.beta2);
    p0 * (1.0 - hyper.lr * hyper.weight_decay) - hyper.lr * m / (v.sqrt() + hyper.eps)
}

/// Rescales the gradients of `names` so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(store: &ParamStore, grads: &mut GradStore, names: &[String], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    let mut present = Vec::new();
    for name in names {
        let Some(p) = store.get(name) else { continue };
        if let Some(g) = grads.get(p.tensor()) {
            sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            present.push(p.tensor().clone());
        }
    }
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Err(Error::Training(format!("non-finite gradient norm {norm}")));
    }
    if norm > max_norm && max_norm > 0.0 {
        let scale = max_norm / (norm + 1e-12);
        for t in present {
            let g = grads.get(&t).unwrap();
            let scaled = (g * scale)?;
            grads.insert(&t, scaled);
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauConfig {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            patience: 3,
            factor: 0.5,
            min_lr: 1e-6,
        }
    }
}

/// Reduce-on-plateau schedule: after `patience` consecutive epochs without a
/// strict improvement the rate is multiplied by `factor` (floored at `min_lr`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrOnPlateau {
    pub lr: f64,
    pub best: Option<f64>,
    pub bad_epochs: usize,
    pub config: PlateauConfig,
}

impl LrOnPlateau {
    pub fn new(lr: f64, config: PlateauConfig) -> Self {
        Self {
            lr,
            best: None,
            bad_epochs: 0,
            config,
        }
    }

    pub fn observe(&mut self, metric: f64) -> f64 {
        match self.best {
            Some(b) if metric >= b => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.config.patience {
                    self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                    self.bad_epochs = 0;
                }
            }
            _ => {
                self.best = Some(metric);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Replays a metric history through a fresh schedule.
pub fn lr_on_plateau(history: &[f64], lr: f64, config: PlateauConfig) -> f64 {
    let mut s = LrOnPlateau::new(lr, config);
    for &m in history {
        s.observe(m);
    }
    s.lr
}
