//! Adam with first and second moments shared by every worker.

use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamGrads;
use crate::error::{Error, Result};
use crate::policy::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `decay * θ` before the moment update.
    pub weight_decay: f64,
    /// Global-norm clip applied to the raw gradient; `None` disables it.
    pub grad_clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            grad_clip: Some(40.0),
        }
    }
}

/// What one update did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateInfo {
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    /// `false` when a non-finite gradient caused the update to be skipped.
    pub applied: bool,
    /// Update counter after this call.
    pub updates: u64,
}

/// Parameters plus Adam moments, as guarded by the shared store.
#[derive(Clone, Debug)]
pub struct OptimizerStore {
    pub params: Arc<ModelParams>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Applied updates; drives bias correction.
    pub updates: u64,
    /// Updates skipped for non-finite gradients.
    pub skipped: u64,
}

/// Global parameter and optimizer state. Workers read snapshots and apply
/// whole updates under one exclusive lock.
#[derive(Debug)]
pub struct SharedOptimizerState {
    store: Mutex<OptimizerStore>,
}

impl SharedOptimizerState {
    pub fn new(params: ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        SharedOptimizerState {
            store: Mutex::new(OptimizerStore {
                params: Arc::new(params),
                m: zeros.clone(),
                v: zeros,
                updates: 0,
                skipped: 0,
            }),
        }
    }

    fn lock(&self) -> MutexGuard<'_, OptimizerStore> {
        // nothing in the update path panics after the shape check, so a
        // poisoned lock still guards a consistent store
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Current parameters; cheap to take and immutable.
    pub fn snapshot(&self) -> Arc<ModelParams> {
        self.lock().params.clone()
    }

    pub fn updates(&self) -> u64 {
        self.lock().updates
    }

    pub fn skipped(&self) -> u64 {
        self.lock().skipped
    }

    /// Copy of the whole store, for inspection and tests.
    pub fn store(&self) -> OptimizerStore {
        self.lock().clone()
    }

    pub fn into_params(self) -> ModelParams {
        let store = self.store.into_inner().unwrap_or_else(|e| e.into_inner());
        Arc::try_unwrap(store.params).unwrap_or_else(|arc| (*arc).clone())
    }

    /// One Adam step on the shared moments; see [`shared_adam_step`].
    pub fn apply(&self, grads: ParamGrads, config: &AdamConfig) -> Result<UpdateInfo> {
        shared_adam_step(&mut self.lock(), grads, config)
    }
}

/// Clips, adds weight decay, updates the moments with bias correction and
/// moves the parameters. A non-finite gradient skips the whole update and
/// bumps the skip counter.
pub fn shared_adam_step(store: &mut OptimizerStore, mut grads: ParamGrads, config: &AdamConfig) -> Result<UpdateInfo> {
    if grads.0.len() != store.m.len() || grads.0.iter().zip(&store.m).any(|(g, m)| g.len() != m.len()) {
        return Err(Error::Invalid("gradient shapes do not match the parameters".into()));
    }
    let grad_norm = grads.global_norm();
    if !grads.is_finite() {
        store.skipped += 1;
        return Ok(UpdateInfo {
            grad_norm,
            applied: false,
            updates: store.updates,
        });
    }
    if let Some(max) = config.grad_clip {
        grads.clip_norm(max);
    }
    store.updates += 1;
    let t = store.updates as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let params = Arc::make_mut(&mut store.params).params_mut();
    for (i, g) in grads.0.iter().enumerate() {
        let theta = params.get_mut(i).value.data_mut();
        let (m, v) = (&mut store.m[i], &mut store.v[i]);
        for j in 0..g.len() {
            let gj = g[j] + config.weight_decay * theta[j];
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            theta[j] -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(UpdateInfo {
        grad_norm,
        applied: true,
        updates: store.updates,
    })
}
