use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamGrads, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        AdamSettings {
            learning_rate: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction and no weight decay. Parameters that do not
/// require gradients are never touched.
#[derive(Debug, Clone)]
pub struct Adam {
    pub settings: AdamSettings,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(settings: AdamSettings, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, v)| vec![0.0; v.data.len()]).collect();
        Adam {
            settings,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &ParamGrads) {
        self.step += 1;
        let AdamSettings {
            learning_rate: lr,
            betas: (b1, b2),
            eps,
        } = self.settings;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, value) in params.values_mut().enumerate() {
            if !value.requires_grad {
                continue;
            }
            let Some(g) = &grads.grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                value.data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
