use std::collections::HashMap;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::params::{Group, ParamId, ParamStore};
use super::tape::Grads;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Adam,
    Sgd,
}

/// Per-parameter Adam moments; step counts are tracked per parameter so
/// blocks updated in different phases get their own bias correction.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub method: Method,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: HashMap<ParamId, AdamState>,
}

#[derive(Debug, Clone)]
struct AdamState {
    m: Array2<f64>,
    v: Array2<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(method: Method, lr: f64) -> Self {
        Self { method, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, state: HashMap::new() }
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(Method::Adam, lr)
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(Method::Sgd, lr)
    }

    /// Updates the parameters of the listed groups that have a gradient;
    /// everything else is left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, groups: &[Group]) {
        let mut ids: Vec<ParamId> =
            grads.by_param.keys().copied().filter(|&id| groups.contains(&store.group(id))).collect();
        ids.sort();
        for id in ids {
            let g = &grads.by_param[&id];
            self.update(id, store.value_mut(id), g);
        }
    }

    pub fn update(&mut self, id: ParamId, w: &mut Array2<f64>, g: &Array2<f64>) {
        match self.method {
            Method::Sgd => w.scaled_add(-self.lr, g),
            Method::Adam => {
                let st = self.state.entry(id).or_insert_with(|| AdamState {
                    m: Array2::zeros(g.raw_dim()),
                    v: Array2::zeros(g.raw_dim()),
                    t: 0,
                });
                st.t += 1;
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powi(st.t);
                let c2 = 1.0 - b2.powi(st.t);
                let (lr, eps) = (self.lr, self.eps);
                Zip::from(w).and(&mut st.m).and(&mut st.v).and(g).for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
            }
        }
    }
}
