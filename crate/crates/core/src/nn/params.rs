use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Parameter blocks of the two-branch model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    /// Featurizer and edge scorer.
    Beta,
    /// Redundancy channel on the spurious part.
    ThetaS,
    /// Redundancy channel on the causal part.
    ThetaC,
    /// Causal-branch encoder.
    EtaC,
    /// Spurious-branch head.
    PhiS,
    /// Causal-branch head.
    PhiC,
    /// Log of the learnable consistency weight.
    Mu,
}

impl Group {
    pub const ALL: [Group; 7] =
        [Group::Beta, Group::ThetaS, Group::ThetaC, Group::EtaC, Group::PhiS, Group::PhiC, Group::Mu];

    pub fn name(self) -> &'static str {
        match self {
            Group::Beta => "beta",
            Group::ThetaS => "theta_s",
            Group::ThetaC => "theta_c",
            Group::EtaC => "eta_c",
            Group::PhiS => "phi_s",
            Group::PhiC => "phi_c",
            Group::Mu => "mu",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Array2<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// On-disk layout: block name -> parameter name -> row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub blocks: BTreeMap<String, BTreeMap<String, Vec<Vec<f64>>>>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint lacks parameter {0}")]
    Missing(String),
    #[error("parameter {name} has shape {found:?}, expected {expected:?}")]
    Shape { name: String, found: (usize, usize), expected: (usize, usize) },
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Array2<f64>) -> ParamId {
        let name = name.into();
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Param { name, group, value });
        ParamId(self.params.len() - 1)
    }

    /// Uniform on `[-s, s]` with `s = sqrt(6 / (fan_in + fan_out))`.
    pub fn add_xavier(&mut self, name: impl Into<String>, group: Group, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let s = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-s..=s));
        self.add(name, group, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, group: Group, rows: usize, cols: usize) -> ParamId {
        self.add(name, group, Array2::zeros((rows, cols)))
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn group(&self, id: ParamId) -> Group {
        self.params[id.0].group
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn ids_in(&self, group: Group) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(move |&id| self.group(id) == group)
    }

    /// Snapshot of one block's values, used to check the freezing contract.
    pub fn snapshot(&self, group: Group) -> Vec<Array2<f64>> {
        self.ids_in(group).map(|id| self.value(id).clone()).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut blocks: BTreeMap<String, BTreeMap<String, Vec<Vec<f64>>>> = BTreeMap::new();
        for p in &self.params {
            let rows = p.value.rows().into_iter().map(|r| r.to_vec()).collect();
            blocks.entry(p.group.name().to_string()).or_default().insert(p.name.clone(), rows);
        }
        Checkpoint { version: CHECKPOINT_VERSION, blocks }
    }

    /// Overwrites every parameter with the checkpoint's values.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), CheckpointError> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(ck.version));
        }
        for p in &mut self.params {
            let rows = ck
                .blocks
                .get(p.group.name())
                .and_then(|b| b.get(&p.name))
                .ok_or_else(|| CheckpointError::Missing(p.name.clone()))?;
            let found = (rows.len(), rows.first().map_or(0, Vec::len));
            if found != p.value.dim() || rows.iter().any(|r| r.len() != found.1) {
                return Err(CheckpointError::Shape { name: p.name.clone(), found, expected: p.value.dim() });
            }
            for (mut dst, src) in p.value.rows_mut().into_iter().zip(rows) {
                dst.iter_mut().zip(src).for_each(|(d, s)| *d = *s);
            }
        }
        Ok(())
    }
}
