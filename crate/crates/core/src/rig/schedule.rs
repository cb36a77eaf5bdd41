use serde::{Deserialize, Serialize};

use crate::nn::EncoderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rig,
    Erm,
    GalaLike,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rig" => Ok(Self::Rig),
            "erm" => Ok(Self::Erm),
            "gala_like" => Ok(Self::GalaLike),
            other => Err(format!("unknown method {other:?} (expected rig, erm or gala_like)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Red,
    Max,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Red => "red",
            Phase::Max => "max",
        }
    }
}

/// Independent on/off switches for warm-up, redundancy estimation and
/// objective maximization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepSwitches {
    pub warmup: bool,
    pub redundancy: bool,
    pub maximize: bool,
}

impl Default for StepSwitches {
    fn default() -> Self {
        Self { warmup: true, redundancy: true, maximize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub method: Method,
    pub warmup_epochs: usize,
    pub red_epochs: usize,
    pub max_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Use the whole training split as one batch, in dataset order.
    pub full_batch: bool,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Weight of the spurious-probe loss during warm-up.
    pub aux_weight: f64,
    /// Weight of the penalty tying each graph's mean causal weight to `ratio`.
    pub size_weight: f64,
    /// Weight of the penalty pushing causal edge weights towards 0 or 1.
    pub sharpness: f64,
    pub lr: f64,
    pub patience: usize,
    pub early_stop_from: usize,
    pub ratio: f64,
    pub tau: f64,
    pub clusters: usize,
    pub seed: u64,
    pub steps: StepSwitches,
    pub encoder: EncoderConfig,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            method: Method::Rig,
            warmup_epochs: 10,
            red_epochs: 10,
            max_epochs: 10,
            epochs: 100,
            batch_size: 32,
            full_batch: false,
            lambda2: 1.0,
            lambda3: 1.0,
            aux_weight: 0.1,
            size_weight: 1.0,
            sharpness: 0.0,
            lr: 1e-3,
            patience: 5,
            early_stop_from: 60,
            ratio: 0.25,
            tau: 0.5,
            clusters: 3,
            seed: 0,
            steps: StepSwitches::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), String> {
        if self.warmup_epochs >= self.epochs {
            return Err(format!("warmup_epochs ({}) must be below epochs ({})", self.warmup_epochs, self.epochs));
        }
        if self.red_epochs == 0 || self.max_epochs == 0 {
            return Err("red_epochs and max_epochs must be at least 1".into());
        }
        if !(self.lambda2 >= 0.0 && self.lambda3 >= 0.0 && self.aux_weight >= 0.0 && self.size_weight >= 0.0 && self.sharpness >= 0.0) {
            return Err("loss weights must be non-negative".into());
        }
        if !(self.lr > 0.0 && self.tau > 0.0) {
            return Err("lr and tau must be positive".into());
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(format!("ratio must lie in (0, 1], got {}", self.ratio));
        }
        if self.batch_size == 0 && !self.full_batch {
            return Err("batch_size must be positive".into());
        }
        if self.clusters < 2 {
            return Err("clusters must be at least 2".into());
        }
        self.encoder.validate()
    }

    /// The switches actually in force for this method.
    pub fn effective_steps(&self) -> StepSwitches {
        match self.method {
            Method::Rig => self.steps,
            Method::GalaLike => StepSwitches { redundancy: false, ..self.steps },
            Method::Erm => StepSwitches { warmup: true, redundancy: false, maximize: false },
        }
    }

    pub fn effective_lambda2(&self) -> f64 {
        if self.method == Method::GalaLike {
            0.0
        } else {
            self.lambda2
        }
    }

    fn effective_warmup(&self) -> usize {
        if self.effective_steps().warmup {
            self.warmup_epochs
        } else {
            0
        }
    }

    /// `(epoch - e_w) mod (e1 + e2)` for post-warm-up epochs.
    pub fn cycle_position(&self, epoch: usize) -> Option<usize> {
        let ew = self.effective_warmup();
        (epoch >= ew).then(|| (epoch - ew) % (self.red_epochs + self.max_epochs))
    }

    /// Phase run at a 0-based epoch. A disabled step hands its epochs to the
    /// other cycle step; with both disabled every epoch is warm-up.
    pub fn phase_at(&self, epoch: usize) -> Phase {
        let steps = self.effective_steps();
        let Some(pos) = self.cycle_position(epoch) else {
            return Phase::Warmup;
        };
        let nominal = if pos < self.red_epochs { Phase::Red } else { Phase::Max };
        match (nominal, steps.redundancy, steps.maximize) {
            (_, false, false) => Phase::Warmup,
            (Phase::Red, false, true) => Phase::Max,
            (Phase::Max, true, false) => Phase::Red,
            (p, _, _) => p,
        }
    }

    /// Phase whose epochs count for model selection and early stopping.
    pub fn selection_phase(&self) -> Phase {
        let steps = self.effective_steps();
        if steps.maximize {
            Phase::Max
        } else if steps.redundancy {
            Phase::Red
        } else {
            Phase::Warmup
        }
    }
}
