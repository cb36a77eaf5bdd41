use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::NUM_CLASSES;
use crate::nn::{Batch, Checkpoint, CheckpointError, EdgeScorer, EncoderConfig, GinEncoder, Group, Mlp, ParamId, ParamStore, Tape, Var};

/// Whether predictions come from the masked causal branch or from the
/// whole graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Masked,
    FullGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub in_dim: usize,
    pub encoder: EncoderConfig,
    /// Hard top-ratio used for mask metrics and export.
    pub ratio: f64,
    pub seed: u64,
}

/// All parameter blocks of the two-branch model.
///
/// The featurizer and edge scorer form `beta`. The causal branch is
/// `eta_c` + `phi_c`, the spurious probe `theta_s` + `phi_s`, and `theta_c`
/// encodes the causal part for the consistency term only.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub config: ModelConfig,
    pub store: ParamStore,
    featurizer: GinEncoder,
    scorer: EdgeScorer,
    enc_c: GinEncoder,
    head_c: Mlp,
    chan_s: GinEncoder,
    head_s: Mlp,
    chan_c: GinEncoder,
    pub log_mu: ParamId,
}

/// What a forward pass should compute.
#[derive(Debug, Clone, Copy, Default)]
pub struct Need {
    pub spurious: bool,
    pub consistency: bool,
    /// Treat the soft masks as constants.
    pub detach_mask: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    pub logits_c: Var,
    pub rep_c: Var,
    pub mask_logits: Option<Var>,
    /// Soft causal edge weights `sigmoid(M)`.
    pub w_c: Option<Var>,
    pub logits_s: Option<Var>,
    pub rep_s: Option<Var>,
    pub rep_cc: Option<Var>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    #[serde(flatten)]
    pub params: Checkpoint,
}

impl ModelState {
    pub fn new(config: ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let enc = &config.encoder;
        let d = enc.out_dim();
        let h = enc.hidden_dim;
        let featurizer = GinEncoder::new(&mut store, &mut rng, "featurizer", Group::Beta, config.in_dim, enc);
        let scorer = EdgeScorer::new(&mut store, &mut rng, "scorer", Group::Beta, d, h);
        let enc_c = GinEncoder::new(&mut store, &mut rng, "causal_encoder", Group::EtaC, config.in_dim, enc);
        let head_c = Mlp::new(&mut store, &mut rng, "causal_head", Group::PhiC, &[d, h, NUM_CLASSES], false);
        let chan_s = GinEncoder::new(&mut store, &mut rng, "spurious_channel", Group::ThetaS, config.in_dim, enc);
        let head_s = Mlp::new(&mut store, &mut rng, "spurious_head", Group::PhiS, &[d, h, NUM_CLASSES], false);
        let chan_c = GinEncoder::new(&mut store, &mut rng, "causal_channel", Group::ThetaC, config.in_dim, enc);
        let log_mu = store.add_zeros("log_mu", Group::Mu, 1, 1);
        Self { config, store, featurizer, scorer, enc_c, head_c, chan_s, head_s, chan_c, log_mu }
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    /// Current consistency weight `mu = exp(log_mu)`.
    pub fn mu(&self) -> f64 {
        self.store.value(self.log_mu)[(0, 0)].exp()
    }

    pub fn forward(&self, tape: &mut Tape, batch: &Batch, need: Need) -> Outputs {
        let st = &self.store;
        let x = batch.features(tape);
        if self.config.kind == ModelKind::FullGraph {
            let ones = batch.unit_edge_weights(tape);
            let rep_c = self.enc_c.encode(tape, st, batch, x, ones, None);
            let logits_c = self.head_c.forward(tape, st, rep_c);
            return Outputs { logits_c, rep_c, mask_logits: None, w_c: None, logits_s: None, rep_s: None, rep_cc: None };
        }
        let ones = batch.unit_edge_weights(tape);
        let z = self.featurizer.node_embeddings(tape, st, batch, x, ones);
        let m = self.scorer.logits(tape, st, batch, z);
        let mut w_c = tape.sigmoid(m);
        if need.detach_mask {
            w_c = tape.detach(w_c);
        }
        let nw_c = batch.node_weights(tape, w_c);
        let rep_c = self.enc_c.encode(tape, st, batch, x, w_c, Some(nw_c));
        let logits_c = self.head_c.forward(tape, st, rep_c);
        let (mut logits_s, mut rep_s, mut rep_cc) = (None, None, None);
        if need.spurious || need.consistency {
            let w_s = tape.affine(w_c, -1.0, 1.0);
            let nw_s = batch.node_weights(tape, w_s);
            let r = self.chan_s.encode(tape, st, batch, x, w_s, Some(nw_s));
            rep_s = Some(r);
            if need.spurious {
                logits_s = Some(self.head_s.forward(tape, st, r));
            }
        }
        if need.consistency {
            rep_cc = Some(self.chan_c.encode(tape, st, batch, x, w_c, Some(nw_c)));
        }
        Outputs { logits_c, rep_c, mask_logits: Some(m), w_c: Some(w_c), logits_s, rep_s, rep_cc }
    }

    /// Pooled whole-graph embedding of the causal encoder, used to cluster
    /// an assistant's view of the training set.
    pub fn embed_full(&self, tape: &mut Tape, batch: &Batch) -> Var {
        let x = batch.features(tape);
        let ones = batch.unit_edge_weights(tape);
        self.enc_c.encode(tape, &self.store, batch, x, ones, None)
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint { config: self.config.clone(), params: self.store.to_checkpoint() }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self, CheckpointError> {
        let mut m = Self::new(ck.config.clone());
        m.store.load_checkpoint(&ck.params)?;
        Ok(m)
    }
}

/// Row-wise argmax; ties go to the smaller class id.
pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (k, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
