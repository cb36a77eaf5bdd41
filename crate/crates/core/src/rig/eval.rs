use serde::{Deserialize, Serialize};

use super::model::{argmax_rows, ModelKind, ModelState, Need};
use crate::dist::JointDistribution;
use crate::graph::{GraphInstance, NUM_CLASSES};
use crate::nn::{sigmoid, top_ratio, Batch, Tape};
use crate::pid::{compute_pid, PidError, PidResult};

/// Graphs per forward pass during inference.
pub const EVAL_CHUNK: usize = 256;

/// Class predictions of both branches and soft causal edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub y: Vec<usize>,
    pub y_c: Vec<usize>,
    /// `None` for whole-graph models.
    pub y_s: Option<Vec<usize>>,
    /// Per graph, `sigmoid(M)` for every edge; `None` for whole-graph models.
    pub edge_weights: Option<Vec<Vec<f64>>>,
}

pub fn predict(model: &ModelState, graphs: &[GraphInstance]) -> Predictions {
    let masked = model.kind() == ModelKind::Masked;
    let mut p = Predictions {
        y: graphs.iter().map(|g| g.y).collect(),
        y_c: Vec::with_capacity(graphs.len()),
        y_s: masked.then(Vec::new),
        edge_weights: masked.then(Vec::new),
    };
    for chunk in graphs.chunks(EVAL_CHUNK) {
        let refs: Vec<&GraphInstance> = chunk.iter().collect();
        let batch = Batch::new(&refs);
        let mut t = Tape::new();
        let out = model.forward(&mut t, &batch, Need { spurious: masked, ..Need::default() });
        p.y_c.extend(argmax_rows(t.value(out.logits_c)));
        if let (Some(ys), Some(ls)) = (p.y_s.as_mut(), out.logits_s) {
            ys.extend(argmax_rows(t.value(ls)));
        }
        if let (Some(ws), Some(m)) = (p.edge_weights.as_mut(), out.mask_logits) {
            let m = t.value(m);
            for g in 0..batch.n_graphs {
                ws.push(batch.edge_range(g).map(|e| sigmoid(m[(e, 0)])).collect());
            }
        }
    }
    p
}

fn accuracy(pred: &[usize], y: &[usize]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

/// Accuracy of the causal branch (or of the whole-graph classifier).
pub fn causal_accuracy(model: &ModelState, graphs: &[GraphInstance]) -> f64 {
    let mut hits = 0;
    for chunk in graphs.chunks(EVAL_CHUNK) {
        let refs: Vec<&GraphInstance> = chunk.iter().collect();
        let batch = Batch::new(&refs);
        let mut t = Tape::new();
        let out = model.forward(&mut t, &batch, Need::default());
        hits += argmax_rows(t.value(out.logits_c)).iter().zip(chunk).filter(|(p, g)| **p == g.y).count();
    }
    hits as f64 / graphs.len().max(1) as f64
}

/// Micro-averaged precision and recall of the hard top-`r` edge sets
/// against the ground-truth causal edges.
pub fn mask_precision_recall(graphs: &[GraphInstance], scores: &[Vec<f64>], r: f64) -> (f64, f64) {
    let (mut hit, mut picked, mut truth) = (0usize, 0usize, 0usize);
    for (g, s) in graphs.iter().zip(scores) {
        let chosen = top_ratio(s, r);
        hit += chosen.iter().filter(|e| g.causal.contains(e)).count();
        picked += chosen.len();
        truth += g.causal.len();
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (ratio(hit, picked), ratio(hit, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub causal_acc: f64,
    pub spurious_acc: Option<f64>,
    pub mask_precision: Option<f64>,
    pub mask_recall: Option<f64>,
}

pub fn evaluate(model: &ModelState, graphs: &[GraphInstance]) -> Metrics {
    let p = predict(model, graphs);
    let (mask_precision, mask_recall) = match &p.edge_weights {
        Some(w) => {
            let (pr, rc) = mask_precision_recall(graphs, w, model.config.ratio);
            (Some(pr), Some(rc))
        }
        None => (None, None),
    };
    Metrics {
        n: graphs.len(),
        causal_acc: accuracy(&p.y_c, &p.y),
        spurious_acc: p.y_s.as_ref().map(|ys| accuracy(ys, &p.y)),
        mask_precision,
        mask_recall,
    }
}

/// Decomposition of the label information carried by the two branch
/// predictions, with their accuracies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidRow {
    pub red: f64,
    pub uniq_c: f64,
    pub uniq_s: f64,
    pub syn: f64,
    pub causal_acc: f64,
    pub spurious_acc: f64,
}

/// PID of `(Y; Y_c, Y_s)` from class-id triples.
pub fn pid_of_labels(y: &[usize], y_c: &[usize], y_s: &[usize]) -> Result<PidResult, PidError> {
    let k = NUM_CLASSES;
    let samples = y.iter().zip(y_c).zip(y_s).map(|((&a, &b), &c)| (a, b, c));
    let dist = JointDistribution::from_samples([k, k, k], samples)?;
    compute_pid(&dist, crate::pid::DEFAULT_TOL)
}

pub fn pid_row(y: &[usize], y_c: &[usize], y_s: &[usize]) -> Result<PidRow, PidError> {
    let pid = pid_of_labels(y, y_c, y_s)?;
    Ok(PidRow {
        red: pid.redundancy,
        uniq_c: pid.unique_a,
        uniq_s: pid.unique_b,
        syn: pid.synergy,
        causal_acc: accuracy(y_c, y),
        spurious_acc: accuracy(y_s, y),
    })
}

/// Table-style PID row of a masked model's predictions. Whole-graph models
/// have no spurious branch, so their prediction is used for both sources.
pub fn pid_of_predictions(model: &ModelState, graphs: &[GraphInstance]) -> Result<PidRow, PidError> {
    let p = predict(model, graphs);
    let y_s = p.y_s.as_ref().unwrap_or(&p.y_c);
    pid_row(&p.y, &p.y_c, y_s)
}
