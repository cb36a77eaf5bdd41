use std::io::Write;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::contrast::{kmeans, sample_contrast_sets, SampleInfo};
use super::eval::{causal_accuracy, EVAL_CHUNK};
use super::model::{argmax_rows, ModelConfig, ModelKind, ModelState, Need, Outputs};
use super::schedule::{Method, Phase, TrainSchedule};
use crate::graph::{Dataset, GraphInstance};
use crate::nn::{Batch, ContrastSets, Group, Optimizer, Tape, Var};

pub const WARMUP_GROUPS: [Group; 6] = [Group::Beta, Group::ThetaS, Group::ThetaC, Group::EtaC, Group::PhiS, Group::PhiC];
pub const RED_GROUPS: [Group; 4] = [Group::ThetaS, Group::ThetaC, Group::PhiS, Group::Mu];
pub const MAX_GROUPS: [Group; 3] = [Group::Beta, Group::EtaC, Group::PhiC];
pub const ERM_GROUPS: [Group; 2] = [Group::EtaC, Group::PhiC];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid schedule: {0}")]
    Config(String),
    #[error("empty training split")]
    EmptyData,
    #[error("non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize, history: History },
}

/// Loss terms and batch accuracy of one optimization step. Terms the step
/// did not compute are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub ce_c: f64,
    pub ce_s: Option<f64>,
    pub l_c: Option<f64>,
    pub l_cont: Option<f64>,
    pub correct_c: usize,
    pub correct_s: Option<usize>,
    pub n: usize,
}

fn correct(tape: &Tape, logits: Var, labels: &[usize]) -> usize {
    argmax_rows(tape.value(logits)).iter().zip(labels).filter(|(p, y)| p == y).count()
}

fn base_stats(tape: &Tape, out: &Outputs, batch: &Batch, ce_c: Var) -> StepStats {
    StepStats {
        ce_c: tape.scalar(ce_c),
        correct_c: correct(tape, out.logits_c, &batch.labels),
        n: batch.n_graphs,
        ..StepStats::default()
    }
}

/// `mean_g (mean_e w_c - r)^2`: keeps the soft causal subgraph near the
/// target edge ratio.
pub fn size_penalty(tape: &mut Tape, batch: &Batch, w_c: Var, ratio: f64) -> Var {
    let m = batch.mean_edge_weight(tape, w_c);
    let d = tape.affine(m, 1.0, -ratio);
    let d2 = tape.square(d);
    tape.mean(d2)
}

/// Mean of `w (1 - w)` over all edges; zero only for a binary mask.
pub fn sharpness_penalty(tape: &mut Tape, w_c: Var) -> Var {
    let sq = tape.square(w_c);
    let d = tape.sub(w_c, sq);
    tape.mean(d)
}

fn add_size(tape: &mut Tape, batch: &Batch, out: &Outputs, mut loss: Var, size: SizeTerm) -> Var {
    let Some(w) = out.w_c else { return loss };
    if size.weight > 0.0 {
        let p = size_penalty(tape, batch, w, size.ratio);
        let term = tape.scale(p, size.weight);
        loss = tape.add(loss, term);
    }
    if size.sharpness > 0.0 {
        let p = sharpness_penalty(tape, w);
        let term = tape.scale(p, size.sharpness);
        loss = tape.add(loss, term);
    }
    loss
}

/// Mask-size penalty settings for steps that update the mask generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeTerm {
    pub ratio: f64,
    pub weight: f64,
    pub sharpness: f64,
}

fn apply(model: &mut ModelState, opt: &mut Optimizer, tape: &Tape, loss: Var, groups: &[Group]) {
    let grads = tape.backward(loss);
    opt.step(&mut model.store, &grads, groups);
}

/// Step 0: causal cross-entropy plus a down-weighted probe loss on the
/// complement, over every group except `mu`.
pub fn warmup_step(model: &mut ModelState, opt: &mut Optimizer, batch: &Batch, aux_weight: f64, size: SizeTerm) -> StepStats {
    let mut t = Tape::new();
    let out = model.forward(&mut t, batch, Need { spurious: true, ..Need::default() });
    let ce_c = t.softmax_ce(out.logits_c, batch.labels.clone());
    let mut stats = base_stats(&t, &out, batch, ce_c);
    let mut loss = ce_c;
    if let Some(ls) = out.logits_s {
        let ce_s = t.softmax_ce(ls, batch.labels.clone());
        let aux = t.scale(ce_s, aux_weight);
        loss = t.add(ce_c, aux);
        stats.ce_s = Some(t.scalar(ce_s));
        stats.correct_s = Some(correct(&t, ls, &batch.labels));
    }
    let loss = add_size(&mut t, batch, &out, loss, size);
    stats.loss = t.scalar(loss);
    apply(model, opt, &t, loss, &WARMUP_GROUPS);
    stats
}

/// `mean((a - b)^2)` over all entries.
pub fn consistency_loss(tape: &mut Tape, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    let d2 = tape.square(d);
    tape.mean(d2)
}

/// Step 1: fit the spurious probe and the consistency channel on the
/// current (constant) masks: `CE_s + mu * mean(D^2) + (log mu)^2`.
pub fn redundancy_step(model: &mut ModelState, opt: &mut Optimizer, batch: &Batch) -> StepStats {
    let mut t = Tape::new();
    let out = model.forward(&mut t, batch, Need { spurious: true, consistency: true, detach_mask: true });
    let ce_c = t.softmax_ce(out.logits_c, batch.labels.clone());
    let mut stats = base_stats(&t, &out, batch, ce_c);
    let ls = out.logits_s.expect("spurious logits requested");
    let ce_s = t.softmax_ce(ls, batch.labels.clone());
    let l_c = consistency_loss(&mut t, out.rep_s.expect("requested"), out.rep_cc.expect("requested"));
    let rho = t.param(&model.store, model.log_mu);
    let mu = t.exp(rho);
    let weighted = t.scale_by(l_c, mu);
    let rho2 = t.square(rho);
    let reg = t.add(weighted, rho2);
    let loss = t.add(ce_s, reg);
    stats.ce_s = Some(t.scalar(ce_s));
    stats.l_c = Some(t.scalar(l_c));
    stats.correct_s = Some(correct(&t, ls, &batch.labels));
    stats.loss = t.scalar(loss);
    apply(model, opt, &t, loss, &RED_GROUPS);
    stats
}

/// Step 2: `CE_c + lambda2 * CE_s + lambda3 * L_cont` over the mask
/// generator and the causal branch. The probe is frozen, so the `CE_s`
/// gradient reaches the generator only through the complement mask.
pub fn maximize_step(
    model: &mut ModelState,
    opt: &mut Optimizer,
    batch: &Batch,
    sets: &ContrastSets,
    lambda2: f64,
    lambda3: f64,
    tau: f64,
    size: SizeTerm,
) -> StepStats {
    let mut t = Tape::new();
    let out = model.forward(&mut t, batch, Need { spurious: lambda2 > 0.0, ..Need::default() });
    let ce_c = t.softmax_ce(out.logits_c, batch.labels.clone());
    let mut stats = base_stats(&t, &out, batch, ce_c);
    let mut loss = ce_c;
    if let Some(ls) = out.logits_s {
        let ce_s = t.softmax_ce(ls, batch.labels.clone());
        let term = t.scale(ce_s, lambda2);
        loss = t.add(loss, term);
        stats.ce_s = Some(t.scalar(ce_s));
        stats.correct_s = Some(correct(&t, ls, &batch.labels));
    }
    if lambda3 > 0.0 && !sets.anchors.is_empty() {
        let sim = similarity(&mut t, out.rep_c, tau);
        let l_cont = t.contrastive(sim, Rc::new(sets.clone()));
        let term = t.scale(l_cont, lambda3);
        loss = t.add(loss, term);
        stats.l_cont = Some(t.scalar(l_cont));
    }
    let loss = add_size(&mut t, batch, &out, loss, size);
    stats.loss = t.scalar(loss);
    apply(model, opt, &t, loss, &MAX_GROUPS);
    stats
}

/// Cosine similarity over `tau` between batch-centred representations.
/// Centring stands in for the batch normalisation the encoders lack:
/// without it every pooled ReLU representation shares one dominant
/// direction and all cosines sit near 1.
pub fn similarity(tape: &mut Tape, rep: Var, tau: f64) -> Var {
    let (n, _) = tape.shape(rep);
    let avg = tape.constant(ndarray::Array2::from_elem((1, n), 1.0 / n as f64));
    let mean = tape.matmul(avg, rep);
    let neg = tape.scale(mean, -1.0);
    let centred = tape.add_row(rep, neg);
    let u = tape.row_normalize(centred);
    let sim = tape.matmul_t(u, u);
    tape.scale(sim, 1.0 / tau)
}

/// Plain cross-entropy on whole graphs.
pub fn erm_step(model: &mut ModelState, opt: &mut Optimizer, batch: &Batch) -> StepStats {
    let mut t = Tape::new();
    let out = model.forward(&mut t, batch, Need::default());
    let ce_c = t.softmax_ce(out.logits_c, batch.labels.clone());
    let mut stats = base_stats(&t, &out, batch, ce_c);
    stats.loss = stats.ce_c;
    apply(model, opt, &t, ce_c, &ERM_GROUPS);
    stats
}

/// An ERM model with its view of the training split.
#[derive(Debug, Clone)]
pub struct Assistant {
    pub model: ModelState,
    pub predictions: Vec<usize>,
    pub clusters: Vec<usize>,
    pub train_acc: f64,
}

impl Assistant {
    pub fn infos(&self, train: &[GraphInstance]) -> Vec<SampleInfo> {
        train
            .iter()
            .zip(&self.predictions)
            .zip(&self.clusters)
            .map(|((g, &p), &c)| SampleInfo { label: g.y, cluster: c, correct: p == g.y })
            .collect()
    }
}

/// Trains ERM with the schedule's budget and clusters its pooled training
/// embeddings into `schedule.clusters` groups.
pub fn fit_assistant(ds: &Dataset, schedule: &TrainSchedule) -> Result<Assistant, TrainError> {
    let erm = TrainSchedule { method: Method::Erm, ..schedule.clone() };
    let outcome = train_model(ds, &erm, None)?;
    Ok(assistant_from_model(outcome.model, &ds.train, schedule.clusters, schedule.seed))
}

/// Records predictions and k-means clusters of an already trained model.
pub fn assistant_from_model(model: ModelState, train: &[GraphInstance], k: usize, seed: u64) -> Assistant {
    let mut predictions = Vec::with_capacity(train.len());
    let mut rows = Vec::with_capacity(train.len());
    for chunk in train.chunks(EVAL_CHUNK) {
        let refs: Vec<&GraphInstance> = chunk.iter().collect();
        let batch = Batch::new(&refs);
        let mut t = Tape::new();
        let out = model.forward(&mut t, &batch, Need::default());
        predictions.extend(argmax_rows(t.value(out.logits_c)));
        let emb = model.embed_full(&mut t, &batch);
        rows.push(t.value(emb).clone());
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let emb = standardize_columns(&ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let clusters = kmeans(&emb, k, 100, &mut rng);
    let hits = train.iter().zip(&predictions).filter(|(g, &p)| g.y == p).count();
    let train_acc = hits as f64 / train.len().max(1) as f64;
    Assistant { model, predictions, clusters, train_acc }
}

/// Per-column z-scores; constant columns become zero.
fn standardize_columns(x: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let std = x.std_axis(ndarray::Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { f64::INFINITY });
    (x - &mean) / &std
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub train_acc: f64,
    pub val_acc: f64,
    #[serde(rename = "L_CE_c")]
    pub l_ce_c: f64,
    #[serde(rename = "L_CE_s")]
    pub l_ce_s: Option<f64>,
    #[serde(rename = "L_c")]
    pub l_c: Option<f64>,
    #[serde(rename = "L_cont")]
    pub l_cont: Option<f64>,
    pub mu: f64,
    /// Spurious-probe accuracy on the training batches; not written to CSV.
    #[serde(skip)]
    pub train_acc_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

pub const HISTORY_COLUMNS: [&str; 9] =
    ["epoch", "phase", "train_acc", "val_acc", "L_CE_c", "L_CE_s", "L_c", "L_cont", "mu"];

impl History {
    /// Writes the header even when there are no records.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(HISTORY_COLUMNS)?;
        for r in &self.records {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch among selectable epochs.
    pub model: ModelState,
    pub history: History,
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
    pub assistant: Option<Assistant>,
}

#[derive(Default)]
struct Totals {
    n: usize,
    correct_c: usize,
    correct_s: usize,
    n_s: usize,
    ce_c: f64,
    ce_s: (f64, usize),
    l_c: (f64, usize),
    l_cont: (f64, usize),
}

impl Totals {
    fn add(&mut self, s: &StepStats) {
        let w = s.n as f64;
        self.n += s.n;
        self.correct_c += s.correct_c;
        self.ce_c += s.ce_c * w;
        if let Some(c) = s.correct_s {
            self.correct_s += c;
            self.n_s += s.n;
        }
        for (acc, v) in [(&mut self.ce_s, s.ce_s), (&mut self.l_c, s.l_c), (&mut self.l_cont, s.l_cont)] {
            if let Some(v) = v {
                acc.0 += v * w;
                acc.1 += s.n;
            }
        }
    }

    fn mean(acc: (f64, usize)) -> Option<f64> {
        (acc.1 > 0).then(|| acc.0 / acc.1 as f64)
    }
}

/// Runs the configured method. RIG and the GALA-style baseline fit an
/// assistant first unless one is supplied.
pub fn train(ds: &Dataset, schedule: &TrainSchedule, assistant: Option<&Assistant>) -> Result<TrainOutcome, TrainError> {
    schedule.validate().map_err(TrainError::Config)?;
    let needs_assistant = schedule.method != Method::Erm && schedule.effective_steps().maximize && schedule.lambda3 > 0.0;
    if needs_assistant && assistant.is_none() {
        let fitted = fit_assistant(ds, schedule)?;
        let mut out = train_model(ds, schedule, Some(&fitted))?;
        out.assistant = Some(fitted);
        return Ok(out);
    }
    train_model(ds, schedule, assistant)
}

pub fn model_config(ds: &Dataset, schedule: &TrainSchedule) -> ModelConfig {
    let in_dim = ds.train.first().map_or(1, |g| g.feature_dim());
    let kind = if schedule.method == Method::Erm { ModelKind::FullGraph } else { ModelKind::Masked };
    ModelConfig { kind, in_dim, encoder: schedule.encoder.clone(), ratio: schedule.ratio, seed: schedule.seed }
}

fn train_model(ds: &Dataset, schedule: &TrainSchedule, assistant: Option<&Assistant>) -> Result<TrainOutcome, TrainError> {
    schedule.validate().map_err(TrainError::Config)?;
    if ds.train.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let mut model = ModelState::new(model_config(ds, schedule));
    let mut opt = Optimizer::adam(schedule.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    rng.set_stream(1);
    let infos = assistant.map(|a| a.infos(&ds.train));
    let is_erm = schedule.method == Method::Erm;
    let select = schedule.selection_phase();
    let lambda2 = schedule.effective_lambda2();
    let size = SizeTerm { ratio: schedule.ratio, weight: schedule.size_weight, sharpness: schedule.sharpness };

    let mut history = History::default();
    let mut best: Option<(f64, usize, crate::nn::ParamStore)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..ds.train.len()).collect();
    let bs = if schedule.full_batch { ds.train.len() } else { schedule.batch_size };

    for epoch in 0..schedule.epochs {
        let phase = if is_erm { Phase::Warmup } else { schedule.phase_at(epoch) };
        if !schedule.full_batch {
            order.shuffle(&mut rng);
        }
        let mut totals = Totals::default();
        for chunk in order.chunks(bs) {
            let graphs: Vec<&GraphInstance> = chunk.iter().map(|&i| &ds.train[i]).collect();
            let batch = Batch::new(&graphs);
            let stats = match phase {
                _ if is_erm => erm_step(&mut model, &mut opt, &batch),
                Phase::Warmup => warmup_step(&mut model, &mut opt, &batch, schedule.aux_weight, size),
                Phase::Red => redundancy_step(&mut model, &mut opt, &batch),
                Phase::Max => {
                    let sets = match (&infos, schedule.lambda3 > 0.0) {
                        (Some(all), true) => {
                            let local: Vec<SampleInfo> = chunk.iter().map(|&i| all[i].clone()).collect();
                            sample_contrast_sets(&local)
                        }
                        _ => ContrastSets::default(),
                    };
                    maximize_step(&mut model, &mut opt, &batch, &sets, lambda2, schedule.lambda3, schedule.tau, size)
                }
            };
            if !stats.loss.is_finite() {
                return Err(TrainError::Diverged { epoch, history });
            }
            totals.add(&stats);
        }
        let val_acc = if ds.val.is_empty() { 0.0 } else { causal_accuracy(&model, &ds.val) };
        let record = EpochRecord {
            epoch,
            phase,
            train_acc: totals.correct_c as f64 / totals.n as f64,
            val_acc,
            l_ce_c: totals.ce_c / totals.n as f64,
            l_ce_s: Totals::mean(totals.ce_s),
            l_c: Totals::mean(totals.l_c),
            l_cont: Totals::mean(totals.l_cont),
            mu: model.mu(),
            train_acc_s: (totals.n_s > 0).then(|| totals.correct_s as f64 / totals.n_s as f64),
        };
        log::debug!("epoch {epoch} {} train {:.4} val {:.4}", phase.name(), record.train_acc, val_acc);
        history.records.push(record);

        if phase == select {
            if best.as_ref().is_none_or(|(v, _, _)| val_acc > *v) {
                best = Some((val_acc, epoch, model.store.clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
            if epoch >= schedule.early_stop_from && since_best >= schedule.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let last = history.records.last().map_or(0, |r| r.epoch);
    let (best_val, best_epoch) = match best {
        Some((v, e, store)) => {
            model.store = store;
            (v, e)
        }
        None => (history.records.last().map_or(0.0, |r| r.val_acc), last),
    };
    Ok(TrainOutcome { model, history, best_epoch, best_val, stopped_early, assistant: None })
}
