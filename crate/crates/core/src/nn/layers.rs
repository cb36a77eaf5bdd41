use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Group, ParamId, ParamStore};
use super::tape::{sigmoid, Tape, Var};
use crate::graph::GraphInstance;

/// Fixed factor applied to every GIN layer input in place of batch
/// normalization.
pub const INPUT_SCALE: f64 = 0.25;

/// Offset that keeps weighted mean pooling finite when all weights vanish.
pub const POOL_EPS: f64 = 1e-8;

/// Several graphs packed into one disconnected graph.
#[derive(Debug, Clone)]
pub struct Batch {
    pub n_graphs: usize,
    pub n_nodes: usize,
    pub x: Array2<f64>,
    /// Undirected edges over global node ids.
    pub edges: Rc<[[usize; 2]]>,
    pub edge_src: Rc<[usize]>,
    pub edge_dst: Rc<[usize]>,
    pub node_graph: Rc<[usize]>,
    pub edge_graph: Rc<[usize]>,
    /// First edge of every graph, plus the total at the end.
    pub edge_offsets: Vec<usize>,
    pub nodes_per_graph: Array2<f64>,
    pub edges_per_graph: Array2<f64>,
    pub inv_degree: Array2<f64>,
    pub labels: Rc<[usize]>,
}

impl Batch {
    pub fn new(graphs: &[&GraphInstance]) -> Self {
        let n_nodes: usize = graphs.iter().map(|g| g.n).sum();
        let dim = graphs.first().map_or(1, |g| g.feature_dim());
        let mut x = Array2::zeros((n_nodes, dim));
        let mut edges = Vec::new();
        let mut node_graph = Vec::with_capacity(n_nodes);
        let mut edge_graph = Vec::new();
        let mut edge_offsets = vec![0];
        let mut degree = vec![0usize; n_nodes];
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            for (i, row) in g.x.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    x[(offset + i, j)] = v;
                }
                node_graph.push(gi);
            }
            for &[u, v] in &g.edges {
                edges.push([u + offset, v + offset]);
                edge_graph.push(gi);
                degree[u + offset] += 1;
                degree[v + offset] += 1;
            }
            edge_offsets.push(edges.len());
            offset += g.n;
        }
        let edge_src: Rc<[usize]> = edges.iter().map(|e| e[0]).collect();
        let edge_dst: Rc<[usize]> = edges.iter().map(|e| e[1]).collect();
        let nodes_per_graph = Array2::from_shape_fn((graphs.len(), 1), |(g, _)| graphs[g].n as f64);
        let edges_per_graph = Array2::from_shape_fn((graphs.len(), 1), |(g, _)| graphs[g].edges.len() as f64);
        let inv_degree = Array2::from_shape_fn((n_nodes, 1), |(v, _)| 1.0 / degree[v].max(1) as f64);
        Self {
            n_graphs: graphs.len(),
            n_nodes,
            x,
            edges: edges.into(),
            edge_src,
            edge_dst,
            node_graph: node_graph.into(),
            edge_graph: edge_graph.into(),
            edge_offsets,
            nodes_per_graph,
            edges_per_graph,
            inv_degree,
            labels: graphs.iter().map(|g| g.y).collect(),
        }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edge range of graph `g`.
    pub fn edge_range(&self, g: usize) -> std::ops::Range<usize> {
        self.edge_offsets[g]..self.edge_offsets[g + 1]
    }

    pub fn features(&self, tape: &mut Tape) -> Var {
        tape.constant(self.x.clone())
    }

    pub fn unit_edge_weights(&self, tape: &mut Tape) -> Var {
        tape.constant(Array2::ones((self.n_edges(), 1)))
    }

    /// Mean edge weight of every graph, `n_graphs × 1`. Edgeless graphs get 0.
    pub fn mean_edge_weight(&self, tape: &mut Tape, edge_w: Var) -> Var {
        let total = tape.segment_sum(edge_w, self.edge_graph.clone(), self.n_graphs);
        let count = tape.constant(self.edges_per_graph.mapv(|c| c.max(1.0)));
        tape.div_col(total, count)
    }

    /// Per-node weight: mean of the incident edge weights.
    pub fn node_weights(&self, tape: &mut Tape, edge_w: Var) -> Var {
        let ones = tape.constant(Array2::ones((self.n_nodes, 1)));
        let incident = tape.propagate(ones, edge_w, self.edges.clone());
        let inv = tape.constant(self.inv_degree.clone());
        tape.mul(incident, inv)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, group: Group, fan_in: usize, fan_out: usize) -> Self {
        let w = store.add_xavier(format!("{name}.w"), group, fan_in, fan_out, rng);
        // Non-zero biases matter with constant node features: with b = 0 every
        // ReLU layer is positively homogeneous and node states stay rank one.
        let bound = 1.0 / (fan_in as f64).sqrt();
        let bias = Array2::from_shape_fn((1, fan_out), |_| rng.random_range(-bound..bound));
        let b = store.add(format!("{name}.b"), group, bias);
        Self { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let h = tape.matmul(x, w);
        tape.add_row(h, b)
    }
}

/// Linear layers with ReLU between them, and after the last one when
/// `final_relu` is set.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub final_relu: bool,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: Group,
        dims: &[usize],
        final_relu: bool,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::new(store, rng, &format!("{name}.{i}"), group, d[0], d[1]))
            .collect();
        Self { layers, final_relu }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Var {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(tape, store, x);
            if i < last || self.final_relu {
                x = tape.relu(x);
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub epsilon_learnable: bool,
    pub jk: bool,
    pub pooling: Pooling,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { n_layers: 3, hidden_dim: 32, epsilon_learnable: false, jk: true, pooling: Pooling::Mean }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_layers < 1 {
            return Err("n_layers must be at least 1".into());
        }
        if self.hidden_dim < 2 {
            return Err("hidden_dim must be at least 2".into());
        }
        Ok(())
    }

    pub fn out_dim(&self) -> usize {
        if self.jk {
            self.hidden_dim * self.n_layers
        } else {
            self.hidden_dim
        }
    }
}

#[derive(Debug, Clone)]
struct GinLayer {
    mlp: Mlp,
    eps: Option<ParamId>,
}

/// Graph isomorphism network: `h' = MLP(s * ((1 + eps) h + sum_u w_uv h_u))`.
#[derive(Debug, Clone)]
pub struct GinEncoder {
    pub cfg: EncoderConfig,
    layers: Vec<GinLayer>,
}

impl GinEncoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: Group,
        in_dim: usize,
        cfg: &EncoderConfig,
    ) -> Self {
        let h = cfg.hidden_dim;
        let layers = (0..cfg.n_layers)
            .map(|i| {
                let d_in = if i == 0 { in_dim } else { h };
                GinLayer {
                    mlp: Mlp::new(store, rng, &format!("{name}.gin{i}"), group, &[d_in, h, h], true),
                    eps: cfg.epsilon_learnable.then(|| store.add_zeros(format!("{name}.gin{i}.eps"), group, 1, 1)),
                }
            })
            .collect();
        Self { cfg: cfg.clone(), layers }
    }

    pub fn out_dim(&self) -> usize {
        self.cfg.out_dim()
    }

    /// The same weights with a different readout.
    pub fn with_pooling(&self, pooling: Pooling) -> Self {
        Self { cfg: EncoderConfig { pooling, ..self.cfg.clone() }, layers: self.layers.clone() }
    }

    /// Node embeddings, `n_nodes × out_dim`.
    pub fn node_embeddings(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch, x: Var, edge_w: Var) -> Var {
        let mut h = x;
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let agg = tape.propagate(h, edge_w, batch.edges.clone());
            let own = match layer.eps {
                Some(e) => {
                    let e = tape.param(store, e);
                    let he = tape.scale_by(h, e);
                    tape.add(h, he)
                }
                None => h,
            };
            let sum = tape.add(own, agg);
            let input = tape.scale(sum, INPUT_SCALE);
            h = layer.mlp.forward(tape, store, input);
            outs.push(h);
        }
        if self.cfg.jk {
            tape.concat_cols(&outs)
        } else {
            h
        }
    }

    /// Pooled graph embeddings, `n_graphs × out_dim`. With `node_w`, mean
    /// pooling becomes a weighted mean.
    pub fn pool(&self, tape: &mut Tape, batch: &Batch, h: Var, node_w: Option<Var>) -> Var {
        let weighted = match node_w {
            Some(w) => tape.mul_col(h, w),
            None => h,
        };
        let total = tape.segment_sum(weighted, batch.node_graph.clone(), batch.n_graphs);
        match self.cfg.pooling {
            Pooling::Sum => total,
            Pooling::Mean => {
                let mass = match node_w {
                    Some(w) => {
                        let s = tape.segment_sum(w, batch.node_graph.clone(), batch.n_graphs);
                        tape.affine(s, 1.0, POOL_EPS)
                    }
                    None => tape.constant(batch.nodes_per_graph.clone()),
                };
                tape.div_col(total, mass)
            }
        }
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &Batch,
        x: Var,
        edge_w: Var,
        node_w: Option<Var>,
    ) -> Var {
        let h = self.node_embeddings(tape, store, batch, x, edge_w);
        self.pool(tape, batch, h, node_w)
    }
}

/// Per-edge logit from the two endpoint embeddings, symmetric in the
/// endpoints: `M_uv = (MLP([z_u, z_v]) + MLP([z_v, z_u])) / 2`.
#[derive(Debug, Clone)]
pub struct EdgeScorer {
    mlp: Mlp,
}

impl EdgeScorer {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, group: Group, node_dim: usize, hidden: usize) -> Self {
        Self { mlp: Mlp::new(store, rng, name, group, &[2 * node_dim, hidden, 1], false) }
    }

    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch, z: Var) -> Var {
        let zu = tape.gather_rows(z, batch.edge_src.clone());
        let zv = tape.gather_rows(z, batch.edge_dst.clone());
        let fwd = tape.concat_cols(&[zu, zv]);
        let bwd = tape.concat_cols(&[zv, zu]);
        let a = self.mlp.forward(tape, store, fwd);
        let b = self.mlp.forward(tape, store, bwd);
        let s = tape.add(a, b);
        tape.scale(s, 0.5)
    }
}

/// Soft split of a graph by edge logits plus the hard top-`r` causal set.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSplit {
    pub w_c: Vec<f64>,
    pub w_s: Vec<f64>,
    pub hard: Vec<usize>,
}

/// Indices of the `ceil(r |E|)` highest scores, ties to the smaller index,
/// returned in ascending order.
pub fn top_ratio(scores: &[f64], r: f64) -> Vec<usize> {
    let k = ((r * scores.len() as f64).ceil() as usize).min(scores.len());
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let mut top = idx[..k].to_vec();
    top.sort_unstable();
    top
}

pub fn split_by_ratio(logits: &[f64], r: f64) -> Result<MaskSplit, String> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(format!("ratio must lie in (0, 1], got {r}"));
    }
    let w_c: Vec<f64> = logits.iter().map(|&m| sigmoid(m)).collect();
    let w_s = w_c.iter().map(|w| 1.0 - w).collect();
    Ok(MaskSplit { hard: top_ratio(logits, r), w_c, w_s })
}
