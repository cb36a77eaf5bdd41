//! Synthetic two-piece graph classification data. Every graph carries one
//! label-defining motif and one distractor motif on a small random tree.
//! The invariant strength `a` controls how often the motif matches the
//! label; the spurious strength `b` how often the distractor does.

mod motif;

pub use motif::MotifKind;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use petgraph::unionfind::UnionFind;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid graph{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Invalid { line: Option<usize>, msg: String },
    #[error("malformed record at line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// One labelled graph with its ground-truth causal/spurious edge split.
/// Edges are undirected and stored with the smaller endpoint first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphInstance {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub x: Vec<Vec<f64>>,
    pub y: usize,
    pub causal: Vec<usize>,
    pub spurious: Vec<usize>,
    pub env: usize,
}

impl GraphInstance {
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Edges whose indices are listed, as a standalone edge list.
    pub fn sub_edges(&self, idx: &[usize]) -> Vec<[usize; 2]> {
        idx.iter().map(|&i| self.edges[i]).collect()
    }

    pub fn is_connected(&self) -> bool {
        is_connected(self.n, &self.edges)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.n == 0 {
            return Err("graph has no nodes".into());
        }
        if self.x.len() != self.n {
            return Err(format!("{} feature rows for {} nodes", self.x.len(), self.n));
        }
        let d = self.feature_dim();
        if d == 0 || self.x.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
            return Err("feature rows must be non-empty, finite and equally sized".into());
        }
        for &[u, v] in &self.edges {
            if u >= self.n || v >= self.n || u == v {
                return Err(format!("bad edge ({u}, {v})"));
            }
        }
        if self.y >= NUM_CLASSES {
            return Err(format!("label {} out of range", self.y));
        }
        let mut role = vec![0u8; self.edges.len()];
        for (set, tag) in [(&self.causal, 1u8), (&self.spurious, 2u8)] {
            for &i in set {
                if i >= self.edges.len() {
                    return Err(format!("edge index {i} out of range"));
                }
                if role[i] != 0 {
                    return Err(format!("edge {i} listed twice or in both causal and spurious sets"));
                }
                role[i] = tag;
            }
        }
        if !self.is_connected() {
            return Err("graph is not connected".into());
        }
        Ok(())
    }
}

pub fn is_connected(n: usize, edges: &[[usize; 2]]) -> bool {
    if n == 0 {
        return true;
    }
    let mut uf = UnionFind::<usize>::new(n);
    let mut parts = n;
    for &[u, v] in edges {
        if uf.union(u, v) {
            parts -= 1;
        }
    }
    parts == 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestShift {
    /// Distractor independent of the label.
    Uniform,
    /// Distractor aligned with the next class with probability `b`.
    Reversed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoPieceConfig {
    pub a: f64,
    pub b: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub test_shift: TestShift,
    pub seed: u64,
}

impl Default for TwoPieceConfig {
    fn default() -> Self {
        Self { a: 0.8, b: 0.9, n_train: 3000, n_val: 1000, n_test: 1000, test_shift: TestShift::Uniform, seed: 0 }
    }
}

impl TwoPieceConfig {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 1.0 / 3.0 && self.a <= 1.0) {
            return Err(GraphError::Config(format!("a must lie in (1/3, 1], got {}", self.a)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(GraphError::Config(format!("b must lie in [0, 1], got {}", self.b)));
        }
        let min = 30 * NUM_CLASSES;
        for (name, n) in [("n_train", self.n_train), ("n_val", self.n_val), ("n_test", self.n_test)] {
            if n < min {
                return Err(GraphError::Config(format!("{name} must be at least {min}, got {n}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<GraphInstance>,
    pub val: Vec<GraphInstance>,
    pub test: Vec<GraphInstance>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[GraphInstance] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Writes `train.jsonl`, `val.jsonl` and `test.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for s in Split::ALL {
            fs::write(dir.join(format!("{}.jsonl", s.name())), to_jsonl(self.split(s)))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |s: Split| -> Result<Vec<GraphInstance>> {
            let f = fs::File::open(dir.join(format!("{}.jsonl", s.name())))?;
            from_jsonl(BufReader::new(f))
        };
        Ok(Self { train: read(Split::Train)?, val: read(Split::Val)?, test: read(Split::Test)? })
    }
}

pub fn to_jsonl(graphs: &[GraphInstance]) -> String {
    let mut out = Vec::new();
    for g in graphs {
        serde_json::to_writer(&mut out, g).expect("graph serializes");
        out.write_all(b"\n").expect("in-memory write");
    }
    String::from_utf8(out).expect("json is utf-8")
}

/// Parses and validates one graph per non-empty line.
pub fn from_jsonl(reader: impl BufRead) -> Result<Vec<GraphInstance>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let g: GraphInstance =
            serde_json::from_str(&line).map_err(|source| GraphError::Parse { line: i + 1, source })?;
        g.validate().map_err(|msg| GraphError::Invalid { line: Some(i + 1), msg })?;
        out.push(g);
    }
    Ok(out)
}

pub fn gen_dataset(cfg: &TwoPieceConfig) -> Result<Dataset> {
    cfg.validate()?;
    let make = |split: Split, count: usize| -> Vec<GraphInstance> {
        (0..count).map(|i| gen_instance(cfg, split, i)).collect()
    };
    Ok(Dataset {
        train: make(Split::Train, cfg.n_train),
        val: make(Split::Val, cfg.n_val),
        test: make(Split::Test, cfg.n_test),
    })
}

/// Draws `target` with probability `p`, otherwise one of the other classes
/// uniformly.
fn aligned_or_other(rng: &mut impl Rng, target: usize, p: f64) -> usize {
    if rng.random_bool(p) {
        target
    } else {
        (target + 1 + rng.random_range(0..NUM_CLASSES - 1)) % NUM_CLASSES
    }
}

fn gen_instance(cfg: &TwoPieceConfig, split: Split, index: usize) -> GraphInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(((split as u64) << 40) | index as u64);

    let y = rng.random_range(0..NUM_CLASSES);
    let causal_kind = aligned_or_other(&mut rng, y, cfg.a);
    let variant = match (split, cfg.test_shift) {
        (Split::Test, TestShift::Uniform) => rng.random_range(0..NUM_CLASSES),
        (Split::Test, TestShift::Reversed) => aligned_or_other(&mut rng, (y + 1) % NUM_CLASSES, cfg.b),
        _ => aligned_or_other(&mut rng, y, cfg.b),
    };

    let n_base = rng.random_range(8..=12);
    let mut edges = barabasi_albert_tree(&mut rng, n_base);
    let mut n = n_base;
    let mut causal = Vec::new();
    let mut spurious = Vec::new();
    for (kind, tag) in [(MotifKind::causal(causal_kind), 0), (MotifKind::spurious(variant), 1)] {
        let offset = n;
        for [u, v] in kind.edges() {
            if tag == 0 { &mut causal } else { &mut spurious }.push(edges.len());
            edges.push([u + offset, v + offset]);
        }
        n += kind.node_count();
        let bridges = rng.random_range(1..=2);
        let mut used = Vec::new();
        while used.len() < bridges {
            let pair = [rng.random_range(0..n_base), offset + rng.random_range(0..kind.node_count())];
            if !used.contains(&pair) {
                used.push(pair);
                edges.push(pair);
            }
        }
    }

    // Relabel nodes and reorder edges so ids carry no information.
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.shuffle(&mut rng);
    let mut new_pos = vec![0; edges.len()];
    for (pos, &old) in order.iter().enumerate() {
        new_pos[old] = pos;
    }
    let relabelled: Vec<[usize; 2]> = order
        .iter()
        .map(|&old| {
            let [u, v] = edges[old];
            let (pu, pv) = (perm[u], perm[v]);
            [pu.min(pv), pu.max(pv)]
        })
        .collect();
    let remap = |idx: Vec<usize>| {
        let mut v: Vec<usize> = idx.into_iter().map(|i| new_pos[i]).collect();
        v.sort_unstable();
        v
    };

    GraphInstance {
        n,
        edges: relabelled,
        x: vec![vec![1.0]; n],
        y,
        causal: remap(causal),
        spurious: remap(spurious),
        env: variant,
    }
}

/// Preferential attachment with one edge per new node, seeded by an edge.
fn barabasi_albert_tree(rng: &mut impl Rng, n: usize) -> Vec<[usize; 2]> {
    let mut edges = vec![[0, 1]];
    // Each endpoint occurrence is one ticket, so picks are degree-weighted.
    let mut tickets = vec![0, 1];
    for v in 2..n {
        let u = tickets[rng.random_range(0..tickets.len())];
        edges.push([u, v]);
        tickets.push(u);
        tickets.push(v);
    }
    edges
}
