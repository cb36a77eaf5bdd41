//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation as a node holding its value. Calling
//! [`Tape::backward`] on a scalar node walks the nodes in reverse creation
//! order, so every reduction runs in a fixed order and repeated runs are
//! bitwise identical.

use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Anchors of a contrastive objective over rows of a similarity matrix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContrastSets {
    pub anchors: Vec<Anchor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub index: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    ScaleBy(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    SumAll(Var),
    MeanAll(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Rc<[usize]>),
    SegmentSum(Var, Rc<[usize]>),
    Propagate(Var, Var, Rc<[[usize; 2]]>),
    RowNormalize(Var),
    SoftmaxCe(Var, Rc<[usize]>),
    Contrastive(Var, Rc<ContrastSets>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Norm offset that keeps row normalization finite at the origin.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of the parameters that took part in a computation.
#[derive(Debug, Default, Clone)]
pub struct Grads {
    pub by_param: HashMap<ParamId, Array2<f64>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.by_param.get(&id)
    }
}

fn check(cond: bool, what: &str, a: &[usize], b: &[usize]) {
    assert!(cond, "shape mismatch in {what}: {a:?} vs {b:?}");
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let x = self.value(v);
        assert_eq!(x.dim(), (1, 1), "not a scalar");
        x[(0, 0)]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// A constant: no gradient flows into it.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Gradient-blocking copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// The parameter as a tape node; repeated calls share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        check(x.ncols() == y.nrows(), "matmul", x.shape(), y.shape());
        let v = x.dot(y);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        check(x.ncols() == y.ncols(), "matmul_t", x.shape(), y.shape());
        let v = x.dot(&y.t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        let (x, y) = (self.value(a), self.value(b));
        check(x.dim() == y.dim(), what, x.shape(), y.shape());
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// Adds a `1 × d` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        check(r.nrows() == 1 && r.ncols() == x.ncols(), "add_row", x.shape(), r.shape());
        let v = x + r;
        self.push(v, Op::AddRow(a, row))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (x, c) = (self.value(a), self.value(col));
        check(c.ncols() == 1 && c.nrows() == x.nrows(), "mul_col", x.shape(), c.shape());
        let v = x * c;
        self.push(v, Op::MulCol(a, col))
    }

    /// Divides row `i` of `a` by `col[i]`.
    pub fn div_col(&mut self, a: Var, col: Var) -> Var {
        let (x, c) = (self.value(a), self.value(col));
        check(c.ncols() == 1 && c.nrows() == x.nrows(), "div_col", x.shape(), c.shape());
        let v = x / c;
        self.push(v, Op::DivCol(a, col))
    }

    /// Multiplies `a` by a `1 × 1` node.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "scale_by needs a scalar");
        let v = self.value(a) * self.scalar(s);
        self.push(v, Op::ScaleBy(a, s))
    }

    /// `alpha * a + beta`.
    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Var {
        let v = self.value(a).mapv(|x| alpha * x + beta);
        self.push(v, Op::Affine(a, alpha))
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        self.affine(a, alpha, 0.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Array2::from_elem((1, 1), x.sum() / x.len().max(1) as f64);
        self.push(v, Op::MeanAll(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols needs equal row counts");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Var {
        let v = self.value(a).select(Axis(0), &idx);
        self.push(v, Op::GatherRows(a, idx))
    }

    /// Row `r` of `a` is added into output row `seg[r]`.
    pub fn segment_sum(&mut self, a: Var, seg: Rc<[usize]>, n_seg: usize) -> Var {
        let x = self.value(a);
        check(seg.len() == x.nrows(), "segment_sum", x.shape(), &[seg.len()]);
        let mut v = Array2::zeros((n_seg, x.ncols()));
        for (r, &s) in seg.iter().enumerate() {
            let mut row = v.row_mut(s);
            row += &x.row(r);
        }
        self.push(v, Op::SegmentSum(a, seg))
    }

    /// Weighted neighbour sum over undirected edges:
    /// `out[v] = sum over edges {u, v} of w_e * h[u]`, both directions.
    pub fn propagate(&mut self, h: Var, w: Var, edges: Rc<[[usize; 2]]>) -> Var {
        let (x, wv) = (self.value(h), self.value(w));
        check(wv.dim() == (edges.len(), 1), "propagate", wv.shape(), &[edges.len(), 1]);
        let mut v = Array2::zeros(x.raw_dim());
        for (e, &[a, b]) in edges.iter().enumerate() {
            let we = wv[(e, 0)];
            v.row_mut(b).scaled_add(we, &x.row(a));
            v.row_mut(a).scaled_add(we, &x.row(b));
        }
        self.push(v, Op::Propagate(h, w, edges))
    }

    /// Rows divided by their Euclidean norm plus [`NORM_EPS`].
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let n = row.dot(&row).sqrt() + NORM_EPS;
            row /= n;
        }
        self.push(v, Op::RowNormalize(a))
    }

    /// Mean softmax cross-entropy (nats) of `logits` against class ids.
    pub fn softmax_ce(&mut self, logits: Var, labels: Rc<[usize]>) -> Var {
        let x = self.value(logits);
        check(labels.len() == x.nrows(), "softmax_ce", x.shape(), &[labels.len()]);
        let mut total = 0.0;
        for (row, &y) in x.rows().into_iter().zip(labels.iter()) {
            total += log_sum_exp(row.iter().copied()) - row[y];
        }
        let v = Array2::from_elem((1, 1), total / labels.len().max(1) as f64);
        self.push(v, Op::SoftmaxCe(logits, labels))
    }

    /// Mean over anchors and their positives of
    /// `-log(e^{S_ip} / (e^{S_ip} + sum_j e^{S_ij}))`, `j` over negatives.
    pub fn contrastive(&mut self, sim: Var, sets: Rc<ContrastSets>) -> Var {
        let s = self.value(sim);
        let mut total = 0.0;
        for a in &sets.anchors {
            let row = s.row(a.index);
            let neg = log_sum_exp(a.negatives.iter().map(|&j| row[j]));
            let mut acc = 0.0;
            for &p in &a.positives {
                acc += log_add_exp(row[p], neg) - row[p];
            }
            total += acc / a.positives.len() as f64;
        }
        let v = Array2::from_elem((1, 1), total / sets.anchors.len().max(1) as f64);
        self.push(v, Op::Contrastive(sim, sets))
    }

    /// Gradients of the scalar `loss` with respect to every parameter node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Array2<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(x) => *x += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::Param => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.dot(&val(*b).t()));
                    acc(&mut grads, *b, val(*a).t().dot(&g));
                }
                Op::MatMulT(a, b) => {
                    acc(&mut grads, *a, g.dot(val(*b)));
                    acc(&mut grads, *b, g.t().dot(val(*a)));
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * val(*b));
                    acc(&mut grads, *b, &g * val(*a));
                }
                Op::AddRow(a, r) => {
                    acc(&mut grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g);
                }
                Op::MulCol(a, c) => {
                    let gc = (&g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *c, gc);
                    acc(&mut grads, *a, &g * val(*c));
                }
                Op::DivCol(a, c) => {
                    let cv = val(*c);
                    let ga = &g / cv;
                    let gc = -(&ga * &node.value).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *c, gc);
                    acc(&mut grads, *a, ga);
                }
                Op::ScaleBy(a, s) => {
                    let sv = val(*s)[(0, 0)];
                    let gs = (&g * val(*a)).sum();
                    acc(&mut grads, *s, Array2::from_elem((1, 1), gs));
                    acc(&mut grads, *a, g * sv);
                }
                Op::Affine(a, alpha) => acc(&mut grads, *a, g * *alpha),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(val(*a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => acc(&mut grads, *a, g * &node.value),
                Op::Log(a) => acc(&mut grads, *a, g / val(*a)),
                Op::Square(a) => acc(&mut grads, *a, g * val(*a) * 2.0),
                Op::SumAll(a) => {
                    let x = val(*a);
                    acc(&mut grads, *a, Array2::from_elem(x.raw_dim(), g[(0, 0)]));
                }
                Op::MeanAll(a) => {
                    let x = val(*a);
                    acc(&mut grads, *a, Array2::from_elem(x.raw_dim(), g[(0, 0)] / x.len().max(1) as f64));
                }
                Op::ConcatCols(parts) => {
                    let mut c = 0;
                    for p in parts {
                        let w = val(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., c..c + w]).to_owned());
                        c += w;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Array2::zeros(val(*a).raw_dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut row = ga.row_mut(src);
                        row += &g.row(r);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SegmentSum(a, seg) => {
                    let ga = g.select(Axis(0), seg);
                    acc(&mut grads, *a, ga);
                }
                Op::Propagate(h, w, edges) => {
                    let (x, wv) = (val(*h), val(*w));
                    let mut gh = Array2::zeros(x.raw_dim());
                    let mut gw = Array2::zeros(wv.raw_dim());
                    for (e, &[a, b]) in edges.iter().enumerate() {
                        let we = wv[(e, 0)];
                        gh.row_mut(a).scaled_add(we, &g.row(b));
                        gh.row_mut(b).scaled_add(we, &g.row(a));
                        gw[(e, 0)] = g.row(b).dot(&x.row(a)) + g.row(a).dot(&x.row(b));
                    }
                    acc(&mut grads, *w, gw);
                    acc(&mut grads, *h, gh);
                }
                Op::RowNormalize(a) => {
                    let x = val(*a);
                    let mut ga = Array2::zeros(x.raw_dim());
                    for ((xr, ur), (gr, mut out)) in
                        x.rows().into_iter().zip(node.value.rows()).zip(g.rows().into_iter().zip(ga.rows_mut()))
                    {
                        let r = xr.dot(&xr).sqrt();
                        let d = r + NORM_EPS;
                        out.scaled_add(1.0 / d, &gr);
                        if r > 0.0 {
                            // u = x / d, so du/dx = I/d - x xᵀ / (r d²)
                            let proj = ur.dot(&gr);
                            out.scaled_add(-proj / (r * d), &xr);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxCe(logits, labels) => {
                    let x = val(*logits);
                    let scale = g[(0, 0)] / labels.len().max(1) as f64;
                    let mut gl = Array2::zeros(x.raw_dim());
                    for ((row, mut out), &y) in x.rows().into_iter().zip(gl.rows_mut()).zip(labels.iter()) {
                        let lse = log_sum_exp(row.iter().copied());
                        for (o, &v) in out.iter_mut().zip(row.iter()) {
                            *o = (v - lse).exp() * scale;
                        }
                        out[y] -= scale;
                    }
                    acc(&mut grads, *logits, gl);
                }
                Op::Contrastive(sim, sets) => {
                    let s = val(*sim);
                    let mut gs = Array2::zeros(s.raw_dim());
                    let outer = g[(0, 0)] / sets.anchors.len().max(1) as f64;
                    for a in &sets.anchors {
                        let row = s.row(a.index);
                        let neg = log_sum_exp(a.negatives.iter().map(|&j| row[j]));
                        let c = outer / a.positives.len() as f64;
                        for &p in &a.positives {
                            let z = log_add_exp(row[p], neg);
                            gs[(a.index, p)] += c * ((row[p] - z).exp() - 1.0);
                            for &j in &a.negatives {
                                gs[(a.index, j)] += c * (row[j] - z).exp();
                            }
                        }
                    }
                    acc(&mut grads, *sim, gs);
                }
            }
        }

        let by_param = self
            .params
            .iter()
            .filter(|(_, v)| v.0 < n)
            .filter_map(|(&id, v)| grads[v.0].take().map(|g| (id, g)))
            .collect();
        Grads { by_param }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}
