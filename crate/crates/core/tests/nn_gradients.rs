use std::rc::Rc;

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use redinfo::graph::{GraphInstance, MotifKind};
use redinfo::nn::{
    check_gradients, Anchor, Batch, ContrastSets, EdgeScorer, EncoderConfig, GinEncoder, Group, Mlp, ParamStore,
    Pooling, Tape,
};

fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
}

fn motif_graph(kind: MotifKind, y: usize) -> GraphInstance {
    let n = kind.node_count();
    let edges: Vec<[usize; 2]> = kind.edges().into_iter().map(|[u, v]| [u.min(v), u.max(v)]).collect();
    let m = edges.len();
    GraphInstance { n, edges, x: vec![vec![1.0]; n], y, causal: (0..m).collect(), spurious: vec![], env: 0 }
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, &mut rng, "mlp", Group::PhiC, &[4, 6, 3], false);
    let x = random_matrix(&mut rng, 5, 4);
    let labels: Rc<[usize]> = Rc::from(vec![0, 1, 2, 1, 0]);
    let ids: Vec<_> = store.ids().collect();
    let r = check_gradients(&store, &ids, 1e-4, 1, |s| {
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let z = mlp.forward(&mut t, s, xv);
        let l = t.softmax_ce(z, labels.clone());
        (t, l)
    });
    assert!(r.rel_error <= 1e-4, "{r:?}");
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let a = store.add("a", Group::Beta, random_matrix(&mut rng, 4, 3));
    let b = store.add("b", Group::Beta, random_matrix(&mut rng, 3, 3));
    let row = store.add("row", Group::Beta, random_matrix(&mut rng, 1, 3));
    let col = store.add("col", Group::Beta, random_matrix(&mut rng, 4, 1).mapv(|v| v.abs() + 0.5));
    let s = store.add("s", Group::Mu, Array2::from_elem((1, 1), 0.3));
    let w = store.add("w", Group::Beta, random_matrix(&mut rng, 3, 1));
    let edges: Rc<[[usize; 2]]> = Rc::from(vec![[0, 1], [1, 2], [2, 3]]);
    let ids: Vec<_> = store.ids().collect();
    let r = check_gradients(&store, &ids, 1e-5, 1, |st| {
        let mut t = Tape::new();
        let (a, b, row, col, s, w) =
            (t.param(st, a), t.param(st, b), t.param(st, row), t.param(st, col), t.param(st, s), t.param(st, w));
        let ab = t.matmul(a, b);
        let abr = t.add_row(ab, row);
        let sg = t.sigmoid(abr);
        let mc = t.mul_col(sg, col);
        let dc = t.div_col(mc, col);
        let dc = t.add(dc, mc);
        let sc = t.scale_by(dc, s);
        let pr = t.propagate(sc, w, edges.clone());
        let e = t.exp(pr);
        let lg = t.log(e);
        let sq = t.square(lg);
        let cat = t.concat_cols(&[sq, a]);
        let g = t.gather_rows(cat, Rc::from(vec![3, 0, 0, 2]));
        let seg = t.segment_sum(g, Rc::from(vec![1, 0, 1, 1]), 2);
        let nrm = t.row_normalize(seg);
        let tr = t.transpose(nrm);
        let back = t.transpose(tr);
        let sim = t.matmul_t(back, nrm);
        let sim = t.scale(sim, 2.0);
        let sets = ContrastSets { anchors: vec![Anchor { index: 0, positives: vec![0], negatives: vec![1] }] };
        let c = t.contrastive(sim, Rc::new(sets));
        let rl = t.relu(ab);
        let sub = t.sub(rl, ab);
        let m = t.mul(sub, sub);
        let mm = t.mean(m);
        let tot = t.add(c, mm);
        let af = t.affine(tot, 1.5, 0.2);
        let sm = t.sum(af);
        (t, sm)
    });
    assert!(r.rel_error <= 1e-6, "{r:?}");
}

#[test]
fn edge_scorer_gradient_wrt_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = motif_graph(MotifKind::House, 0);
    let batch = Batch::new(&[&g]);
    let mut store = ParamStore::new();
    let scorer = EdgeScorer::new(&mut store, &mut rng, "scorer", Group::Beta, 4, 8);
    let z = store.add("z", Group::Beta, random_matrix(&mut rng, g.n, 4));
    let r = check_gradients(&store, &[z], 1e-4, 1, |s| {
        let mut t = Tape::new();
        let zv = t.param(s, z);
        let m = scorer.logits(&mut t, s, &batch, zv);
        let q = t.square(m);
        let l = t.sum(q);
        (t, l)
    });
    assert!(r.rel_error <= 1e-4, "{r:?}");
}

#[test]
fn gin_gradients_through_edge_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let graphs = [motif_graph(MotifKind::House, 0), motif_graph(MotifKind::Crane, 2)];
    let refs: Vec<&GraphInstance> = graphs.iter().collect();
    let batch = Batch::new(&refs);
    let mut store = ParamStore::new();
    let cfg = EncoderConfig { epsilon_learnable: true, ..EncoderConfig::default() };
    let enc = GinEncoder::new(&mut store, &mut rng, "enc", Group::EtaC, 1, &cfg);
    let head = Mlp::new(&mut store, &mut rng, "head", Group::PhiC, &[enc.out_dim(), 3], false);
    let w = store.add("w", Group::Beta, random_matrix(&mut rng, batch.n_edges(), 1).mapv(|v| 0.5 + 0.4 * v));
    let ids: Vec<_> = store.ids().collect();
    let r = check_gradients(&store, &ids, 1e-5, 1, |s| {
        let mut t = Tape::new();
        let x = batch.features(&mut t);
        let wv = t.param(s, w);
        let nw = batch.node_weights(&mut t, wv);
        let h = enc.encode(&mut t, s, &batch, x, wv, Some(nw));
        let z = head.forward(&mut t, s, h);
        let l = t.softmax_ce(z, batch.labels.clone());
        (t, l)
    });
    assert!(r.rel_error <= 1e-4, "{r:?}");
}

#[test]
fn zero_edge_weights_isolate_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = motif_graph(MotifKind::Cycle, 1);
    let batch = Batch::new(&[&g]);
    let mut store = ParamStore::new();
    let cfg = EncoderConfig { jk: false, n_layers: 2, ..EncoderConfig::default() };
    let enc = GinEncoder::new(&mut store, &mut rng, "enc", Group::EtaC, 1, &cfg);
    let mut t = Tape::new();
    let x = batch.features(&mut t);
    let zero = t.constant(Array2::zeros((batch.n_edges(), 1)));
    let pooled = enc.encode(&mut t, &store, &batch, x, zero, None);
    let got = t.value(pooled).clone();

    // Same computation on a graph without edges.
    let lone = GraphInstance { edges: vec![], causal: vec![], ..g.clone() };
    let b2 = Batch::new(&[&lone]);
    let mut t2 = Tape::new();
    let x2 = b2.features(&mut t2);
    let none = t2.constant(Array2::zeros((0, 1)));
    let p2 = enc.encode(&mut t2, &store, &b2, x2, none, None);
    assert_eq!(&got, t2.value(p2));
}

fn embed(enc: &GinEncoder, store: &ParamStore, g: &GraphInstance) -> Array2<f64> {
    let batch = Batch::new(&[g]);
    let mut t = Tape::new();
    let x = batch.features(&mut t);
    let w = batch.unit_edge_weights(&mut t);
    let v = enc.encode(&mut t, store, &batch, x, w, None);
    t.value(v).clone()
}

#[test]
fn house_and_cycle_embed_apart() {
    let (house, cycle) = (motif_graph(MotifKind::House, 0), motif_graph(MotifKind::Cycle, 1));
    let mut separated = 0;
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = GinEncoder::new(&mut store, &mut rng, "enc", Group::EtaC, 1, &EncoderConfig::default());
        let d = (embed(&enc, &store, &house) - embed(&enc, &store, &cycle)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if d >= 1e-6 {
            separated += 1;
        }
    }
    assert!(separated >= 198, "{separated}/200");
}

#[test]
fn sum_pooling_counts_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = motif_graph(MotifKind::Star, 0);
    let mut store = ParamStore::new();
    let mean = GinEncoder::new(&mut store, &mut rng, "m", Group::EtaC, 1, &EncoderConfig::default());
    let sum = mean.with_pooling(Pooling::Sum);
    let (a, b) = (embed(&mean, &store, &g), embed(&sum, &store, &g));
    assert!((a * g.n as f64 - b).iter().all(|d| d.abs() < 1e-12));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn permuting_nodes_keeps_the_embedding(seed in 0u64..10_000, kind in 0usize..6) {
        let kinds = [MotifKind::House, MotifKind::Cycle, MotifKind::Crane, MotifKind::Star, MotifKind::Path, MotifKind::Clique];
        let g = motif_graph(kinds[kind], 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = GinEncoder::new(&mut store, &mut rng, "enc", Group::EtaC, 1, &EncoderConfig::default());
        let mut perm: Vec<usize> = (0..g.n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let edges = g.edges.iter().map(|&[u, v]| [perm[u].min(perm[v]), perm[u].max(perm[v])]).collect();
        let h = GraphInstance { edges, ..g.clone() };
        let d = (embed(&enc, &store, &g) - embed(&enc, &store, &h)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(d <= 1e-12, "{}", d);
    }

    #[test]
    fn soft_masks_are_complementary(logits in proptest::collection::vec(-30.0f64..30.0, 1..40)) {
        let s = redinfo::nn::split_by_ratio(&logits, 0.4).unwrap();
        for (c, w) in s.w_c.iter().zip(&s.w_s) {
            prop_assert_eq!(c + w, 1.0);
            prop_assert!(*c > 0.0 && *c < 1.0 || logits.iter().any(|l| l.abs() > 25.0));
        }
        prop_assert_eq!(s.hard.len(), (0.4 * logits.len() as f64).ceil() as usize);
    }
}
