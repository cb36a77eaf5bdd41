use std::fmt::Write;

use redinfo::graph::GraphInstance;

fn role(g: &GraphInstance, v: usize) -> &'static str {
    let touches = |set: &[usize]| set.iter().any(|&e| g.edges[e].contains(&v));
    if touches(&g.causal) {
        "causal"
    } else if touches(&g.spurious) {
        "spurious"
    } else {
        "base"
    }
}

/// Undirected DOT graph with a `score` on every edge and the ground-truth
/// `role` of every node and edge.
pub fn mask_to_dot(name: &str, g: &GraphInstance, scores: &[f64]) -> String {
    let mut out = String::new();
    writeln!(out, "graph \"{name}\" {{").unwrap();
    writeln!(out, "  label=\"y={} env={}\";", g.y, g.env).unwrap();
    for v in 0..g.n {
        writeln!(out, "  {v} [role=\"{}\"];", role(g, v)).unwrap();
    }
    for (e, (&[u, v], s)) in g.edges.iter().zip(scores).enumerate() {
        let kind = if g.causal.contains(&e) {
            "causal"
        } else if g.spurious.contains(&e) {
            "spurious"
        } else {
            "base"
        };
        writeln!(out, "  {u} -- {v} [score={s}, role=\"{kind}\"];").unwrap();
    }
    out.push_str("}\n");
    out
}
