//! Intersection information: the largest `I(Y;Q)` over variables `Q` that
//! are simultaneously a deterministic function of `A` and of `B`.
//!
//! Only the partition a function induces matters, so candidate functions of
//! `A` are enumerated as restricted growth strings. Given `f`, the function
//! of `B` is forced on every `b` that co-occurs with some `a`: all such `a`
//! must share one label. A pair is feasible when no `b` sees two labels.

use petgraph::unionfind::UnionFind;

use super::{PidError, Result};
use crate::dist::{entropy, JointDistribution};

pub const MAX_INTERSECTION_ALPHABET: usize = 8;

/// Mass below which an `(a, b)` pair is treated as off-support.
const SUPPORT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionInfo {
    pub bits: f64,
    /// Label of every `A` symbol.
    pub f: Vec<usize>,
    /// Label of every `B` symbol.
    pub g: Vec<usize>,
}

pub fn intersection_info(dist: &JointDistribution) -> Result<IntersectionInfo> {
    let [cy, ca, cb] = dist.card();
    if ca > MAX_INTERSECTION_ALPHABET || cb > MAX_INTERSECTION_ALPHABET {
        return Err(PidError::AlphabetTooLarge(ca, cb));
    }
    let support = pair_support(dist);
    let pa: Vec<f64> = (0..ca).map(|a| (0..cb).map(|b| support[a * cb + b]).sum()).collect();
    let active: Vec<usize> = (0..ca).filter(|&a| pa[a] > SUPPORT_EPS).collect();
    let mut p_ya = vec![0.0; cy * ca];
    for ([y, a, _], v) in dist.cells() {
        p_ya[y * ca + a] += v;
    }
    let p_y: Vec<f64> = (0..cy).map(|y| p_ya[y * ca..(y + 1) * ca].iter().sum()).collect();
    let h_y = entropy(&p_y);
    let max_blocks = ca.min(cb);

    let mut best = IntersectionInfo { bits: 0.0, f: vec![0; ca], g: vec![0; cb] };
    let mut rgs = vec![0usize; active.len()];
    let mut f = vec![0usize; ca];
    let mut g = vec![usize::MAX; cb];
    loop {
        let blocks = rgs.iter().max().map_or(0, |m| m + 1);
        if blocks <= max_blocks {
            f.iter_mut().for_each(|v| *v = 0);
            for (&a, &lab) in active.iter().zip(&rgs) {
                f[a] = lab;
            }
            if let Some(gg) = forced_g(&f, &active, &support, cb, &mut g) {
                let mut joint = vec![0.0; cy * blocks.max(1)];
                for y in 0..cy {
                    for &a in &active {
                        joint[y * blocks.max(1) + f[a]] += p_ya[y * ca + a];
                    }
                }
                let p_q: Vec<f64> = (0..blocks.max(1)).map(|k| (0..cy).map(|y| joint[y * blocks.max(1) + k]).sum()).collect();
                let bits = (h_y + entropy(&p_q) - entropy(&joint)).max(0.0);
                if bits > best.bits + 1e-15 {
                    best = IntersectionInfo { bits, f: f.clone(), g: gg };
                }
            }
        }
        if !next_rgs(&mut rgs) {
            break;
        }
    }
    Ok(best)
}

fn pair_support(dist: &JointDistribution) -> Vec<f64> {
    let [_, ca, cb] = dist.card();
    let mut pab = vec![0.0; ca * cb];
    for ([_, a, b], v) in dist.cells() {
        pab[a * cb + b] += v;
    }
    pab
}

fn forced_g(f: &[usize], active: &[usize], support: &[f64], cb: usize, scratch: &mut [usize]) -> Option<Vec<usize>> {
    scratch.iter_mut().for_each(|v| *v = usize::MAX);
    for &a in active {
        for b in 0..cb {
            if support[a * cb + b] > SUPPORT_EPS {
                if scratch[b] == usize::MAX {
                    scratch[b] = f[a];
                } else if scratch[b] != f[a] {
                    return None;
                }
            }
        }
    }
    Some(scratch.iter().map(|&v| if v == usize::MAX { 0 } else { v }).collect())
}

/// Advances a restricted growth string; returns false after the last one.
fn next_rgs(s: &mut [usize]) -> bool {
    let n = s.len();
    for i in (1..n).rev() {
        let prefix_max = s[..i].iter().copied().max().unwrap_or(0);
        if s[i] <= prefix_max {
            s[i] += 1;
            s[i + 1..].iter_mut().for_each(|v| *v = 0);
            return true;
        }
    }
    false
}

/// Connected components of the bipartite support graph of `(A, B)`: the
/// finest common function of the two sources. Used as an independent check
/// of the exhaustive search.
pub fn gacs_korner_components(dist: &JointDistribution) -> (Vec<usize>, Vec<usize>) {
    let [_, ca, cb] = dist.card();
    let support = pair_support(dist);
    let mut uf = UnionFind::<usize>::new(ca + cb);
    for a in 0..ca {
        for b in 0..cb {
            if support[a * cb + b] > SUPPORT_EPS {
                uf.union(a, ca + b);
            }
        }
    }
    let mut label = vec![usize::MAX; ca + cb];
    let mut next = 0;
    let mut out = vec![0; ca + cb];
    for x in 0..ca + cb {
        let r = uf.find_mut(x);
        if label[r] == usize::MAX {
            label[r] = next;
            next += 1;
        }
        out[x] = label[r];
    }
    (out[..ca].to_vec(), out[ca..].to_vec())
}
