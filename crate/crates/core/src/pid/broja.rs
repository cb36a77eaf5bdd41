//! Minimum conditional mutual information over the set of joints that share
//! the `(Y,A)` and `(Y,B)` marginals of a reference distribution.
//!
//! The feasible set factorizes into one transportation polytope per symbol
//! `y`: a coupling of `P(a | y)` and `P(b | y)` scaled by `P(y)`. Cells where
//! either marginal vanishes are structurally zero and dropped. The remaining
//! cells are written as `q = q0 + N z`, with `q0` the conditionally
//! independent coupling and the columns of `N` the usual `(+1,-1,-1,+1)`
//! cycles of a transportation polytope, so every `z` preserves both marginals
//! exactly.
//!
//! The objective `I_Q(Y;A|B) = H(Y|B) - H_Q(Y|A,B)` is convex in `q`. It is
//! minimized with a log-barrier method: Newton centering in `z` followed by
//! an increase of the barrier weight `t`. A centered point certifies
//! `f(q) - f* <= m / t` nats, `m` being the number of free cells.

use nalgebra::{DMatrix, DVector};

use crate::dist::JointDistribution;

const GROWTH: f64 = 8.0;
const MAX_INNER: usize = 200;
const ARMIJO: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct BarrierSettings {
    /// Target certified gap in bits.
    pub tol: f64,
    /// Budget of Newton steps across all centering rounds.
    pub max_newton: usize,
}

#[derive(Debug, Clone)]
pub struct BarrierOutcome {
    /// Minimizing coupling, dense `(y, a, b)` layout of the input.
    pub q: Vec<f64>,
    /// Certified optimality slack in bits.
    pub gap_bits: f64,
    pub newton_steps: usize,
    pub converged: bool,
}

struct Cell {
    y: usize,
    a: usize,
    b: usize,
    ab: usize,
}

struct Problem {
    card: [usize; 3],
    cells: Vec<Cell>,
    q0: Vec<f64>,
    /// Sparse columns of `N`: `(cell index, coefficient)`.
    dirs: Vec<[(usize, f64); 4]>,
}

impl Problem {
    fn build(dist: &JointDistribution) -> Self {
        let card = dist.card();
        let [cy, ca, cb] = card;
        let mp = dist.marginal_pair();
        let py = mp.p_y_from_a();
        let mut cells = Vec::new();
        let mut q0 = Vec::new();
        let mut dirs = Vec::new();
        for y in 0..cy {
            if py[y] <= 0.0 {
                continue;
            }
            let act_a: Vec<usize> = (0..ca).filter(|&a| mp.p_ya[y * ca + a] > 0.0).collect();
            let act_b: Vec<usize> = (0..cb).filter(|&b| mp.p_yb[y * cb + b] > 0.0).collect();
            let base = cells.len();
            let nb = act_b.len();
            for &a in &act_a {
                for &b in &act_b {
                    cells.push(Cell { y, a, b, ab: a * cb + b });
                    q0.push(mp.p_ya[y * ca + a] * mp.p_yb[y * cb + b] / py[y]);
                }
            }
            let (la, lb) = (act_a.len() - 1, nb - 1);
            for i in 0..la {
                for j in 0..lb {
                    let at = |ii: usize, jj: usize| base + ii * nb + jj;
                    dirs.push([(at(i, j), 1.0), (at(i, lb), -1.0), (at(la, j), -1.0), (at(la, lb), 1.0)]);
                }
            }
        }
        Self { card, cells, q0, dirs }
    }

    fn group_mass(&self, q: &[f64]) -> Vec<f64> {
        let mut m = vec![0.0; self.card[1] * self.card[2]];
        for (c, v) in self.cells.iter().zip(q) {
            m[c.ab] += v;
        }
        m
    }

    /// `-H_Q(Y|A,B)` in nats.
    fn objective(&self, q: &[f64]) -> f64 {
        let m = self.group_mass(q);
        let mut f = 0.0;
        for (c, &v) in self.cells.iter().zip(q) {
            if v > 0.0 {
                f += v * (v / m[c.ab]).ln();
            }
        }
        f
    }

    fn barrier(&self, q: &[f64], t: f64) -> f64 {
        t * self.objective(q) - q.iter().map(|v| v.ln()).sum::<f64>()
    }

    fn apply_dirs(&self, z: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.q0);
        for (dir, &zj) in self.dirs.iter().zip(z) {
            for &(k, s) in dir {
                out[k] += s * zj;
            }
        }
    }

    fn dense(&self, q: &[f64]) -> Vec<f64> {
        let [_, ca, cb] = self.card;
        let mut full = vec![0.0; self.card.iter().product()];
        for (c, &v) in self.cells.iter().zip(q) {
            full[(c.y * ca + c.a) * cb + c.b] = v;
        }
        full
    }
}

pub fn solve(dist: &JointDistribution, settings: &BarrierSettings) -> BarrierOutcome {
    let prob = Problem::build(dist);
    let n = prob.cells.len();
    let d = prob.dirs.len();
    if d == 0 {
        // The polytope is a single point.
        return BarrierOutcome { q: prob.dense(&prob.q0), gap_bits: 0.0, newton_steps: 0, converged: true };
    }

    let target_nats = settings.tol * std::f64::consts::LN_2;
    let mut z = vec![0.0; d];
    let mut q = prob.q0.clone();
    let mut trial = vec![0.0; n];
    let mut t = 1.0;
    let mut steps = 0usize;
    let mut converged = false;

    // Dense copy of N, reused by every Hessian reduction.
    let mut nmat = DMatrix::<f64>::zeros(n, d);
    for (j, dir) in prob.dirs.iter().enumerate() {
        for &(k, s) in dir {
            nmat[(k, j)] += s;
        }
    }

    'outer: loop {
        for _ in 0..MAX_INNER {
            if steps >= settings.max_newton {
                break 'outer;
            }
            steps += 1;
            let m = prob.group_mass(&q);
            // Gradient and Hessian of t*f - sum(log q) in cell space.
            let mut grad = DVector::<f64>::zeros(n);
            let mut hess = DMatrix::<f64>::zeros(n, n);
            for (k, c) in prob.cells.iter().enumerate() {
                grad[k] = t * (q[k].ln() - m[c.ab].ln()) - 1.0 / q[k];
                hess[(k, k)] = t / q[k] + 1.0 / (q[k] * q[k]);
            }
            for (k, ck) in prob.cells.iter().enumerate() {
                for (l, cl) in prob.cells.iter().enumerate() {
                    if ck.ab == cl.ab {
                        hess[(k, l)] -= t / m[ck.ab];
                    }
                }
            }
            let g = nmat.transpose() * &grad;
            let h = nmat.transpose() * &hess * &nmat;
            let delta = match h.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    let ridge = 1e-12 * h.diagonal().amax().max(1.0);
                    let hr = h + DMatrix::identity(d, d) * ridge;
                    match hr.lu().solve(&(-&g)) {
                        Some(s) => s,
                        None => break 'outer,
                    }
                }
            };
            let decrement = -g.dot(&delta);
            if decrement / 2.0 <= 1e-11 {
                break;
            }
            let dq = &nmat * &delta;
            let mut step = 1.0f64;
            for k in 0..n {
                if dq[k] < 0.0 {
                    step = step.min(-0.99 * q[k] / dq[k]);
                }
            }
            let current = prob.barrier(&q, t);
            loop {
                let znew: Vec<f64> = z.iter().zip(delta.iter()).map(|(zi, di)| zi + step * di).collect();
                prob.apply_dirs(&znew, &mut trial);
                if trial.iter().all(|&v| v > 0.0) && prob.barrier(&trial, t) <= current - ARMIJO * step * decrement {
                    z = znew;
                    std::mem::swap(&mut q, &mut trial);
                    break;
                }
                step *= 0.5;
                if step < 1e-14 {
                    // No further progress possible at this t.
                    break;
                }
            }
            if step < 1e-14 {
                break;
            }
        }
        if (n as f64) / t <= target_nats {
            converged = true;
            break;
        }
        t *= GROWTH;
    }

    BarrierOutcome {
        q: prob.dense(&q),
        gap_bits: (n as f64) / t / std::f64::consts::LN_2,
        newton_steps: steps,
        converged,
    }
}
