//! Grid-scan reference for the unique-information program with binary
//! sources. Each `Y` slice of a coupling of two bits has one free
//! parameter, `t_y = Q(y, a=0, b=0)`, confined to its Fréchet interval.
//! The objective is convex in `(t_y)`, so minimizing parameter by parameter
//! (outermost on a uniform grid, inner ones by golden section) reaches the
//! global minimum up to the grid resolution.

use super::{PidError, Result};
use crate::dist::JointDistribution;

const GOLDEN_ITERS: usize = 80;

struct Slice {
    py: f64,
    pa0: f64,
    pb0: f64,
    lo: f64,
    hi: f64,
}

/// Minimum of `I_Q(Y;A|B)` in bits over the marginal polytope of `dist`.
pub fn broja_oracle(dist: &JointDistribution, grid_steps: usize) -> Result<f64> {
    let [cy, ca, cb] = dist.card();
    if ca != 2 || cb != 2 {
        return Err(PidError::NonBinarySources(ca, cb));
    }
    if grid_steps < 100 {
        return Err(PidError::GridTooCoarse(grid_steps));
    }
    let mp = dist.marginal_pair();
    let slices: Vec<Slice> = (0..cy)
        .map(|y| {
            let pa0 = mp.p_ya[y * 2];
            let pb0 = mp.p_yb[y * 2];
            let py = pa0 + mp.p_ya[y * 2 + 1];
            Slice { py, pa0, pb0, lo: (pa0 + pb0 - py).max(0.0), hi: pa0.min(pb0) }
        })
        .collect();
    let mut t: Vec<f64> = slices.iter().map(|s| s.lo).collect();
    Ok(minimize_from(&slices, 0, &mut t, grid_steps).max(0.0))
}

fn minimize_from(slices: &[Slice], level: usize, t: &mut [f64], grid_steps: usize) -> f64 {
    if level == slices.len() {
        return objective(slices, t);
    }
    let (lo, hi) = (slices[level].lo, slices[level].hi);
    let eval = |x: f64, t: &mut [f64]| {
        t[level] = x;
        minimize_from(slices, level + 1, t, grid_steps)
    };
    if hi - lo <= 0.0 {
        return eval(lo, t);
    }
    let (a, b) = if level == 0 {
        let h = (hi - lo) / grid_steps as f64;
        let mut best = (f64::INFINITY, 0usize);
        for k in 0..=grid_steps {
            let v = eval(lo + h * k as f64, t);
            if v < best.0 {
                best = (v, k);
            }
        }
        let k = best.1;
        (lo + h * k.saturating_sub(1) as f64, (lo + h * (k + 1) as f64).min(hi))
    } else {
        (lo, hi)
    };
    golden(a, b, |x| eval(x, t))
}

fn golden(mut a: f64, mut b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    fc.min(fd).min(f(a)).min(f(b))
}

/// `I_Q(Y;A|B) = sum q(y,a,b) log2( q(y,a,b) q(b) / (q(y,b) q(a,b)) )`.
fn objective(slices: &[Slice], t: &[f64]) -> f64 {
    let mut q = vec![[0.0f64; 4]; slices.len()];
    let mut qab = [0.0f64; 4];
    let mut qb = [0.0f64; 2];
    for (y, (s, &ty)) in slices.iter().zip(t).enumerate() {
        let cells = [ty, s.pa0 - ty, s.pb0 - ty, s.py - s.pa0 - s.pb0 + ty];
        for (k, v) in cells.into_iter().enumerate() {
            let v = v.max(0.0);
            q[y][k] = v;
            qab[k] += v;
            qb[k & 1] += v;
        }
    }
    let mut total = 0.0;
    for (s, qy) in slices.iter().zip(&q) {
        let qyb = [s.pb0, s.py - s.pb0];
        for k in 0..4 {
            let v = qy[k];
            if v > 0.0 {
                total += v * (v * qb[k & 1] / (qyb[k & 1] * qab[k])).log2();
            }
        }
    }
    total
}
