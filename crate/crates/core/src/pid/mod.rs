//! Partial information decomposition of `I(Y; A, B)`.
//!
//! Unique information is the minimum of `I_Q(Y;A|B)` over joints `Q` that
//! keep the `(Y,A)` and `(Y,B)` marginals of `P`. Redundancy and synergy
//! follow from the two identities
//!
//! ```text
//! I(Y;A)   = Uni(Y;A|B) + Red(Y;A,B)
//! I(Y;A,B) = Uni(Y;A|B) + Uni(Y;B|A) + Red(Y;A,B) + Syn(Y;A,B)
//! ```
//!
//! The module also provides a grid-scan oracle for binary sources and the
//! intersection-information lower bound on redundancy.

mod broja;
mod intersection;
mod oracle;

pub use intersection::{gacs_korner_components, intersection_info, IntersectionInfo, MAX_INTERSECTION_ALPHABET};
pub use oracle::broja_oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{
    conditional_mutual_information, entropy_of, mutual_information, total_mutual_information, Axis, DistError,
    JointDistribution,
};

pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 50_000;

#[derive(Debug, Error)]
pub enum PidError {
    #[error("solver stopped after {iterations} Newton steps; best value {best:.6} bits, certified gap {gap:.3e} bits")]
    NonConvergence { best: f64, gap: f64, iterations: usize },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("oracle needs binary sources, got |A|={0}, |B|={1}")]
    NonBinarySources(usize, usize),
    #[error("oracle needs at least 100 grid steps, got {0}")]
    GridTooCoarse(usize),
    #[error("exhaustive search supports alphabets up to {MAX_INTERSECTION_ALPHABET}, got |A|={0}, |B|={1}")]
    AlphabetTooLarge(usize, usize),
    #[error(transparent)]
    Dist(#[from] DistError),
}

pub type Result<T> = std::result::Result<T, PidError>;

/// Which source the unique information is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    A,
    B,
}

/// A joint inside the marginal polytope together with its objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingPoint {
    pub q: JointDistribution,
    /// `I_Q(Y;A|B)` in bits.
    pub objective: f64,
}

/// The four-way decomposition, all in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidResult {
    #[serde(rename = "red", serialize_with = "six_places")]
    pub redundancy: f64,
    #[serde(rename = "uniq_a", serialize_with = "six_places")]
    pub unique_a: f64,
    #[serde(rename = "uniq_b", serialize_with = "six_places")]
    pub unique_b: f64,
    #[serde(rename = "syn", serialize_with = "six_places")]
    pub synergy: f64,
    #[serde(rename = "total", serialize_with = "six_places")]
    pub total_mi: f64,
    #[serde(rename = "gap", serialize_with = "six_places")]
    pub solver_gap: f64,
}

fn six_places<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    let r = (v * 1e6).round() / 1e6;
    // Avoid "-0.0" in output.
    s.serialize_f64(if r == 0.0 { 0.0 } else { r })
}

impl PidResult {
    pub fn zero() -> Self {
        Self { redundancy: 0.0, unique_a: 0.0, unique_b: 0.0, synergy: 0.0, total_mi: 0.0, solver_gap: 0.0 }
    }

    pub fn components(&self) -> [f64; 4] {
        [self.redundancy, self.unique_a, self.unique_b, self.synergy]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }
}

/// Settings of the unique-information solver.
#[derive(Debug, Clone)]
pub struct BrojaSolver {
    /// Certified optimality slack requested, in bits.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BrojaSolver {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

impl BrojaSolver {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }

    /// Minimizer of `I_Q(Y;A|B)` over the marginal polytope of `dist`, and
    /// the certified gap in bits.
    ///
    /// The returned point is the best of the barrier solution, the
    /// conditionally independent coupling and `dist` itself, so its value
    /// never exceeds either of the latter two.
    pub fn minimize(&self, dist: &JointDistribution) -> Result<(CouplingPoint, f64)> {
        if !(self.tol > 0.0) {
            return Err(PidError::BadTolerance(self.tol));
        }
        let settings = broja::BarrierSettings { tol: self.tol, max_newton: self.max_iter };
        let out = broja::solve(dist, &settings);
        let solved = point(JointDistribution::new(dist.card(), out.q)?)?;
        let mut best = solved;
        for cand in [independent_coupling(dist)?, dist.clone()] {
            let c = point(cand)?;
            if c.objective < best.objective {
                best = c;
            }
        }
        if !out.converged {
            return Err(PidError::NonConvergence { best: best.objective, gap: out.gap_bits, iterations: out.newton_steps });
        }
        Ok((best, out.gap_bits))
    }
}

fn point(q: JointDistribution) -> Result<CouplingPoint> {
    let objective = conditional_mutual_information(&q, Axis::Y, Axis::A, Axis::B)?;
    Ok(CouplingPoint { q, objective })
}

/// `Q(y,a,b) = P(y,a) P(y,b) / P(y)`.
pub fn independent_coupling(dist: &JointDistribution) -> Result<JointDistribution> {
    let [cy, ca, cb] = dist.card();
    let mp = dist.marginal_pair();
    let py = mp.p_y_from_a();
    Ok(JointDistribution::from_fn([cy, ca, cb], |y, a, b| {
        if py[y] > 0.0 {
            mp.p_ya[y * ca + a] * mp.p_yb[y * cb + b] / py[y]
        } else {
            0.0
        }
    })?)
}

/// `Uni(Y; which | other)` and the coupling that attains it.
pub fn broja_unique(dist: &JointDistribution, which: Source, tol: f64) -> Result<(f64, CouplingPoint)> {
    let solver = BrojaSolver::with_tol(tol);
    match which {
        Source::A => {
            let (cp, _) = solver.minimize(dist)?;
            Ok((cp.objective.max(0.0), cp))
        }
        Source::B => {
            let (cp, _) = solver.minimize(&dist.swap_sources())?;
            let q = cp.q.swap_sources();
            let objective = conditional_mutual_information(&q, Axis::Y, Axis::B, Axis::A)?;
            Ok((objective.max(0.0), CouplingPoint { q, objective }))
        }
    }
}

/// Full decomposition with the default iteration budget.
pub fn compute_pid(dist: &JointDistribution, tol: f64) -> Result<PidResult> {
    BrojaSolver::with_tol(tol).decompose(dist)
}

impl BrojaSolver {
    pub fn decompose(&self, dist: &JointDistribution) -> Result<PidResult> {
        let i_a = mutual_information(dist, Axis::Y, Axis::A)?;
        let i_b = mutual_information(dist, Axis::Y, Axis::B)?;
        let total = total_mutual_information(dist);
        const EPS: f64 = 1e-14;
        if entropy_of(dist, Axis::Y.into()) <= EPS {
            return Ok(PidResult::zero());
        }
        // A constant source carries nothing; the other source's information
        // is all unique.
        if entropy_of(dist, Axis::A.into()) <= EPS {
            return Ok(PidResult { unique_b: i_b.max(0.0), total_mi: total, ..PidResult::zero() });
        }
        if entropy_of(dist, Axis::B.into()) <= EPS {
            return Ok(PidResult { unique_a: i_a.max(0.0), total_mi: total, ..PidResult::zero() });
        }
        let (cp, gap) = self.minimize(dist)?;
        let unique_a = cp.objective;
        let redundancy = i_a - unique_a;
        let unique_b = i_b - redundancy;
        let synergy = total - unique_a - unique_b - redundancy;
        Ok(PidResult { redundancy, unique_a, unique_b, synergy, total_mi: total, solver_gap: gap })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::gates;

    fn h14() -> f64 {
        2.0 - 0.75 * 3f64.log2()
    }

    #[test]
    fn xor_is_pure_synergy() {
        let r = compute_pid(&gates::xor(), DEFAULT_TOL).unwrap();
        assert!(r.redundancy.abs() < 1e-4 && r.unique_a.abs() < 1e-4 && r.unique_b.abs() < 1e-4);
        assert!((r.synergy - 1.0).abs() < 1e-4);
    }

    #[test]
    fn copy_is_pure_redundancy() {
        let r = compute_pid(&gates::copy(), DEFAULT_TOL).unwrap();
        assert!((r.redundancy - 1.0).abs() < 1e-12);
        assert!(r.unique_a.abs() < 1e-12 && r.unique_b.abs() < 1e-12 && r.synergy.abs() < 1e-12);
    }

    #[test]
    fn and_gate_unique_is_zero() {
        let (u, cp) = broja_unique(&gates::and(), Source::A, DEFAULT_TOL).unwrap();
        assert!(u < 1e-4, "uni = {u}");
        assert!(gates::and().marginal_pair().violation(&cp.q) < 1e-9);
        let r = compute_pid(&gates::and(), DEFAULT_TOL).unwrap();
        // I(Y;A) = h(1/4) - 1/2 = 0.3113; synergy = 1/2.
        assert!((r.redundancy - (h14() - 0.5)).abs() < 1e-3);
        assert!((r.synergy - 0.5).abs() < 1e-3);
    }

    #[test]
    fn unique_a_gate() {
        let r = compute_pid(&gates::unique_a(), DEFAULT_TOL).unwrap();
        assert!((r.unique_a - 1.0).abs() < 1e-4);
        assert!(r.redundancy.abs() < 1e-4 && r.unique_b.abs() < 1e-4 && r.synergy.abs() < 1e-4);
    }

    #[test]
    fn unique_b_matches_swapped_solve() {
        let d = JointDistribution::from_fn([2, 3, 2], |y, a, b| (1 + 3 * y * a + b + (a == b) as usize * 4) as f64)
            .unwrap();
        let r = compute_pid(&d, 1e-6).unwrap();
        let (ub, cp) = broja_unique(&d, Source::B, 1e-6).unwrap();
        assert!((r.unique_b - ub).abs() < 2e-6, "{} vs {}", r.unique_b, ub);
        assert!(d.marginal_pair().violation(&cp.q) < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let const_y = JointDistribution::from_fn([2, 2, 2], |y, _, _| (y == 0) as u8 as f64).unwrap();
        assert_eq!(compute_pid(&const_y, DEFAULT_TOL).unwrap().components(), [0.0; 4]);
        let const_a = JointDistribution::from_fn([2, 1, 2], |y, _, b| if y == b { 0.5 } else { 0.0 }).unwrap();
        let r = compute_pid(&const_a, DEFAULT_TOL).unwrap();
        assert_eq!(r.redundancy, 0.0);
        assert!((r.unique_b - 1.0).abs() < 1e-12);
        assert!((r.components().iter().sum::<f64>() - r.total_mi).abs() < 1e-12);
    }

    #[test]
    fn bad_tolerance_rejected() {
        assert!(matches!(compute_pid(&gates::and(), 0.0), Err(PidError::BadTolerance(_))));
    }

    #[test]
    fn json_has_expected_keys() {
        let r = compute_pid(&gates::xor(), DEFAULT_TOL).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for k in ["red", "uniq_a", "uniq_b", "syn", "total", "gap"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
        assert_eq!(v["syn"].as_f64().unwrap(), 1.0);
    }
}
