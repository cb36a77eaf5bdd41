//! Exact partial information decomposition for small discrete
//! distributions, structural-causal-model checks built on it, and a
//! desk-scale trainer for redundancy-guided invariant graph learning.

pub mod dist;
pub mod graph;
pub mod nn;
pub mod pid;
pub mod rig;
pub mod scm;
