use serde::{Deserialize, Serialize};

/// The three label-defining motifs and the three label-correlated
/// distractors. Discriminants double as class / variant ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotifKind {
    House,
    Cycle,
    Crane,
    Star,
    Path,
    Clique,
}

impl MotifKind {
    pub const CAUSAL: [MotifKind; 3] = [MotifKind::House, MotifKind::Cycle, MotifKind::Crane];
    pub const SPURIOUS: [MotifKind; 3] = [MotifKind::Star, MotifKind::Path, MotifKind::Clique];

    pub fn causal(class: usize) -> Self {
        Self::CAUSAL[class]
    }

    pub fn spurious(variant: usize) -> Self {
        Self::SPURIOUS[variant]
    }

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name.to_ascii_lowercase().as_str() {
            "house" => Self::House,
            "cycle" => Self::Cycle,
            "crane" => Self::Crane,
            "star" => Self::Star,
            "path" => Self::Path,
            "clique" => Self::Clique,
            _ => return None,
        })
    }

    pub fn node_count(self) -> usize {
        match self {
            Self::House | Self::Crane | Self::Star => 5,
            Self::Cycle | Self::Path => 6,
            Self::Clique => 4,
        }
    }

    /// Canonical edge list on nodes `0..node_count()`.
    pub fn edges(self) -> Vec<[usize; 2]> {
        match self {
            // Square 0-1-2-3, roof apex 4 over 0 and 1, diagonal 0-2.
            Self::House => vec![[0, 1], [1, 2], [2, 3], [0, 3], [0, 4], [1, 4], [0, 2]],
            Self::Cycle => (0..6).map(|i| [i, (i + 1) % 6]).collect(),
            // Path 0-1-2-3, node 4 on 1 and 3, closed by 0-4.
            Self::Crane => vec![[0, 1], [1, 2], [2, 3], [1, 4], [3, 4], [0, 4]],
            Self::Star => (1..5).map(|i| [0, i]).collect(),
            Self::Path => (0..5).map(|i| [i, i + 1]).collect(),
            Self::Clique => vec![[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]],
        }
    }

    /// Recognizes a motif from an edge set up to isomorphism. The six motifs
    /// are separated by edge count and degree sequence.
    pub fn identify(edges: &[[usize; 2]]) -> Option<Self> {
        let sig = signature(edges);
        [Self::House, Self::Cycle, Self::Crane, Self::Star, Self::Path, Self::Clique]
            .into_iter()
            .find(|m| signature(&m.edges()) == sig)
    }
}

fn signature(edges: &[[usize; 2]]) -> (usize, Vec<usize>) {
    let mut deg = std::collections::BTreeMap::<usize, usize>::new();
    for &[u, v] in edges {
        *deg.entry(u).or_default() += 1;
        *deg.entry(v).or_default() += 1;
    }
    let mut d: Vec<usize> = deg.into_values().collect();
    d.sort_unstable();
    (edges.len(), d)
}
