//! Node importance ranking and attack target selection.
//!
//! A node's score is its degree plus, for every incident link, the share of
//! that link's importance attributed to the node. Link importance grows with
//! how many otherwise-unshared neighbors the two endpoints have and shrinks
//! with the number of triangles through the link, so bridges between dense
//! clusters score highest.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{Adjacency, UavNetwork};

/// Number of triangles through the link `(i, j)`.
pub fn triangle_count(adj: &Adjacency, i: usize, j: usize) -> Result<usize> {
    if i >= adj.len() || j >= adj.len() || !adj.linked(i, j) {
        return Err(Error::NoLink(i, j));
    }
    Ok(adj.neighbors(i).filter(|&x| adj.linked(j, x)).count())
}

/// Connectivity ability `Z = (k_i - m - 1)(k_j - m - 1)`.
pub fn connectivity(k_i: usize, k_j: usize, m: usize) -> f64 {
    debug_assert!(m + 1 <= k_i.min(k_j), "triangles exceed degree on a simple graph");
    ((k_i - m - 1) * (k_j - m - 1)) as f64
}

/// Link importance `I = Z * 2 / (m + 2)`.
pub fn link_importance(k_i: usize, k_j: usize, m: usize) -> f64 {
    connectivity(k_i, k_j, m) * 2.0 / (m as f64 + 2.0)
}

/// Share of link importance attributed to endpoint `i`:
/// `I * (1 - (k_j - 1) / (k_i + k_j - 2))`.
///
/// For an isolated pair (`k_i = k_j = 1`) the ratio is undefined; the link's
/// importance is zero there anyway, so the contribution is zero.
pub fn link_contribution(importance: f64, k_i: usize, k_j: usize) -> f64 {
    let denom = k_i + k_j - 2;
    if denom == 0 {
        return 0.0;
    }
    importance * (1.0 - (k_j - 1) as f64 / denom as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeImportance {
    pub edge: (usize, usize),
    pub triangles: usize,
    pub z: f64,
    pub importance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImportanceReport {
    pub edges: Vec<EdgeImportance>,
    pub degrees: Vec<usize>,
    pub scores: Vec<f64>,
    pub attacked: Vec<bool>,
    /// Node ids by descending score; ties by ascending id; attacked nodes last.
    pub ranking: Vec<usize>,
}

impl ImportanceReport {
    /// Scores every node of `adj`. `attacked` marks nodes that must rank last.
    pub fn compute(adj: &Adjacency, attacked: &[bool]) -> Self {
        let n = adj.len();
        let degrees: Vec<usize> = (0..n).map(|i| adj.degree(i)).collect();
        let mut scores: Vec<f64> = degrees.iter().map(|&k| k as f64).collect();
        let mut edges = Vec::new();
        for (i, j) in adj.edges() {
            let m = adj.neighbors(i).filter(|&x| adj.linked(j, x)).count();
            let (ki, kj) = (degrees[i], degrees[j]);
            let z = connectivity(ki, kj, m);
            let importance = link_importance(ki, kj, m);
            scores[i] += link_contribution(importance, ki, kj);
            scores[j] += link_contribution(importance, kj, ki);
            edges.push(EdgeImportance {
                edge: (i, j),
                triangles: m,
                z,
                importance,
            });
        }
        for (s, &hit) in scores.iter_mut().zip(attacked) {
            if hit {
                *s = 0.0;
            }
        }
        let mut ranking: Vec<usize> = (0..n).collect();
        ranking.sort_by(|&a, &b| {
            let hit = |x: usize| attacked.get(x).copied().unwrap_or(false);
            hit(a)
                .cmp(&hit(b))
                .then(scores[b].total_cmp(&scores[a]))
                .then(a.cmp(&b))
        });
        Self {
            edges,
            degrees,
            scores,
            attacked: attacked.to_vec(),
            ranking,
        }
    }
}

/// Importance of every node in the current (possibly attacked) network.
pub fn node_importance(network: &UavNetwork) -> ImportanceReport {
    ImportanceReport::compute(network.adjacency(), &network.attacked_mask())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackModel {
    /// Highest score first.
    Deliberate,
    /// Uniformly random order.
    Random,
}

impl std::str::FromStr for AttackModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deliberate" => Ok(Self::Deliberate),
            "random" => Ok(Self::Random),
            other => Err(Error::Config(format!("unknown attack model {other:?}"))),
        }
    }
}

/// Picks `count` targets among nodes that are neither protected nor already
/// attacked.
pub fn select_targets(
    report: &ImportanceReport,
    count: usize,
    model: AttackModel,
    protected: &[usize],
    seed: u64,
) -> Result<Vec<usize>> {
    let mut candidates: Vec<usize> = report
        .ranking
        .iter()
        .copied()
        .filter(|id| !protected.contains(id) && !report.attacked[*id])
        .collect();
    if count > candidates.len() {
        return Err(Error::Config(format!(
            "cannot attack {count} nodes; only {} eligible",
            candidates.len()
        )));
    }
    match model {
        AttackModel::Deliberate => {
            candidates.truncate(count);
            Ok(candidates)
        }
        AttackModel::Random => {
            candidates.sort_unstable();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (picked, _) = candidates.partial_shuffle(&mut rng, count);
            Ok(picked.to_vec())
        }
    }
}
