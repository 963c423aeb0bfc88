//! UAV placement, distance-gated links and node attacks.
//!
//! A network keeps every node it was built with. Attacking a node flags it and
//! zeroes its adjacency row and column, so node ids stay stable across attack
//! waves and Q-tables indexed by node id remain valid.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }
}

/// Straight-line distance in meters.
pub fn euclidean_distance(a: Position, b: Position) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct UavNode {
    pub id: usize,
    pub position: Position,
    pub attacked: bool,
}

/// Symmetric boolean adjacency matrix with an empty diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    cells: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            cells: vec![false; n * n],
        }
    }

    /// Builds an undirected graph from an edge list. Self-loops are ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = Self::empty(n);
        for &(i, j) in edges {
            if i >= n {
                return Err(Error::NodeOutOfRange(i));
            }
            if j >= n {
                return Err(Error::NodeOutOfRange(j));
            }
            if i != j {
                adj.set(i, j, true);
            }
        }
        Ok(adj)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn linked(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, v: bool) {
        self.cells[i * self.n + j] = v;
        self.cells[j * self.n + i] = v;
    }

    /// Neighbors of `i` in ascending id order.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let row = &self.cells[i * self.n..(i + 1) * self.n];
        row.iter()
            .enumerate()
            .filter_map(|(j, &on)| on.then_some(j))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    /// Unordered edges `(i, j)` with `i < j`, lexicographically sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.linked(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Breadth-first reachability from `from`.
    pub fn reachable_from(&self, from: usize) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(u) = queue.pop_front() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    pub fn as_matrix(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.linked(i, j) as u8).collect())
            .collect()
    }
}

/// Applies the link gate: `e[i][j] = 1` iff `i != j`, neither endpoint is
/// attacked and `o_min <= d(i, j) <= o_max`.
pub fn build_adjacency(nodes: &[UavNode], o_min: f64, o_max: f64) -> Result<Adjacency> {
    check_bounds(o_min, o_max)?;
    let n = nodes.len();
    let mut adj = Adjacency::empty(n);
    for i in 0..n {
        if nodes[i].attacked {
            continue;
        }
        for j in i + 1..n {
            if nodes[j].attacked {
                continue;
            }
            let d = euclidean_distance(nodes[i].position, nodes[j].position);
            if (o_min..=o_max).contains(&d) {
                adj.set(i, j, true);
            }
        }
    }
    Ok(adj)
}

fn check_bounds(o_min: f64, o_max: f64) -> Result<()> {
    if !(o_min.is_finite() && o_max.is_finite()) || o_min < 0.0 || o_min >= o_max {
        return Err(Error::Config(format!(
            "link bounds must satisfy 0 <= o_min < o_max, got ({o_min}, {o_max})"
        )));
    }
    Ok(())
}

/// The UAV graph: node positions, attack flags and the derived adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct UavNetwork {
    nodes: Vec<UavNode>,
    adjacency: Adjacency,
    o_min: f64,
    o_max: f64,
}

impl UavNetwork {
    /// Builds an unattacked network with ids assigned in order.
    pub fn from_positions(positions: &[Position], o_min: f64, o_max: f64) -> Result<Self> {
        let nodes = positions
            .iter()
            .enumerate()
            .map(|(id, &position)| UavNode {
                id,
                position,
                attacked: false,
            })
            .collect();
        Self::from_nodes(nodes, o_min, o_max)
    }

    /// Node ids must be `0..n` in order.
    pub fn from_nodes(nodes: Vec<UavNode>, o_min: f64, o_max: f64) -> Result<Self> {
        for (idx, node) in nodes.iter().enumerate() {
            if node.id != idx {
                return Err(Error::Config(format!(
                    "node ids must be 0..n in order; found id {} at position {idx}",
                    node.id
                )));
            }
        }
        let adjacency = build_adjacency(&nodes, o_min, o_max)?;
        Ok(Self {
            nodes,
            adjacency,
            o_min,
            o_max,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[UavNode] {
        &self.nodes
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn o_min(&self) -> f64 {
        self.o_min
    }

    pub fn o_max(&self) -> f64 {
        self.o_max
    }

    pub fn is_attacked(&self, id: usize) -> bool {
        self.nodes[id].attacked
    }

    pub fn attacked_mask(&self) -> Vec<bool> {
        self.nodes.iter().map(|n| n.attacked).collect()
    }

    pub fn position(&self, id: usize) -> Position {
        self.nodes[id].position
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        euclidean_distance(self.nodes[i].position, self.nodes[j].position)
    }

    pub fn is_linked(&self, i: usize, j: usize) -> bool {
        i < self.len() && j < self.len() && self.adjacency.linked(i, j)
    }

    /// Live neighbors of `id`, ascending.
    pub fn neighbors(&self, id: usize) -> Vec<usize> {
        self.adjacency.neighbors(id).collect()
    }

    pub fn degree(&self, id: usize) -> usize {
        self.adjacency.degree(id)
    }

    pub fn has_path(&self, source: usize, dest: usize) -> bool {
        source < self.len() && dest < self.len() && self.adjacency.reachable_from(source)[dest]
    }

    /// True when every unattacked node can reach every other unattacked node.
    pub fn is_connected(&self) -> bool {
        let Some(start) = self.nodes.iter().position(|n| !n.attacked) else {
            return true;
        };
        let seen = self.adjacency.reachable_from(start);
        self.nodes.iter().all(|n| n.attacked || seen[n.id])
    }

    /// Flags each target as attacked and cuts all of its links.
    ///
    /// Fails if any target is in `protected` (the scenario's source and
    /// destination) or out of range. Re-attacking a node is a no-op.
    pub fn apply_attack(&self, targets: &[usize], protected: &[usize]) -> Result<Self> {
        let mut next = self.clone();
        for &t in targets {
            if t >= self.len() {
                return Err(Error::NodeOutOfRange(t));
            }
            if protected.contains(&t) {
                return Err(Error::ProtectedTarget(t));
            }
            next.nodes[t].attacked = true;
            for x in 0..self.len() {
                next.adjacency.set(t, x, false);
            }
        }
        Ok(next)
    }

    /// Serializes nodes and link bounds. Adjacency is not written; it is
    /// recomputed from positions on load.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# uavroute topology v1");
        let _ = writeln!(out, "o_min,{}", self.o_min);
        let _ = writeln!(out, "o_max,{}", self.o_max);
        let _ = writeln!(out, "id,x,y,z,attacked");
        for n in &self.nodes {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                n.id, n.position.x, n.position.y, n.position.z, n.attacked as u8
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut o_min = None;
        let mut o_max = None;
        let mut saw_header = false;
        let mut nodes = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: line_no, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| err(format!("bad number {s:?}: {e}")))
            };
            match fields[0] {
                "o_min" if fields.len() == 2 => o_min = Some(num(fields[1])?),
                "o_max" if fields.len() == 2 => o_max = Some(num(fields[1])?),
                "id" => saw_header = true,
                _ if saw_header => {
                    if fields.len() != 5 {
                        return Err(err(format!("expected 5 fields, got {}", fields.len())));
                    }
                    let id = fields[0]
                        .parse::<usize>()
                        .map_err(|e| err(format!("bad id {:?}: {e}", fields[0])))?;
                    let attacked = match fields[4] {
                        "0" | "false" => false,
                        "1" | "true" => true,
                        other => return Err(err(format!("bad attacked flag {other:?}"))),
                    };
                    nodes.push(UavNode {
                        id,
                        position: Position::new(num(fields[1])?, num(fields[2])?, num(fields[3])?),
                        attacked,
                    });
                }
                other => return Err(err(format!("unexpected record {other:?}"))),
            }
        }
        let missing = |what: &str| Error::Parse {
            line: 0,
            msg: format!("missing {what}"),
        };
        let o_min = o_min.ok_or_else(|| missing("o_min"))?;
        let o_max = o_max.ok_or_else(|| missing("o_max"))?;
        Self::from_nodes(nodes, o_min, o_max)
    }
}

/// Parameters for uniform random placement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyParams {
    pub n: usize,
    /// Horizontal extent `(width, depth)` in meters.
    pub area: (f64, f64),
    /// Altitude range in meters.
    pub heights: (f64, f64),
    pub o_min: f64,
    pub o_max: f64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
}

fn default_retries() -> usize {
    1000
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            n: 20,
            area: (1000.0, 1000.0),
            heights: (130.0, 140.0),
            o_min: 30.0,
            o_max: 500.0,
            max_retries: default_retries(),
        }
    }
}

impl TopologyParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("need at least 2 nodes, got {}", self.n)));
        }
        if !(self.area.0 >= 0.0 && self.area.1 >= 0.0) {
            return Err(Error::Config("area extents must be non-negative".into()));
        }
        if !(self.heights.0 <= self.heights.1) {
            return Err(Error::Config("height range must be ordered".into()));
        }
        if self.max_retries == 0 {
            return Err(Error::Config("max_retries must be positive".into()));
        }
        check_bounds(self.o_min, self.o_max)
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Places `n` nodes uniformly at random and resamples until the link graph is
/// connected. Deterministic for a given seed.
pub fn generate_random_topology(params: &TopologyParams, seed: u64) -> Result<UavNetwork> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..params.max_retries {
        let positions: Vec<Position> = (0..params.n)
            .map(|_| {
                Position::new(
                    uniform(&mut rng, 0.0, params.area.0),
                    uniform(&mut rng, 0.0, params.area.1),
                    uniform(&mut rng, params.heights.0, params.heights.1),
                )
            })
            .collect();
        let net = UavNetwork::from_positions(&positions, params.o_min, params.o_max)?;
        if net.is_connected() {
            return Ok(net);
        }
    }
    Err(Error::Connectivity(params.max_retries))
}
