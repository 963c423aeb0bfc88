//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's own formulas.
#![allow(dead_code)]

use uavroute::environment::RewardMode;
use uavroute::experiment::{AgentVariant, AttackEvent, ExperimentConfig};
use uavroute::agents::Algorithm;
use uavroute::nirm::AttackModel;
use uavroute::topology::UavNetwork;

pub const C: f64 = 3.0e8;

/// One-hop delay straight from the radio chain, queue charged at the receiver.
pub fn hop_delay(d: f64, queue: u32, eta_bytes: f64) -> f64 {
    let (f, p, noise, b): (f64, f64, f64, f64) = (2.4e9, 40.0, 4e-13, 4e6);
    let pl = 20.0 * d.log10() + 20.0 * f.log10() - 147.55;
    let snr = p * 10f64.powf(-pl / 10.0) / noise;
    let rate = b * (1.0 + snr).log2();
    d / C + queue as f64 * eta_bytes * 8.0 / rate
}

pub fn edge_cost(net: &UavNetwork, queues: &[u32], i: usize, j: usize, dest: usize, mode: RewardMode) -> f64 {
    if mode == RewardMode::Literal && j == dest {
        0.0
    } else {
        let p = net.nodes();
        let (a, b) = (p[i].position, p[j].position);
        let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt();
        hop_delay(d, queues[j], 512.0)
    }
}

/// All-pairs minimum cost by Floyd-Warshall on live links.
pub fn floyd_cost(net: &UavNetwork, queues: &[u32], s: usize, d: usize, mode: RewardMode) -> Option<f64> {
    let n = net.len();
    let mut dist = vec![vec![f64::INFINITY; n]; n];
    for i in 0..n {
        dist[i][i] = 0.0;
        for j in 0..n {
            if i != j && net.is_linked(i, j) {
                dist[i][j] = edge_cost(net, queues, i, j, d, mode);
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = dist[i][k] + dist[k][j];
                if via < dist[i][j] {
                    dist[i][j] = via;
                }
            }
        }
    }
    dist[s][d].is_finite().then_some(dist[s][d])
}

/// Cost of a walk in the given reward mode, summed hop by hop.
pub fn walk_cost(net: &UavNetwork, queues: &[u32], path: &[usize], dest: usize, mode: RewardMode) -> f64 {
    path.windows(2)
        .map(|w| edge_cost(net, queues, w[0], w[1], dest, mode))
        .sum()
}

/// Exact fraction with a positive denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Frac(pub i128, pub i128);

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

impl Frac {
    pub fn int(v: i128) -> Self {
        Frac(v, 1)
    }
    pub fn new(n: i128, d: i128) -> Self {
        let g = gcd(n, d).max(1);
        let s = if d < 0 { -1 } else { 1 };
        Frac(s * n / g, s * d / g)
    }
    pub fn add(self, o: Frac) -> Frac {
        Frac::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }
    pub fn mul(self, o: Frac) -> Frac {
        Frac::new(self.0 * o.0, self.1 * o.1)
    }
    pub fn to_f64(self) -> f64 {
        self.0 as f64 / self.1 as f64
    }
}

/// Node scores by exhaustive enumeration on a 0/1 matrix, in exact arithmetic.
pub fn brute_force_scores(adj: &[Vec<bool>]) -> Vec<Frac> {
    let n = adj.len();
    let k: Vec<i128> = (0..n)
        .map(|i| (0..n).filter(|&j| adj[i][j]).count() as i128)
        .collect();
    (0..n)
        .map(|i| {
            let mut total = Frac::int(k[i]);
            for j in 0..n {
                if !adj[i][j] {
                    continue;
                }
                let m = (0..n).filter(|&x| x != i && x != j && adj[i][x] && adj[j][x]).count() as i128;
                let z = (k[i] - m - 1) * (k[j] - m - 1);
                let imp = Frac::new(2 * z, m + 2);
                let den = k[i] + k[j] - 2;
                let w = if den == 0 {
                    Frac::int(0)
                } else {
                    imp.mul(Frac::new(den - (k[j] - 1), den))
                };
                total = total.add(w);
            }
            total
        })
        .collect()
}

pub fn connected(adj: &[Vec<bool>]) -> bool {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for v in 0..n {
            if adj[u][v] && !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// Trailing moving average, recomputed from scratch per index.
pub fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

pub fn population_variance(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64
}

pub fn variant(algorithm: Algorithm, lambda: Option<f64>) -> AgentVariant {
    AgentVariant {
        name: algorithm.as_str().to_string(),
        algorithm,
        lambda,
    }
}

/// Ten nodes, every queue held at three packets, every hop charged.
pub fn frozen_ten_node(episodes: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        episodes,
        seeds: (0..20).collect(),
        agents: vec![variant(Algorithm::SarsaLambda, None)],
        attacks: vec![],
        queue_range: (3, 3),
        eval_queue: Some(3),
        reward_mode: RewardMode::FullDelay,
        ..ExperimentConfig::default()
    };
    cfg.topology.n = 10;
    cfg
}

pub fn deliberate_at(episode: usize) -> Vec<AttackEvent> {
    vec![AttackEvent {
        episode,
        model: AttackModel::Deliberate,
        count: 1,
    }]
}
