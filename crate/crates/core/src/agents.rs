//! Tabular learners: Q-learning, Sarsa and backward-view Sarsa(λ) with
//! accumulating eligibility traces.
//!
//! All three share one episode loop and one ε-greedy selector, so on a shared
//! random stream they consume random numbers identically and differ only in
//! how the action-value table is updated.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{RoutingEnv, RoutingState, StepStatus};
use crate::error::{Error, Result};
use crate::topology::UavNetwork;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub q_init: f64,
    #[serde(default = "default_prune")]
    pub trace_prune: f64,
}

fn default_prune() -> f64 {
    1e-8
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            gamma: 0.9,
            lambda: 0.9,
            epsilon: 0.001,
            q_init: 0.0,
            trace_prune: default_prune(),
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("learner: {what}")));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        // λ = 0 is admitted so Sarsa(0) can be checked against plain Sarsa.
        if !(self.lambda >= 0.0 && self.lambda < 1.0) {
            return bad("lambda must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !self.q_init.is_finite() {
            return bad("q_init must be finite");
        }
        if !(self.trace_prune >= 0.0) {
            return bad("trace_prune must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    QLearning,
    Sarsa,
    SarsaLambda,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::QLearning => "q_learning",
            Self::Sarsa => "sarsa",
            Self::SarsaLambda => "sarsa_lambda",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q_learning" => Ok(Self::QLearning),
            "sarsa" => Ok(Self::Sarsa),
            "sarsa_lambda" => Ok(Self::SarsaLambda),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Action values indexed by `(current node, next node)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(n: usize, init: f64) -> Self {
        Self {
            n,
            values: vec![init; n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n + a] = v;
    }

    #[inline]
    fn add(&mut self, s: usize, a: usize, dv: f64) {
        self.values[s * self.n + a] += dv;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest value over `actions`, or `None` when there are none.
    pub fn max_over(&self, s: usize, actions: &[usize]) -> Option<f64> {
        actions
            .iter()
            .map(|&a| self.get(s, a))
            .reduce(f64::max)
    }

    /// Highest-valued action, ties to the lowest id.
    pub fn greedy(&self, s: usize, actions: &[usize]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &a in actions {
            let v = self.get(s, a);
            best = match best {
                Some((b, bv)) if bv > v || (bv == v && b < a) => Some((b, bv)),
                _ => Some((a, v)),
            };
        }
        best.map(|(a, _)| a)
    }

    /// Comma-separated matrix with node-id headers. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state");
        for a in 0..self.n {
            let _ = write!(out, ",{a}");
        }
        out.push('\n');
        for s in 0..self.n {
            let _ = write!(out, "{s}");
            for a in 0..self.n {
                let _ = write!(out, ",{}", self.get(s, a));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty Q-table".into(),
        })?;
        let n = header.split(',').count() - 1;
        let mut table = Self::new(n, 0.0);
        let mut rows = 0;
        for (idx, line) in lines {
            let err = |msg: String| Error::Parse { line: idx + 1, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != n + 1 {
                return Err(err(format!("expected {} fields, got {}", n + 1, fields.len())));
            }
            let s: usize = fields[0].parse().map_err(|e| err(format!("bad state id: {e}")))?;
            if s >= n {
                return Err(err(format!("state id {s} out of range")));
            }
            for (a, f) in fields[1..].iter().enumerate() {
                let v: f64 = f.parse().map_err(|e| err(format!("bad value {f:?}: {e}")))?;
                table.set(s, a, v);
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Parse {
                line: 0,
                msg: format!("expected {n} rows, got {rows}"),
            });
        }
        Ok(table)
    }
}

/// Sparse accumulating eligibility traces.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceTable {
    traces: BTreeMap<(usize, usize), f64>,
    prune: f64,
}

impl TraceTable {
    pub fn new(prune: f64) -> Self {
        Self {
            traces: BTreeMap::new(),
            prune,
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.traces.get(&(s, a)).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn clear(&mut self) {
        self.traces.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.traces.iter().map(|(&k, &v)| (k, v))
    }

    /// `E(s, a) += 1`.
    pub fn visit(&mut self, s: usize, a: usize) {
        *self.traces.entry((s, a)).or_insert(0.0) += 1.0;
    }

    /// Multiplies every trace by `factor`, dropping those below the prune
    /// threshold.
    pub fn decay(&mut self, factor: f64) {
        let prune = self.prune;
        self.traces.retain(|_, e| {
            *e *= factor;
            *e >= prune && *e > 0.0
        });
    }

    /// `Q += alpha * delta * E` for every traced pair, then `E *= gamma * lambda`.
    pub fn sweep(&mut self, q: &mut QTable, alpha: f64, delta: f64, decay: f64) {
        for (&(s, a), &e) in &self.traces {
            q.add(s, a, alpha * delta * e);
        }
        self.decay(decay);
    }
}

/// Decays all traces once and then credits the visited pair.
pub fn trace_visit(traces: &mut TraceTable, s: usize, a: usize, gamma: f64, lambda: f64) {
    traces.decay(gamma * lambda);
    traces.visit(s, a);
}

/// With probability `epsilon` a uniform valid action, otherwise the greedy one.
pub fn epsilon_greedy<R: Rng + ?Sized>(
    q: &QTable,
    s: usize,
    valid: &[usize],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if valid.is_empty() {
        return Err(Error::DeadEnd(s));
    }
    if rng.random::<f64>() < epsilon {
        Ok(valid[rng.random_range(0..valid.len())])
    } else {
        Ok(q.greedy(s, valid).expect("non-empty"))
    }
}

/// `r + gamma * q_next - q_curr`.
pub fn td_error(reward: f64, q_next: f64, q_curr: f64, gamma: f64) -> f64 {
    reward + gamma * q_next - q_curr
}

/// On-policy one-step update. `next` is `(s', a')`, or `None` when terminal.
pub fn sarsa_step_update(
    q: &mut QTable,
    s: usize,
    a: usize,
    reward: f64,
    next: Option<(usize, usize)>,
    alpha: f64,
    gamma: f64,
) -> f64 {
    let q_next = next.map_or(0.0, |(s2, a2)| q.get(s2, a2));
    let delta = td_error(reward, q_next, q.get(s, a), gamma);
    q.add(s, a, alpha * delta);
    delta
}

/// Off-policy one-step update bootstrapping from the best valid action at
/// `s'`. `next` is `(s', valid actions at s')`, or `None` when terminal.
pub fn q_learning_step_update(
    q: &mut QTable,
    s: usize,
    a: usize,
    reward: f64,
    next: Option<(usize, &[usize])>,
    alpha: f64,
    gamma: f64,
) -> f64 {
    let q_next = next
        .and_then(|(s2, valid)| q.max_over(s2, valid))
        .unwrap_or(0.0);
    let delta = td_error(reward, q_next, q.get(s, a), gamma);
    q.add(s, a, alpha * delta);
    delta
}

/// What happened during one training episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub path: Vec<usize>,
    pub rewards: Vec<f64>,
    pub hop_delays: Vec<f64>,
    pub queues: Vec<u32>,
    pub status: StepStatus,
}

impl EpisodeRecord {
    pub fn steps(&self) -> usize {
        self.rewards.len()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// A learner owning its action-value table and trace memory.
#[derive(Clone, Debug)]
pub struct Agent {
    pub algorithm: Algorithm,
    pub config: LearnerConfig,
    pub q: QTable,
    pub traces: TraceTable,
}

impl Agent {
    pub fn new(algorithm: Algorithm, config: LearnerConfig, n: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            algorithm,
            q: QTable::new(n, config.q_init),
            traces: TraceTable::new(config.trace_prune),
            config,
        })
    }

    fn update(&mut self, s: usize, a: usize, reward: f64, next: Option<(usize, usize)>, valid_next: &[usize]) {
        let LearnerConfig {
            alpha,
            gamma,
            lambda,
            ..
        } = self.config;
        match self.algorithm {
            Algorithm::Sarsa => {
                sarsa_step_update(&mut self.q, s, a, reward, next, alpha, gamma);
            }
            Algorithm::QLearning => {
                let next = next.map(|(s2, _)| (s2, valid_next));
                q_learning_step_update(&mut self.q, s, a, reward, next, alpha, gamma);
            }
            Algorithm::SarsaLambda => {
                let q_next = next.map_or(0.0, |(s2, a2)| self.q.get(s2, a2));
                let delta = td_error(reward, q_next, self.q.get(s, a), gamma);
                self.traces.visit(s, a);
                self.traces.sweep(&mut self.q, alpha, delta, gamma * lambda);
            }
        }
    }

    /// Runs one episode with ε-greedy behaviour, learning after every step.
    pub fn run_episode<R: Rng + ?Sized>(
        &mut self,
        env: &mut RoutingEnv<'_>,
        rng: &mut R,
    ) -> Result<EpisodeRecord> {
        self.traces.clear();
        let eps = self.config.epsilon;
        let mut state = env.reset(rng)?;
        let mut valid = env.valid_actions(state);
        let mut action = epsilon_greedy(&self.q, state.current, &valid, eps, rng)?;
        let mut record = EpisodeRecord {
            path: vec![state.current],
            rewards: Vec::new(),
            hop_delays: Vec::new(),
            queues: env.queues().to_vec(),
            status: StepStatus::Continue,
        };
        loop {
            let out = env.step(action)?;
            let next: RoutingState = out.next_state;
            record.path.push(next.current);
            record.rewards.push(out.reward);
            record.hop_delays.push(out.hop_delay);
            record.status = out.status;
            if out.terminal() {
                self.update(state.current, action, out.reward, None, &[]);
                break;
            }
            valid = env.valid_actions(next);
            let next_action = epsilon_greedy(&self.q, next.current, &valid, eps, rng)?;
            self.update(
                state.current,
                action,
                out.reward,
                Some((next.current, next_action)),
                &valid,
            );
            if out.done() {
                break;
            }
            state = next;
            action = next_action;
        }
        Ok(record)
    }
}

/// One Sarsa(λ) episode on `env`, updating `agent` in place.
pub fn sarsa_lambda_episode<R: Rng + ?Sized>(
    agent: &mut Agent,
    env: &mut RoutingEnv<'_>,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    debug_assert_eq!(agent.algorithm, Algorithm::SarsaLambda);
    agent.run_episode(env, rng)
}

/// Result of following the greedy policy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GreedyPath {
    Reached(Vec<usize>),
    Cycle(Vec<usize>),
    DeadEnd(Vec<usize>),
    StepLimit(Vec<usize>),
}

impl GreedyPath {
    pub fn path(&self) -> &[usize] {
        match self {
            Self::Reached(p) | Self::Cycle(p) | Self::DeadEnd(p) | Self::StepLimit(p) => p,
        }
    }

    pub fn reached(&self) -> Option<&[usize]> {
        match self {
            Self::Reached(p) => Some(p),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Reached(_) => "reached",
            Self::Cycle(_) => "cycle",
            Self::DeadEnd(_) => "dead_end",
            Self::StepLimit(_) => "step_limit",
        }
    }
}

/// Follows argmax actions from `source` until `dest`, a dead end, a revisit
/// or `max_steps` hops.
pub fn greedy_policy_path(
    q: &QTable,
    network: &UavNetwork,
    source: usize,
    dest: usize,
    max_steps: usize,
) -> GreedyPath {
    let mut path = vec![source];
    let mut visited = vec![false; network.len()];
    visited[source] = true;
    let mut current = source;
    while current != dest {
        if path.len() > max_steps {
            return GreedyPath::StepLimit(path);
        }
        let Some(next) = q.greedy(current, &network.neighbors(current)) else {
            return GreedyPath::DeadEnd(path);
        };
        path.push(next);
        if visited[next] {
            return GreedyPath::Cycle(path);
        }
        visited[next] = true;
        current = next;
    }
    GreedyPath::Reached(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table(n: usize, entries: &[(usize, usize, f64)]) -> QTable {
        let mut q = QTable::new(n, 0.0);
        for &(s, a, v) in entries {
            q.set(s, a, v);
        }
        q
    }

    #[test]
    fn greedy_selection() {
        let q = table(10, &[(0, 3, -1.0), (0, 5, -0.5), (0, 9, -2.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(epsilon_greedy(&q, 0, &[3, 5, 9], 0.0, &mut rng).unwrap(), 5);
        let flat = QTable::new(10, 0.0);
        assert_eq!(epsilon_greedy(&flat, 0, &[9, 3, 5], 0.0, &mut rng).unwrap(), 3);
        assert!(matches!(
            epsilon_greedy(&flat, 4, &[], 0.5, &mut rng),
            Err(Error::DeadEnd(4))
        ));
    }

    #[test]
    fn full_exploration_is_uniform() {
        let q = table(10, &[(0, 5, 1.0)]);
        let valid = [3, 5, 9];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 10_000;
        let mut counts = [0usize; 10];
        for _ in 0..draws {
            counts[epsilon_greedy(&q, 0, &valid, 1.0, &mut rng).unwrap()] += 1;
        }
        let p = 1.0 / 3.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for a in valid {
            let dev = (counts[a] as f64 - draws as f64 * p).abs();
            assert!(dev < 3.0 * sigma, "action {a}: {} draws", counts[a]);
        }
    }

    #[test]
    fn td_error_examples() {
        assert_eq!(td_error(-0.5, 0.0, 0.0, 0.9), -0.5);
        assert_eq!(td_error(0.0, -2.0 / 0.9, -2.0, 0.9), 0.0);
        assert!((td_error(-6.87e-3, -0.01, 0.0, 0.9) + 1.587e-2).abs() < 1e-15);
    }

    #[test]
    fn sarsa_update_examples() {
        let mut q = table(3, &[(0, 1, -1.0), (1, 2, -1.0 / 0.9)]);
        let before = q.clone();
        sarsa_step_update(&mut q, 0, 1, 0.0, Some((1, 2)), 0.5, 0.9);
        assert!((q.get(0, 1) - before.get(0, 1)).abs() < 1e-15);

        let mut q = QTable::new(3, 0.0);
        sarsa_step_update(&mut q, 0, 1, -0.5, None, 1.0, 0.9);
        assert_eq!(q.get(0, 1), -0.5);
        assert_eq!(q.values().iter().filter(|v| **v != 0.0).count(), 1);

        let mut q = table(3, &[(1, 2, -0.01)]);
        let delta = sarsa_step_update(&mut q, 0, 1, -6.87e-3, Some((1, 2)), 0.01, 0.9);
        assert!((delta + 1.587e-2).abs() < 1e-15);
        assert!((q.get(0, 1) + 1.587e-4).abs() < 1e-15);
    }

    #[test]
    fn q_learning_update_examples() {
        let mut a = QTable::new(3, 0.0);
        let mut b = QTable::new(3, 0.0);
        q_learning_step_update(&mut a, 0, 1, -0.3, None, 0.1, 0.9);
        sarsa_step_update(&mut b, 0, 1, -0.3, None, 0.1, 0.9);
        assert_eq!(a, b);

        let mut a = table(3, &[(1, 2, -0.7)]);
        let mut b = a.clone();
        q_learning_step_update(&mut a, 0, 1, -0.3, Some((1, &[2])), 0.1, 0.9);
        sarsa_step_update(&mut b, 0, 1, -0.3, Some((1, 2)), 0.1, 0.9);
        assert_eq!(a, b);

        let mut q = table(4, &[(1, 2, -1.0), (1, 3, -0.2)]);
        let delta = q_learning_step_update(&mut q, 0, 1, 0.0, Some((1, &[2, 3])), 1.0, 0.5);
        assert_eq!(delta, -0.1);
    }

    #[test]
    fn trace_examples() {
        let mut e = TraceTable::new(1e-8);
        e.visit(2, 3);
        assert_eq!(e.get(2, 3), 1.0);
        trace_visit(&mut e, 0, 1, 0.9, 0.9);
        assert!((e.get(2, 3) - 0.81).abs() < 1e-15);
        trace_visit(&mut e, 2, 3, 1.0, 1.0);
        assert!((e.get(2, 3) - 1.81).abs() < 1e-15);
    }

    #[test]
    fn traces_below_threshold_are_pruned() {
        let mut e = TraceTable::new(1e-8);
        e.visit(0, 1);
        let mut decays = 0;
        while !e.is_empty() {
            e.decay(0.81);
            decays += 1;
        }
        assert_eq!(decays, 88);
        e.visit(0, 1);
        e.decay(0.0);
        assert!(e.is_empty());
    }

    #[test]
    fn greedy_path_on_untrained_triangle_cycles() {
        use crate::topology::{Position, UavNetwork};
        let p = [
            Position::new(0., 0., 130.),
            Position::new(200., 0., 130.),
            Position::new(100., 150., 130.),
        ];
        let net = UavNetwork::from_positions(&p, 30.0, 500.0).unwrap();
        let q = QTable::new(3, 0.0);
        assert_eq!(greedy_policy_path(&q, &net, 0, 2, 10), GreedyPath::Cycle(vec![0, 1, 0]));
        let mut q = q;
        q.set(0, 1, -1.0);
        assert_eq!(greedy_policy_path(&q, &net, 0, 2, 10), GreedyPath::Reached(vec![0, 2]));
        let cut = net.apply_attack(&[1, 2], &[]).unwrap();
        assert_eq!(greedy_policy_path(&q, &cut, 0, 2, 10), GreedyPath::DeadEnd(vec![0]));
    }

    #[test]
    fn qtable_csv_round_trip() {
        let q = table(3, &[(0, 1, -1.2345678901234567e-5), (2, 0, 0.1 + 0.2)]);
        assert_eq!(QTable::from_csv(&q.to_csv()).unwrap(), q);
        assert!(QTable::from_csv("state,0,1\n0,1,2\n").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(LearnerConfig::default().validate().is_ok());
        let bad = LearnerConfig {
            gamma: 1.0,
            ..LearnerConfig::default()
        };
        assert!(bad.validate().is_err());
        let zero_lambda = LearnerConfig {
            lambda: 0.0,
            ..LearnerConfig::default()
        };
        assert!(zero_lambda.validate().is_ok());
    }
}
