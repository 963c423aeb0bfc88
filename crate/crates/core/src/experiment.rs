//! Experiment orchestration: scenarios, training runs with attack schedules,
//! evaluation against an exact shortest-delay oracle, and the tables behind
//! the reward/step curves, the delay-vs-size sweep and the hop-count bins.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{greedy_policy_path, Agent, Algorithm, GreedyPath, LearnerConfig, QTable};
use crate::environment::{RewardMode, RoutingEnv, ScenarioSpec, StepStatus};
use crate::error::{Error, Result};
use crate::linkbudget::{hop_delay_on, RadioParams};
use crate::nirm::{node_importance, select_targets, AttackModel};
use crate::topology::{generate_random_topology, TopologyParams, UavNetwork};

/// Independent random streams derived from one seed.
const STREAM_ENDPOINTS: u64 = 1;
const STREAM_TRAINING: u64 = 2;
const STREAM_ATTACKS: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackEvent {
    /// Attack lands before this episode starts.
    pub episode: usize,
    pub model: AttackModel,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentVariant {
    pub name: String,
    pub algorithm: Algorithm,
    /// Overrides `learner.lambda` for this variant.
    #[serde(default)]
    pub lambda: Option<f64>,
}

impl AgentVariant {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            name: algorithm.as_str().to_string(),
            algorithm,
            lambda: None,
        }
    }

    pub fn learner(&self, base: &LearnerConfig) -> LearnerConfig {
        LearnerConfig {
            lambda: self.lambda.unwrap_or(base.lambda),
            ..base.clone()
        }
    }
}

fn default_queue_range() -> (u32, u32) {
    (1, 5)
}
fn default_reward_scale() -> f64 {
    -100.0
}
fn default_window() -> usize {
    50
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub agents: Vec<AgentVariant>,
    #[serde(default)]
    pub topology: TopologyParams,
    #[serde(default)]
    pub radio: RadioParams,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default = "default_queue_range")]
    pub queue_range: (u32, u32),
    #[serde(default)]
    pub attacks: Vec<AttackEvent>,
    #[serde(default)]
    pub reward_mode: RewardMode,
    #[serde(default = "default_reward_scale")]
    pub reward_scale: f64,
    /// Defaults to four times the node count.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Tolerable per-hop delay in seconds; unbounded when absent.
    #[serde(default)]
    pub max_hop_delay: Option<f64>,
    #[serde(default)]
    pub dead_end_penalty: Option<f64>,
    #[serde(default = "default_window")]
    pub smoothing_window: usize,
    /// Frozen per-node queue used when evaluating greedy paths. Defaults to
    /// the midpoint of `queue_range`.
    #[serde(default)]
    pub eval_queue: Option<u32>,
    /// Network sizes for the delay sweep. Empty means only `topology.n`.
    #[serde(default)]
    pub node_counts: Vec<usize>,
    /// Source and destination are never attack targets.
    #[serde(default = "default_true")]
    pub protect_endpoints: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            seeds: vec![1],
            agents: vec![
                AgentVariant::new(Algorithm::SarsaLambda),
                AgentVariant::new(Algorithm::Sarsa),
                AgentVariant::new(Algorithm::QLearning),
            ],
            topology: TopologyParams::default(),
            radio: RadioParams::default(),
            learner: LearnerConfig::default(),
            queue_range: default_queue_range(),
            attacks: vec![AttackEvent {
                episode: 500,
                model: AttackModel::Deliberate,
                count: 1,
            }],
            reward_mode: RewardMode::default(),
            reward_scale: default_reward_scale(),
            max_steps: None,
            max_hop_delay: None,
            dead_end_penalty: None,
            smoothing_window: default_window(),
            eval_queue: None,
            node_counts: Vec::new(),
            protect_endpoints: true,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                line,
                msg: e.message().to_string(),
            }
        })?;
        // An omitted schedule means one deliberate hit halfway through;
        // `attacks = []` means none.
        let listed = text
            .parse::<toml::Table>()
            .map(|t| t.contains_key("attacks"))
            .unwrap_or(true);
        if !listed {
            cfg.attacks = vec![AttackEvent {
                episode: cfg.episodes / 2,
                model: AttackModel::Deliberate,
                count: 1,
            }];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.episodes == 0 {
            return bad("episodes must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.agents.is_empty() {
            return bad("at least one agent variant is required".into());
        }
        for w in self.attacks.windows(2) {
            if w[1].episode <= w[0].episode {
                return bad("attack episodes must be strictly increasing".into());
            }
        }
        if let Some(a) = self.attacks.iter().find(|a| a.episode >= self.episodes) {
            return bad(format!("attack at episode {} is outside the run", a.episode));
        }
        if self.queue_range.0 > self.queue_range.1 {
            return bad("queue_range must be ordered".into());
        }
        if self.smoothing_window == 0 {
            return bad("smoothing_window must be positive".into());
        }
        if !(self.reward_scale <= 0.0) {
            return bad("reward_scale must be non-positive".into());
        }
        self.topology.validate()?;
        self.radio.validate()?;
        for v in &self.agents {
            v.learner(&self.learner).validate()?;
        }
        if self.node_counts.iter().any(|&n| n < 2) {
            return bad("node_counts entries must be at least 2".into());
        }
        Ok(())
    }

    pub fn eval_queue(&self) -> u32 {
        self.eval_queue
            .unwrap_or((self.queue_range.0 + self.queue_range.1) / 2)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    fn sizes(&self) -> Vec<usize> {
        let mut sizes = self.node_counts.clone();
        if !sizes.contains(&self.topology.n) {
            sizes.push(self.topology.n);
        }
        sizes.sort_unstable();
        sizes
    }
}

/// Builds the routing problem for `seed` on an `n`-node network: a connected
/// random topology and a random source/destination pair, preferring pairs
/// that are not directly linked.
pub fn build_scenario(config: &ExperimentConfig, n: usize, seed: u64) -> Result<ScenarioSpec> {
    let params = TopologyParams {
        n,
        ..config.topology.clone()
    };
    let network = generate_random_topology(&params, seed)?;
    let mut rng = stream(seed, STREAM_ENDPOINTS);
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s != d && !network.is_linked(s, d) {
                pairs.push((s, d));
            }
        }
    }
    let (source, dest) = match pairs.choose(&mut rng) {
        Some(&p) => p,
        None => {
            let s = rng.random_range(0..n);
            let d = (s + rng.random_range(1..n)) % n;
            (s, d)
        }
    };
    Ok(scenario_on(config, network, source, dest))
}

/// Wraps an existing network in a scenario using the config's settings.
pub fn scenario_on(config: &ExperimentConfig, network: UavNetwork, source: usize, dest: usize) -> ScenarioSpec {
    let n = network.len();
    let mut spec = ScenarioSpec::new(network, source, dest, config.radio.clone());
    spec.queue_range = config.queue_range;
    spec.max_steps = config.max_steps.unwrap_or(4 * n);
    spec.reward_scale = config.reward_scale;
    spec.reward_mode = config.reward_mode;
    spec.max_hop_delay = config.max_hop_delay.unwrap_or(f64::INFINITY);
    spec.dead_end_penalty = config.dead_end_penalty;
    spec
}

/// Cost of `path` as the learner sees it: all hop delays, or all but the hop
/// into `dest` in literal mode. Summed left to right.
pub fn mode_cost(
    network: &UavNetwork,
    radio: &RadioParams,
    queues: &[u32],
    path: &[usize],
    dest: usize,
    mode: RewardMode,
) -> Result<f64> {
    let mut cost = 0.0;
    for w in path.windows(2) {
        let hop = hop_delay_on(network, radio, queues, w[0], w[1])?;
        if !(mode == RewardMode::Literal && w[1] == dest) {
            cost += hop;
        }
    }
    Ok(cost)
}

#[derive(Copy, Clone, PartialEq)]
struct Frontier {
    cost: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact minimum-cost route by Dijkstra over hop delays with frozen queues.
/// In literal mode links into the destination cost nothing.
pub fn shortest_delay_oracle(
    network: &UavNetwork,
    radio: &RadioParams,
    queues: &[u32],
    source: usize,
    dest: usize,
    mode: RewardMode,
) -> Result<(Vec<usize>, f64)> {
    let n = network.len();
    if source >= n {
        return Err(Error::NodeOutOfRange(source));
    }
    if dest >= n {
        return Err(Error::NodeOutOfRange(dest));
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Frontier {
        cost: 0.0,
        node: source,
    });
    while let Some(Frontier { cost, node }) = heap.pop() {
        if cost > dist[node] {
            continue;
        }
        if node == dest {
            break;
        }
        for next in network.neighbors(node) {
            let w = if mode == RewardMode::Literal && next == dest {
                0.0
            } else {
                hop_delay_on(network, radio, queues, node, next)?
            };
            let c = cost + w;
            if c < dist[next] {
                dist[next] = c;
                prev[next] = node;
                heap.push(Frontier { cost: c, node: next });
            }
        }
    }
    if !dist[dest].is_finite() {
        return Err(Error::Unreachable {
            origin: source,
            dest,
        });
    }
    let mut path = vec![dest];
    while *path.last().unwrap() != source {
        path.push(prev[*path.last().unwrap()]);
    }
    path.reverse();
    Ok((path, dist[dest]))
}

/// Greedy-path quality on a frozen-queue instance of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub outcome: String,
    pub path: Vec<usize>,
    pub converged: bool,
    /// End-to-end delay over all hops, seconds.
    pub delay: Option<f64>,
    /// Cost in the scenario's reward mode.
    pub cost: Option<f64>,
    pub distance: Option<f64>,
    pub hops: usize,
    pub oracle_path: Vec<usize>,
    pub oracle_cost: f64,
    pub regret: Option<f64>,
    /// Hops slower than the tolerable per-hop delay.
    pub delay_violations: usize,
    /// Hops outside the link distance bounds.
    pub distance_violations: usize,
    pub endpoints_ok: bool,
}

/// Extracts the greedy path from `q` and scores it against the oracle, with
/// every node's queue frozen at `queue`.
pub fn evaluate(q: &QTable, spec: &ScenarioSpec, queue: u32) -> Result<Evaluation> {
    let net = &spec.network;
    let queues = vec![queue; net.len()];
    let (oracle_path, oracle_cost) =
        shortest_delay_oracle(net, &spec.radio, &queues, spec.source, spec.dest, spec.reward_mode)?;
    let greedy = greedy_policy_path(q, net, spec.source, spec.dest, spec.max_steps);
    let mut eval = Evaluation {
        outcome: greedy.label().to_string(),
        path: greedy.path().to_vec(),
        converged: false,
        delay: None,
        cost: None,
        distance: None,
        hops: greedy.path().len() - 1,
        oracle_path,
        oracle_cost,
        regret: None,
        delay_violations: 0,
        distance_violations: 0,
        endpoints_ok: false,
    };
    let GreedyPath::Reached(path) = greedy else {
        return Ok(eval);
    };
    let mut delay = 0.0;
    let mut distance = 0.0;
    for w in path.windows(2) {
        let hop = hop_delay_on(net, &spec.radio, &queues, w[0], w[1])?;
        let d = net.distance(w[0], w[1]);
        delay += hop;
        distance += d;
        if hop > spec.max_hop_delay {
            eval.delay_violations += 1;
        }
        if !(net.o_min()..=net.o_max()).contains(&d) {
            eval.distance_violations += 1;
        }
    }
    let cost = mode_cost(net, &spec.radio, &queues, &path, spec.dest, spec.reward_mode)?;
    eval.converged = true;
    eval.endpoints_ok = path.first() == Some(&spec.source) && path.last() == Some(&spec.dest);
    eval.delay = Some(delay);
    eval.cost = Some(cost);
    eval.distance = Some(distance);
    eval.regret = Some(cost - oracle_cost);
    Ok(eval)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub agent: String,
    pub seed: u64,
    pub total_reward: f64,
    pub steps: usize,
    pub path: Vec<usize>,
    pub rewards: Vec<f64>,
    pub queues: Vec<u32>,
    pub path_distance: f64,
    pub path_delay: f64,
    pub status: StepStatus,
}

impl EpisodeLog {
    pub fn truncated(&self) -> bool {
        self.status == StepStatus::Truncated
    }

    pub fn dead_end(&self) -> bool {
        self.status == StepStatus::DeadEnd
    }

    pub fn completed(&self) -> bool {
        self.status == StepStatus::Arrived
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackRecord {
    pub episode: usize,
    pub targets: Vec<usize>,
}

/// Greedy evaluation taken just before an attack lands (or at the end).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Checkpoint {
    pub episode: usize,
    pub evaluation: Evaluation,
}

#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub agent: String,
    pub seed: u64,
    pub logs: Vec<EpisodeLog>,
    pub attacks: Vec<AttackRecord>,
    /// One per attack, then the final one.
    pub checkpoints: Vec<Checkpoint>,
    pub q: QTable,
    /// Scenario as it stands after the last attack.
    pub scenario: ScenarioSpec,
}

impl TrainingRun {
    pub fn final_evaluation(&self) -> &Evaluation {
        &self.checkpoints.last().expect("final checkpoint").evaluation
    }

    /// Evaluation just before the first attack, or the final one when the
    /// schedule is empty.
    pub fn original_evaluation(&self) -> &Evaluation {
        &self.checkpoints[0].evaluation
    }
}

/// Trains `variant` on `scenario` for `config.episodes` episodes, applying
/// the attack schedule as it comes due. The Q-table is kept across attacks.
pub fn train_on(
    config: &ExperimentConfig,
    variant: &AgentVariant,
    scenario: ScenarioSpec,
    seed: u64,
) -> Result<TrainingRun> {
    let mut spec = scenario;
    let n = spec.network.len();
    let mut agent = Agent::new(variant.algorithm, variant.learner(&config.learner), n)?;
    let mut rng = stream(seed, STREAM_TRAINING);
    let mut attack_rng = stream(seed, STREAM_ATTACKS);
    let eval_queue = config.eval_queue();
    let mut run = TrainingRun {
        agent: variant.name.clone(),
        seed,
        logs: Vec::with_capacity(config.episodes),
        attacks: Vec::new(),
        checkpoints: Vec::new(),
        q: QTable::new(0, 0.0),
        scenario: spec.clone(),
    };
    let mut schedule = config.attacks.iter().peekable();
    for episode in 0..config.episodes {
        while let Some(event) = schedule.next_if(|a| a.episode == episode) {
            run.checkpoints.push(Checkpoint {
                episode,
                evaluation: evaluate(&agent.q, &spec, eval_queue)?,
            });
            let report = node_importance(&spec.network);
            let protected: &[usize] = if config.protect_endpoints {
                &[spec.source, spec.dest]
            } else {
                &[]
            };
            let targets =
                select_targets(&report, event.count, event.model, protected, attack_rng.random())?;
            spec.network = spec.network.apply_attack(&targets, &spec.protected())?;
            run.attacks.push(AttackRecord { episode, targets });
            if !spec.network.has_path(spec.source, spec.dest) {
                return Err(Error::Unreachable {
                    origin: spec.source,
                    dest: spec.dest,
                });
            }
        }
        let mut env = RoutingEnv::new(&spec)?;
        let record = agent.run_episode(&mut env, &mut rng)?;
        let path_distance = record
            .path
            .windows(2)
            .map(|w| spec.network.distance(w[0], w[1]))
            .sum();
        run.logs.push(EpisodeLog {
            episode,
            agent: variant.name.clone(),
            seed,
            total_reward: record.total_reward(),
            steps: record.steps(),
            path_delay: record.hop_delays.iter().sum(),
            path: record.path,
            rewards: record.rewards,
            queues: record.queues,
            path_distance,
            status: record.status,
        });
    }
    run.checkpoints.push(Checkpoint {
        episode: config.episodes,
        evaluation: evaluate(&agent.q, &spec, eval_queue)?,
    });
    run.q = agent.q;
    run.scenario = spec;
    Ok(run)
}

/// Builds the scenario for `seed` at the configured size and trains on it.
pub fn run_training(config: &ExperimentConfig, variant: &AgentVariant, seed: u64) -> Result<TrainingRun> {
    let scenario = build_scenario(config, config.topology.n, seed)?;
    train_on(config, variant, scenario, seed)
}

/// Trailing moving average; the first entries average what is available.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// First index whose value lies within `tolerance` (relative) of the last.
pub fn episodes_to_threshold(smoothed: &[f64], tolerance: f64) -> Option<usize> {
    let last = *smoothed.last()?;
    smoothed
        .iter()
        .position(|&v| (v - last).abs() <= tolerance * last.abs())
}

pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64
}

/// Per-episode mean over runs, for equal-length runs.
fn mean_series(runs: &[&TrainingRun], f: impl Fn(&EpisodeLog) -> f64) -> Vec<f64> {
    let len = runs.iter().map(|r| r.logs.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| runs.iter().map(|r| f(&r.logs[i])).sum::<f64>() / runs.len() as f64)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub agent: String,
    pub episode: usize,
    pub mean_reward: f64,
    pub mean_steps: f64,
    pub smoothed_reward: f64,
    pub smoothed_steps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DelayPoint {
    pub agent: String,
    pub nodes: usize,
    pub runs: usize,
    pub original_delay: f64,
    pub recovery_delay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HopPoint {
    pub agent: String,
    pub hops: usize,
    pub runs: usize,
    pub mean_steps: f64,
    pub mean_distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FigureData {
    pub curves: Vec<CurvePoint>,
    pub delays: Vec<DelayPoint>,
    pub hops: Vec<HopPoint>,
}

fn agent_order(runs: &[TrainingRun]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for r in runs {
        if !names.contains(&r.agent) {
            names.push(r.agent.clone());
        }
    }
    names
}

/// Reward/step curves (mean over seeds plus trailing average) and hop-count
/// bins from runs on one network size.
pub fn aggregate_metrics(runs: &[TrainingRun], window: usize) -> FigureData {
    let mut data = FigureData::default();
    for agent in agent_order(runs) {
        let mine: Vec<&TrainingRun> = runs.iter().filter(|r| r.agent == agent).collect();
        let rewards = mean_series(&mine, |l| l.total_reward);
        let steps = mean_series(&mine, |l| l.steps as f64);
        let sr = moving_average(&rewards, window);
        let ss = moving_average(&steps, window);
        for i in 0..rewards.len() {
            data.curves.push(CurvePoint {
                agent: agent.clone(),
                episode: i,
                mean_reward: rewards[i],
                mean_steps: steps[i],
                smoothed_reward: sr[i],
                smoothed_steps: ss[i],
            });
        }
        let mut bins: Vec<(usize, Vec<&TrainingRun>)> = Vec::new();
        for r in &mine {
            let Some(eval) = r.checkpoints.last().map(|c| &c.evaluation) else {
                continue;
            };
            if !eval.converged {
                continue;
            }
            match bins.iter_mut().find(|(h, _)| *h == eval.hops) {
                Some((_, v)) => v.push(r),
                None => bins.push((eval.hops, vec![r])),
            }
        }
        bins.sort_by_key(|(h, _)| *h);
        for (hops, group) in bins {
            let mean_steps = group
                .iter()
                .map(|r| r.logs.iter().map(|l| l.steps as f64).sum::<f64>() / r.logs.len() as f64)
                .sum::<f64>()
                / group.len() as f64;
            let mean_distance = group
                .iter()
                .map(|r| r.final_evaluation().distance.unwrap_or(0.0))
                .sum::<f64>()
                / group.len() as f64;
            data.hops.push(HopPoint {
                agent: agent.clone(),
                hops,
                runs: group.len(),
                mean_steps,
                mean_distance,
            });
        }
    }
    data
}

/// Mean converged greedy delay before the first attack and at the end, per
/// agent and network size. Runs whose greedy path failed are left out.
pub fn delay_sweep(runs: &[(usize, TrainingRun)]) -> Vec<DelayPoint> {
    let plain: Vec<TrainingRun> = runs.iter().map(|(_, r)| r.clone()).collect();
    let mut sizes: Vec<usize> = runs.iter().map(|(n, _)| *n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut out = Vec::new();
    for agent in agent_order(&plain) {
        for &n in &sizes {
            let pairs: Vec<(f64, f64)> = runs
                .iter()
                .filter(|(m, r)| *m == n && r.agent == agent)
                .filter_map(|(_, r)| Some((r.original_evaluation().delay?, r.final_evaluation().delay?)))
                .collect();
            if pairs.is_empty() {
                continue;
            }
            let k = pairs.len() as f64;
            out.push(DelayPoint {
                agent: agent.clone(),
                nodes: n,
                runs: pairs.len(),
                original_delay: pairs.iter().map(|p| p.0).sum::<f64>() / k,
                recovery_delay: pairs.iter().map(|p| p.1).sum::<f64>() / k,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgentSummary {
    pub agent: String,
    pub seed: u64,
    pub episodes_to_threshold: Option<usize>,
    pub final_smoothed_reward: f64,
    /// Variance of step counts over the final 20% of episodes.
    pub step_variance: f64,
}

/// Convergence summary of one run.
pub fn summarize(run: &TrainingRun, window: usize) -> AgentSummary {
    let rewards: Vec<f64> = run.logs.iter().map(|l| l.total_reward).collect();
    let smoothed = moving_average(&rewards, window);
    let tail = run.logs.len() - run.logs.len() / 5;
    let steps: Vec<f64> = run.logs[tail..].iter().map(|l| l.steps as f64).collect();
    AgentSummary {
        agent: run.agent.clone(),
        seed: run.seed,
        episodes_to_threshold: episodes_to_threshold(&smoothed, 0.05),
        final_smoothed_reward: smoothed.last().copied().unwrap_or(0.0),
        step_variance: variance(&steps),
    }
}

/// Runs every variant on identical seeded scenarios and summarizes each run.
pub fn compare_agents(config: &ExperimentConfig) -> Result<Vec<AgentSummary>> {
    if config.agents.len() < 2 {
        return Err(Error::Config("comparison needs at least two agent variants".into()));
    }
    let mut out = Vec::new();
    for &seed in &config.seeds {
        let scenario = build_scenario(config, config.topology.n, seed)?;
        for v in &config.agents {
            let run = train_on(config, v, scenario.clone(), seed)?;
            out.push(summarize(&run, config.smoothing_window));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunFailure {
    pub agent: String,
    pub nodes: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub crate_version: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub agents: Vec<String>,
    pub node_counts: Vec<usize>,
    pub failures: Vec<RunFailure>,
    pub tables: Vec<String>,
}

/// Everything an experiment produces, as named delimited tables.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub tables: Vec<(String, String)>,
    pub manifest: Manifest,
}

impl ExperimentOutput {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in &self.tables {
            std::fs::write(dir.join(name), body)?;
        }
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), manifest + "\n")?;
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&str> {
        self.tables
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_str())
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("agent,episode,mean_reward,mean_steps,smoothed_reward,smoothed_steps\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            p.agent, p.episode, p.mean_reward, p.mean_steps, p.smoothed_reward, p.smoothed_steps
        );
    }
    s
}

pub fn delays_csv(points: &[DelayPoint]) -> String {
    let mut s = String::from("agent,nodes,runs,original_delay,recovery_delay\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            p.agent, p.nodes, p.runs, p.original_delay, p.recovery_delay
        );
    }
    s
}

pub fn hops_csv(points: &[HopPoint]) -> String {
    let mut s = String::from("agent,hops,runs,mean_steps,mean_distance\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{},{}", p.agent, p.hops, p.runs, p.mean_steps, p.mean_distance);
    }
    s
}

pub fn summaries_csv(rows: &[AgentSummary]) -> String {
    let mut s = String::from("agent,seed,episodes_to_threshold,final_smoothed_reward,step_variance\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.agent,
            r.seed,
            opt(r.episodes_to_threshold),
            r.final_smoothed_reward,
            r.step_variance
        );
    }
    s
}

fn join_path(p: &[usize]) -> String {
    p.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

pub fn episodes_csv(logs: &[EpisodeLog]) -> String {
    let mut s = String::from("agent,seed,episode,total_reward,steps,path,path_distance,path_delay,status\n");
    for l in logs {
        let status = match l.status {
            StepStatus::Continue => "continue",
            StepStatus::Arrived => "arrived",
            StepStatus::DeadEnd => "dead_end",
            StepStatus::Truncated => "truncated",
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            l.agent,
            l.seed,
            l.episode,
            l.total_reward,
            l.steps,
            join_path(&l.path),
            l.path_distance,
            l.path_delay,
            status
        );
    }
    s
}

pub fn evaluations_csv(rows: &[(String, u64, usize, &Checkpoint)]) -> String {
    let mut s = String::from(
        "agent,seed,nodes,episode,outcome,path,hops,delay,cost,distance,oracle_path,oracle_cost,regret,delay_violations,distance_violations\n",
    );
    for (agent, seed, nodes, c) in rows {
        let e = &c.evaluation;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            agent,
            seed,
            nodes,
            c.episode,
            e.outcome,
            join_path(&e.path),
            e.hops,
            opt(e.delay),
            opt(e.cost),
            opt(e.distance),
            join_path(&e.oracle_path),
            e.oracle_cost,
            opt(e.regret),
            e.delay_violations,
            e.distance_violations
        );
    }
    s
}

/// Runs every `(size, seed, variant)` combination on up to `jobs` threads and
/// reduces the results into figure tables. Output is independent of `jobs`.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput> {
    config.validate()?;
    let sizes = config.sizes();
    let mut tasks = Vec::new();
    for &n in &sizes {
        for &seed in &config.seeds {
            for v in &config.agents {
                tasks.push((n, seed, v));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<(usize, u64, &AgentVariant, Result<TrainingRun>)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(n, seed, v)| {
                let run = build_scenario(config, n, seed).and_then(|s| train_on(config, v, s, seed));
                (n, seed, v, run)
            })
            .collect()
    });

    let mut failures = Vec::new();
    let mut sized: Vec<(usize, TrainingRun)> = Vec::new();
    for (n, seed, v, res) in results {
        match res {
            Ok(run) => sized.push((n, run)),
            Err(e) => failures.push(RunFailure {
                agent: v.name.clone(),
                nodes: n,
                seed,
                error: e.to_string(),
            }),
        }
    }
    let main: Vec<TrainingRun> = sized
        .iter()
        .filter(|(n, _)| *n == config.topology.n)
        .map(|(_, r)| r.clone())
        .collect();
    let figs = aggregate_metrics(&main, config.smoothing_window);
    let delays = delay_sweep(&sized);
    let summaries: Vec<AgentSummary> = main
        .iter()
        .map(|r| summarize(r, config.smoothing_window))
        .collect();
    let logs: Vec<EpisodeLog> = main.iter().flat_map(|r| r.logs.iter().cloned()).collect();
    let checkpoints: Vec<(String, u64, usize, &Checkpoint)> = sized
        .iter()
        .flat_map(|(n, r)| r.checkpoints.iter().map(move |c| (r.agent.clone(), r.seed, *n, c)))
        .collect();

    let tables = vec![
        ("fig2_reward_steps.csv".to_string(), curves_csv(&figs.curves)),
        ("fig3_delay_nodes.csv".to_string(), delays_csv(&delays)),
        ("fig4_hops.csv".to_string(), hops_csv(&figs.hops)),
        ("comparison.csv".to_string(), summaries_csv(&summaries)),
        ("episodes.csv".to_string(), episodes_csv(&logs)),
        ("evaluations.csv".to_string(), evaluations_csv(&checkpoints)),
    ];
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config.digest(),
        seeds: config.seeds.clone(),
        episodes: config.episodes,
        agents: config.agents.iter().map(|a| a.name.clone()).collect(),
        node_counts: sizes,
        failures,
        tables: tables.iter().map(|(n, _)| n.clone()).collect(),
    };
    Ok(ExperimentOutput { tables, manifest })
}
