//! Routing as a Markov decision process.
//!
//! The tabular state is the node currently holding the packet; actions are
//! its live neighbors. Distances and queue lengths enter through the reward,
//! which is the hop delay scaled by a negative constant.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkbudget::{hop_delay_on, RadioParams};
use crate::topology::UavNetwork;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// The hop into the destination earns zero reward.
    #[default]
    Literal,
    /// Every hop, including the last, is penalized by its delay.
    FullDelay,
}

impl std::str::FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(Self::Literal),
            "full_delay" => Ok(Self::FullDelay),
            other => Err(Error::Config(format!("unknown reward mode {other:?}"))),
        }
    }
}

/// Everything that defines one routing problem.
#[derive(Clone, Debug)]
pub struct ScenarioSpec {
    pub network: UavNetwork,
    pub source: usize,
    pub dest: usize,
    pub radio: RadioParams,
    /// Inclusive range of queued packets sampled per node and episode.
    pub queue_range: (u32, u32),
    pub max_steps: usize,
    /// Multiplies hop delays into rewards; negative.
    pub reward_scale: f64,
    pub reward_mode: RewardMode,
    /// Tolerable per-hop delay in seconds.
    pub max_hop_delay: f64,
    /// Extra reward for getting stuck. `None` means one maximal-delay hop.
    pub dead_end_penalty: Option<f64>,
}

impl ScenarioSpec {
    pub fn new(network: UavNetwork, source: usize, dest: usize, radio: RadioParams) -> Self {
        let max_steps = 4 * network.len();
        Self {
            network,
            source,
            dest,
            radio,
            queue_range: (1, 5),
            max_steps,
            reward_scale: -100.0,
            reward_mode: RewardMode::Literal,
            max_hop_delay: f64::INFINITY,
            dead_end_penalty: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.network.len();
        for id in [self.source, self.dest] {
            if id >= n {
                return Err(Error::NodeOutOfRange(id));
            }
            if self.network.is_attacked(id) {
                return Err(Error::Config(format!("endpoint {id} is attacked")));
            }
        }
        if self.source == self.dest {
            return Err(Error::Config("source and destination must differ".into()));
        }
        if self.queue_range.0 > self.queue_range.1 {
            return Err(Error::Config("queue range must be ordered".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if !(self.reward_scale <= 0.0) {
            return Err(Error::Config("reward_scale must be non-positive".into()));
        }
        if !(self.max_hop_delay >= 0.0) {
            return Err(Error::Config("max_hop_delay must be non-negative".into()));
        }
        self.radio.validate()
    }

    /// Endpoints that attacks must leave alone.
    pub fn protected(&self) -> [usize; 2] {
        [self.source, self.dest]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RoutingState {
    pub current: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Continue,
    Arrived,
    DeadEnd,
    Truncated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: RoutingState,
    pub reward: f64,
    pub hop_delay: f64,
    pub status: StepStatus,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.status != StepStatus::Continue
    }

    /// Terminal transitions bootstrap from zero; truncation does not.
    pub fn terminal(&self) -> bool {
        matches!(self.status, StepStatus::Arrived | StepStatus::DeadEnd)
    }
}

/// Early termination that is not arrival at the destination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Abort {
    pub status: StepStatus,
    pub extra_reward: f64,
}

/// Dead end (no live neighbor) or step cap reached.
pub fn abort_rules(
    network: &UavNetwork,
    node: usize,
    steps_taken: usize,
    max_steps: usize,
    dead_end_penalty: f64,
) -> Option<Abort> {
    if network.degree(node) == 0 {
        Some(Abort {
            status: StepStatus::DeadEnd,
            extra_reward: dead_end_penalty,
        })
    } else if steps_taken >= max_steps {
        Some(Abort {
            status: StepStatus::Truncated,
            extra_reward: 0.0,
        })
    } else {
        None
    }
}

/// One routing environment instance.
#[derive(Clone, Debug)]
pub struct RoutingEnv<'a> {
    spec: &'a ScenarioSpec,
    queues: Vec<u32>,
    state: RoutingState,
    steps: usize,
    dead_end_penalty: f64,
}

impl<'a> RoutingEnv<'a> {
    pub fn new(spec: &'a ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            queues: vec![spec.queue_range.0; spec.network.len()],
            state: RoutingState {
                current: spec.source,
            },
            steps: 0,
            dead_end_penalty: 0.0,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        self.spec
    }

    pub fn queues(&self) -> &[u32] {
        &self.queues
    }

    pub fn state(&self) -> RoutingState {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dead_end_penalty(&self) -> f64 {
        self.dead_end_penalty
    }

    /// Starts an episode at the source with freshly sampled queues.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<RoutingState> {
        let spec = self.spec;
        if !spec.network.has_path(spec.source, spec.dest) {
            return Err(Error::Unreachable {
                origin: spec.source,
                dest: spec.dest,
            });
        }
        let (lo, hi) = spec.queue_range;
        for q in &mut self.queues {
            *q = rng.random_range(lo..=hi);
        }
        self.dead_end_penalty = match spec.dead_end_penalty {
            Some(p) => p,
            None => spec.reward_scale * self.worst_hop_delay()?,
        };
        self.state = RoutingState {
            current: spec.source,
        };
        self.steps = 0;
        Ok(self.state)
    }

    /// The tolerable hop delay when finite, else the slowest live hop under
    /// the current queues.
    fn worst_hop_delay(&self) -> Result<f64> {
        let spec = self.spec;
        if spec.max_hop_delay.is_finite() {
            return Ok(spec.max_hop_delay);
        }
        let net = &spec.network;
        let mut worst = 0.0f64;
        for (i, j) in net.adjacency().edges() {
            worst = worst
                .max(hop_delay_on(net, &spec.radio, &self.queues, i, j)?)
                .max(hop_delay_on(net, &spec.radio, &self.queues, j, i)?);
        }
        Ok(worst)
    }

    /// Live neighbors of `state`, ascending.
    pub fn valid_actions(&self, state: RoutingState) -> Vec<usize> {
        self.spec.network.neighbors(state.current)
    }

    /// Forwards the packet to `action`.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let spec = self.spec;
        let from = self.state.current;
        if !spec.network.is_linked(from, action) {
            return Err(Error::IllegalAction { from, to: action });
        }
        let hop_delay = hop_delay_on(&spec.network, &spec.radio, &self.queues, from, action)?;
        let arrived = action == spec.dest;
        let mut reward = match (spec.reward_mode, arrived) {
            (RewardMode::Literal, true) => 0.0,
            _ => spec.reward_scale * hop_delay,
        };
        self.steps += 1;
        self.state = RoutingState { current: action };
        let status = if arrived {
            StepStatus::Arrived
        } else if let Some(abort) = abort_rules(
            &spec.network,
            action,
            self.steps,
            spec.max_steps,
            self.dead_end_penalty,
        ) {
            reward += abort.extra_reward;
            abort.status
        } else {
            StepStatus::Continue
        };
        Ok(StepOutcome {
            next_state: self.state,
            reward,
            hop_delay,
            status,
        })
    }
}
