//! Routing recovery for UAV networks under deliberate node attacks.
//!
//! The crate models a static UAV swarm as a distance-gated graph, prices every
//! hop with a free-space link budget, ranks nodes by structural importance to
//! choose attack targets, and trains tabular learners (Q-learning, Sarsa,
//! Sarsa(λ)) to find and recover minimum-delay routes.
//!
//! ```
//! use uavroute::prelude::*;
//!
//! let net = generate_random_topology(&TopologyParams::default(), 7).unwrap();
//! assert!(net.is_connected());
//! let report = node_importance(&net);
//! assert_eq!(report.ranking.len(), net.len());
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod cli;
pub mod environment;
pub mod error;
pub mod experiment;
pub mod linkbudget;
pub mod nirm;
pub mod topology;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/topology.md")]
    pub mod topology {}
    #[doc = include_str!("../../../book/src/link-budget.md")]
    pub mod link_budget {}
    #[doc = include_str!("../../../book/src/importance.md")]
    pub mod importance {}
    #[doc = include_str!("../../../book/src/environment.md")]
    pub mod environment {}
    #[doc = include_str!("../../../book/src/learners.md")]
    pub mod learners {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
}

pub mod prelude {
    pub use crate::agents::{
        epsilon_greedy, greedy_policy_path, Agent, Algorithm, GreedyPath, LearnerConfig, QTable,
        TraceTable,
    };
    pub use crate::environment::{RewardMode, RoutingEnv, ScenarioSpec, StepStatus};
    pub use crate::linkbudget::{link_metrics, path_delay, path_loss_db, RadioParams};
    pub use crate::nirm::{node_importance, select_targets, AttackModel, ImportanceReport};
    pub use crate::topology::{
        euclidean_distance, generate_random_topology, Position, TopologyParams, UavNetwork,
    };
    pub use crate::{Error, Result};
}
